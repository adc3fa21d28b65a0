#include "evasion/text.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <map>

#include "evasion/error.hpp"

namespace evasion {

namespace {

bool is_ascii_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// NLTK English list.
const char* const kEnglishStopwords[] = {
    "i",       "me",       "my",      "myself",  "we",         "our",      "ours",    "ourselves",
    "you",     "your",     "yours",   "yourself", "yourselves", "he",      "him",     "his",
    "himself", "she",      "her",     "hers",    "herself",    "it",       "its",     "itself",
    "they",    "them",     "their",   "theirs",  "themselves", "what",     "which",   "who",
    "whom",    "this",     "that",    "these",   "those",      "am",       "is",      "are",
    "was",     "were",     "be",      "been",    "being",      "have",     "has",     "had",
    "having",  "do",       "does",    "did",     "doing",      "a",        "an",      "the",
    "and",     "but",      "if",      "or",      "because",    "as",       "until",   "while",
    "of",      "at",       "by",      "for",     "with",       "about",    "against", "between",
    "into",    "through",  "during",  "before",  "after",      "above",    "below",   "to",
    "from",    "up",       "down",    "in",      "out",        "on",       "off",     "over",
    "under",   "again",    "further", "then",    "once",       "here",     "there",   "when",
    "where",   "why",      "how",     "all",     "any",        "both",     "each",    "few",
    "more",    "most",     "other",   "some",    "such",       "no",       "nor",     "not",
    "only",    "own",      "same",    "so",      "than",       "too",      "very",    "s",
    "t",       "can",      "will",    "just",    "don",        "should",   "now",     "d",
    "ll",      "m",        "o",       "re",      "ve",         "y",        "ain",     "aren",
    "couldn",  "didn",     "doesn",   "hadn",    "hasn",       "haven",    "isn",     "ma",
    "mightn",  "mustn",    "needn",   "shan",    "shouldn",    "wasn",     "weren",   "won",
    "wouldn",
};

bool is_abbreviation_at(std::string_view text, std::size_t dot) {
  std::size_t start = dot;
  while (start > 0 && !is_space(text[start - 1])) --start;
  while (start < dot && !std::isalnum(static_cast<unsigned char>(text[start]))) ++start;
  const std::string_view word = text.substr(start, dot - start + 1);
  const auto& abbreviations = sentence_abbreviations();
  return std::find(abbreviations.begin(), abbreviations.end(), word) != abbreviations.end();
}

}  // namespace

std::vector<WordSpan> word_spans(std::string_view text) {
  std::vector<WordSpan> spans;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_ascii_alpha(text[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_ascii_alpha(text[j])) ++j;
    spans.push_back({i, j});
    i = j;
  }
  return spans;
}

std::vector<std::string> alpha_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  for (const auto& span : word_spans(text)) {
    tokens.push_back(to_lower(text.substr(span.begin, span.size())));
  }
  return tokens;
}

std::size_t whitespace_token_count(std::string_view text) {
  std::size_t count = 0;
  bool in_token = false;
  for (char c : text) {
    if (is_space(c)) {
      in_token = false;
    } else if (!in_token) {
      in_token = true;
      ++count;
    }
  }
  return count;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

bool is_alpha_word(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), is_ascii_alpha);
}

bool is_sentence_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

const std::vector<std::string>& sentence_abbreviations() {
  static const std::vector<std::string> list = {"Mr.",   "Mrs.", "Ms.",  "Dr.",  "Prof.", "Sr.",
                                                "Jr.",   "St.",  "U.S.", "e.g.", "i.e.",  "vs.",
                                                "Mt.",   "No."};
  return list;
}

std::vector<SentenceSpan> segment_sentences(std::string_view text) {
  std::vector<SentenceSpan> sentences;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    while (i < n && is_space(text[i])) ++i;
    if (i >= n) break;
    const std::size_t start = i;
    std::size_t end = n;
    bool closed = false;
    for (std::size_t j = start; j < n; ++j) {
      if (!is_sentence_terminator(text[j])) continue;
      if (j + 1 < n && !is_space(text[j + 1])) continue;
      if (text[j] == '.' && is_abbreviation_at(text, j)) continue;
      end = j + 1;
      closed = true;
      break;
    }
    if (!closed) {
      while (end > start && is_space(text[end - 1])) --end;
    }
    sentences.push_back({start, end});
    i = end;
  }
  return sentences;
}

const std::set<std::string>& stopwords(std::string_view set_id) {
  static const std::map<std::string, std::set<std::string>, std::less<>> sets = {
      {"english", std::set<std::string>(std::begin(kEnglishStopwords), std::end(kEnglishStopwords))},
      {"none", {}},
  };
  const auto it = sets.find(set_id);
  if (it == sets.end()) {
    throw InvalidArgument("unknown stopword set '" + std::string(set_id) + "'");
  }
  return it->second;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return mix64(seed ^ fnv1a64(label));
}

std::uint64_t SeededRng::below(std::uint64_t bound) {
  if (bound == 0) throw InvalidArgument("SeededRng::below requires a positive bound");
  // Rejection sampling over the largest multiple of bound.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % bound;
}

std::vector<std::size_t> seeded_sample_indices(std::size_t population, std::size_t count,
                                               std::uint64_t seed) {
  count = std::min(count, population);
  std::vector<std::size_t> pool(population);
  for (std::size_t i = 0; i < population; ++i) pool[i] = i;
  SeededRng rng(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(population - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

const char* to_string(ProviderErrorKind kind) {
  switch (kind) {
    case ProviderErrorKind::kTransport: return "transport";
    case ProviderErrorKind::kRefusal: return "refusal";
    case ProviderErrorKind::kEmpty: return "empty";
    case ProviderErrorKind::kContract: return "contract";
  }
  return "unknown";
}

ProviderErrorKind provider_error_kind_from_string(const std::string& s) {
  if (s == "transport") return ProviderErrorKind::kTransport;
  if (s == "refusal") return ProviderErrorKind::kRefusal;
  if (s == "empty") return ProviderErrorKind::kEmpty;
  return ProviderErrorKind::kContract;
}

}  // namespace evasion

#pragma once

// Tokenization, sentence segmentation and seeded randomness shared by every
// module. All of it is deterministic and platform independent.

#include <cstddef>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace evasion {

/// A maximal run of ASCII letters inside a text. Offsets are byte offsets.
struct WordSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past the last letter

  std::size_t size() const { return end - begin; }
};

/// Every maximal alphabetic run, in document order.
std::vector<WordSpan> word_spans(std::string_view text);

/// Lowercased alphabetic tokens, in document order.
std::vector<std::string> alpha_tokens(std::string_view text);

/// Number of whitespace-delimited tokens.
std::size_t whitespace_token_count(std::string_view text);

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool is_alpha_word(std::string_view s);

/// A sentence inside a text: [begin, end) covers the sentence including its
/// terminator. Bytes between sentences (whitespace) belong to no sentence.
struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// Splits on '.', '!' or '?' followed by whitespace or end of text, except
/// after a fixed list of abbreviations ("Mr.", "Dr.", "U.S.", ...). A text
/// without terminators is a single sentence. Whitespace-only text has none.
std::vector<SentenceSpan> segment_sentences(std::string_view text);

/// The abbreviation exception list used by segment_sentences.
const std::vector<std::string>& sentence_abbreviations();

bool is_sentence_terminator(char c);

/// Named stopword sets: "english" (default) and "none".
const std::set<std::string>& stopwords(std::string_view set_id = "english");

/// FNV-1a 64-bit.
std::uint64_t fnv1a64(std::string_view data);

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Seed for a named sub-task derived from a top-level seed.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

/// mt19937_64 wrapper with a portable bounded draw (std distributions are
/// implementation defined, which would break cross-platform reproducibility).
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

/// Fisher-Yates shuffle driven by SeededRng.
template <typename T>
void seeded_shuffle(std::vector<T>& items, SeededRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(items[i - 1], items[j]);
  }
}

/// `count` distinct indices drawn uniformly from [0, population), returned in
/// ascending order. count is clamped to population.
std::vector<std::size_t> seeded_sample_indices(std::size_t population, std::size_t count,
                                               std::uint64_t seed);

}  // namespace evasion

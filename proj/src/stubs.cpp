#include "evasion/stubs.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "evasion/error.hpp"
#include "evasion/text.hpp"

namespace evasion {

std::string EchoProvider::generate(const GenerationRequest& request) {
  return request.prompt.serialize();
}

ReplayProvider::ReplayProvider(std::vector<Entry> entries, std::vector<std::string> fallback)
    : entries_(std::move(entries)), fallback_(std::move(fallback)) {
  for (const auto& e : entries_) {
    if (e.texts.empty()) throw InvalidArgument("replay entry '" + e.contains + "' has no texts");
  }
}

ReplayProvider ReplayProvider::from_json(const nlohmann::json& j) {
  std::vector<Entry> entries;
  if (j.contains("entries")) {
    for (const auto& e : j.at("entries")) {
      entries.push_back({e.at("contains").get<std::string>(), e.at("texts").get<std::vector<std::string>>()});
    }
  }
  std::vector<std::string> fallback;
  if (j.contains("fallback")) fallback = j.at("fallback").get<std::vector<std::string>>();
  return ReplayProvider(std::move(entries), std::move(fallback));
}

ReplayProvider ReplayProvider::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open replay file " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string ReplayProvider::generate(const GenerationRequest& request) {
  const auto prompt = request.prompt.serialize();
  for (const auto& e : entries_) {
    if (prompt.find(e.contains) == std::string::npos) continue;
    const auto seed = static_cast<std::uint64_t>(request.seed.value_or(0));
    return e.texts[seed % e.texts.size()];
  }
  if (fallback_.empty()) throw ProviderError(ProviderErrorKind::kRefusal, "no replay entry matches the prompt");
  return fallback_[fnv1a64(prompt) % fallback_.size()];
}

HashedVocabularyFillMask::HashedVocabularyFillMask(std::vector<std::string> vocabulary, std::uint64_t seed)
    : seed_(seed) {
  std::set<std::string> unique;
  for (const auto& w : vocabulary) unique.insert(to_lower(trim(w)));
  unique.erase("");
  vocab_.assign(unique.begin(), unique.end());
}

HashedVocabularyFillMask HashedVocabularyFillMask::from_kb(const JsonSynonymKB& kb, std::uint64_t seed) {
  std::vector<std::string> vocab;
  for (const auto& [word, synonyms] : kb.entries()) {
    vocab.insert(vocab.end(), synonyms.begin(), synonyms.end());
  }
  return HashedVocabularyFillMask(std::move(vocab), seed);
}

std::vector<MaskCandidate> HashedVocabularyFillMask::predict(std::string_view masked_text, int top) {
  if (top < 1) throw ProviderError(ProviderErrorKind::kContract, "top must be positive");
  if (masked_text.find(kMaskToken) == std::string_view::npos) {
    throw ProviderError(ProviderErrorKind::kContract, "text has no mask token");
  }
  const auto context = fnv1a64(masked_text) ^ seed_;
  std::vector<MaskCandidate> out;
  out.reserve(vocab_.size());
  for (const auto& w : vocab_) {
    const auto h = mix64(context ^ fnv1a64(w));
    out.push_back({w, static_cast<double>(h >> 11) * 0x1.0p-53});
  }
  std::sort(out.begin(), out.end(), [](const MaskCandidate& a, const MaskCandidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.token < b.token;
  });
  if (out.size() > static_cast<std::size_t>(top)) out.resize(static_cast<std::size_t>(top));
  return out;
}

StubInfill::StubInfill()
    : StubInfill({"The day went on much like any other.",
                  "Some people would see it differently.",
                  "That was only part of the story.",
                  "Nobody expected what happened next.",
                  "It took a long time to understand why.",
                  "There are many reasons to think so.",
                  "Everyone had an opinion about it.",
                  "This matters more than it seems."}) {}

StubInfill::StubInfill(std::vector<std::string> sentences) : sentences_(std::move(sentences)) {
  if (sentences_.empty()) throw InvalidArgument("stub infill needs at least one sentence");
}

std::size_t count_span_tokens(std::string_view text) {
  std::size_t count = 0;
  for (auto pos = text.find(kSpanTokenPrefix); pos != std::string_view::npos;
       pos = text.find(kSpanTokenPrefix, pos + 1)) {
    ++count;
  }
  return count;
}

std::vector<std::string> StubInfill::infill(std::string_view text_with_spans, int span_count) {
  if (span_count < 0 || count_span_tokens(text_with_spans) != static_cast<std::size_t>(span_count)) {
    throw ProviderError(ProviderErrorKind::kContract, "span count does not match the placeholders");
  }
  const auto base = fnv1a64(text_with_spans);
  std::vector<std::string> fills;
  for (int j = 0; j < span_count; ++j) {
    fills.push_back(sentences_[mix64(base + static_cast<std::uint64_t>(j)) % sentences_.size()]);
  }
  return fills;
}

}  // namespace evasion

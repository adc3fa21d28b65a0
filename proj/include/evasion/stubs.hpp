#pragma once

// Deterministic offline backends. They stand in for the model services so
// the whole pipeline runs without network access.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "evasion/generation.hpp"
#include "evasion/perturbation.hpp"
#include "json.hpp"

namespace evasion {

/// Returns the serialized prompt.
class EchoProvider final : public GenerationProvider {
 public:
  std::string generate(const GenerationRequest& request) override;
};

/// Canned responses. The first entry whose `contains` substring occurs in
/// the serialized prompt answers with texts[seed % size]; otherwise a
/// fallback text is chosen by prompt hash. No match and no fallback is a
/// refusal.
///
/// File format: {"entries": [{"contains": str, "texts": [str]}],
///               "fallback": [str]}
class ReplayProvider final : public GenerationProvider {
 public:
  struct Entry {
    std::string contains;
    std::vector<std::string> texts;
  };

  ReplayProvider(std::vector<Entry> entries, std::vector<std::string> fallback);

  static ReplayProvider from_json(const nlohmann::json& j);
  static ReplayProvider from_file(const std::filesystem::path& path);

  std::string generate(const GenerationRequest& request) override;

 private:
  std::vector<Entry> entries_;
  std::vector<std::string> fallback_;
};

/// Wraps a callable; convenient for scripted failures.
class FunctionProvider final : public GenerationProvider {
 public:
  explicit FunctionProvider(std::function<std::string(const GenerationRequest&)> fn)
      : fn_(std::move(fn)) {}
  std::string generate(const GenerationRequest& request) override { return fn_(request); }

 private:
  std::function<std::string(const GenerationRequest&)> fn_;
};

/// Ranks a fixed vocabulary by a hash of (masked text, token, seed).
class HashedVocabularyFillMask final : public FillMaskProvider {
 public:
  explicit HashedVocabularyFillMask(std::vector<std::string> vocabulary, std::uint64_t seed = 0);

  /// Vocabulary made of every synonym listed in the KB.
  static HashedVocabularyFillMask from_kb(const JsonSynonymKB& kb, std::uint64_t seed = 0);

  std::vector<MaskCandidate> predict(std::string_view masked_text, int top) override;

 private:
  std::vector<std::string> vocab_;
  std::uint64_t seed_;
};

/// Picks each fill from a fixed sentence list by a hash of the text and
/// span index.
class StubInfill final : public InfillProvider {
 public:
  StubInfill();
  explicit StubInfill(std::vector<std::string> sentences);

  std::vector<std::string> infill(std::string_view text_with_spans, int span_count) override;

 private:
  std::vector<std::string> sentences_;
};

/// Number of "<extra_span_N>" placeholders in a text.
std::size_t count_span_tokens(std::string_view text);

}  // namespace evasion

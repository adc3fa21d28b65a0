#pragma once

// Detection-evasion perturbations: essay paraphrasing, sentence substitution
// (mask random sentences, infill them with a small generative model) and
// word substitution (replace the most frequent topical words with words that
// both a masked language model and a synonym knowledge base agree on).

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "evasion/batch.hpp"
#include "evasion/corpus.hpp"
#include "evasion/generation.hpp"
#include "json.hpp"

namespace evasion {

inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kSpanTokenPrefix = "<extra_span_";

/// "<extra_span_i>"
std::string span_token(std::size_t i);

struct MaskCandidate {
  std::string token;
  double score = 0.0;
};

/// Masked language model: predicts the single [MASK] token in a text.
/// Returns at most `top` candidates ordered by non-increasing score.
class FillMaskProvider {
 public:
  virtual ~FillMaskProvider() = default;
  virtual std::vector<MaskCandidate> predict(std::string_view masked_text, int top) = 0;
};

/// Span infilling model: returns exactly `span_count` replacements for the
/// <extra_span_i> placeholders, in order.
class InfillProvider {
 public:
  virtual ~InfillProvider() = default;
  virtual std::vector<std::string> infill(std::string_view text_with_spans, int span_count) = 0;
};

class SynonymKB {
 public:
  virtual ~SynonymKB() = default;
  /// Ordered synonyms; never contains the query word itself.
  virtual std::vector<std::string> lookup(std::string_view word) const = 0;
};

/// File-backed KB: a JSON object mapping word -> array of synonyms.
class JsonSynonymKB final : public SynonymKB {
 public:
  explicit JsonSynonymKB(std::map<std::string, std::vector<std::string>> entries);

  static JsonSynonymKB from_file(const std::filesystem::path& path);
  static JsonSynonymKB from_json(const nlohmann::json& j);

  std::vector<std::string> lookup(std::string_view word) const override;

  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

struct WordSubConfig {
  int k = 10;   // words to substitute
  int p = 20;   // top model predictions kept
  int n = 10;   // maximal synonyms taken from the KB
  std::string stopword_set_id = "english";
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::ordered_json to_json(const WordSubConfig& cfg);

enum class ReplacementSource { kIntersection, kKbEmptyFallback, kNoCandidate };

const char* to_string(ReplacementSource source);

struct PlanEntry {
  std::string original_word;
  std::optional<std::string> replacement;
  ReplacementSource source = ReplacementSource::kNoCandidate;
  std::size_t occurrences_replaced = 0;

  friend bool operator==(const PlanEntry&, const PlanEntry&) = default;
};

struct SubstitutionPlan {
  std::string essay_id;
  std::vector<PlanEntry> entries;
  WordSubConfig config;
};

nlohmann::ordered_json to_json(const SubstitutionPlan& plan);

/// Up to k distinct lowercased alphabetic tokens that occur in the essay,
/// excluding stopwords and tokens shorter than 3 letters, ranked by
/// (instruction count desc, essay count desc, word asc).
std::vector<std::string> top_frequency_words(std::string_view instruction, std::string_view essay,
                                             int k, const std::set<std::string>& stopwords);

/// Applies the word's case shape: first letter uppercase in `occurrence`
/// yields a capitalized replacement, otherwise lowercase.
std::string match_case(std::string_view occurrence, std::string_view replacement);

/// Replaces every whole-token, case-insensitive occurrence of `word`.
/// Returns the number of occurrences replaced.
std::size_t replace_word(std::string& text, std::string_view word, std::string_view replacement);

struct WordSubResult {
  EssayRecord essay;
  SubstitutionPlan plan;
};

WordSubResult word_substitute(const EssayRecord& essay, std::string_view instruction,
                              const WordSubConfig& cfg, FillMaskProvider& model, const SynonymKB& kb);

/// The essay text after substituting the first d planned words, for
/// d = 0..|plan|. Element d equals word_substitute(k = d).essay.text.
struct WordSubTrace {
  std::vector<std::string> texts;
  SubstitutionPlan plan;
};

WordSubTrace word_substitute_trace(const EssayRecord& essay, std::string_view instruction,
                                   const WordSubConfig& cfg, FillMaskProvider& model,
                                   const SynonymKB& kb);

/// max(1, round(ratio * sentence_count)) for ratio > 0, else 0; clamped to
/// sentence_count.
std::size_t selected_sentence_count(std::size_t sentence_count, double ratio);

/// Sentence indices (ascending) masked for a given (count, ratio, seed).
std::vector<std::size_t> select_sentences(std::size_t sentence_count, double ratio, std::uint64_t seed);

/// Collapses whitespace, keeps the first sentence and guarantees a closing
/// terminator so the replacement occupies exactly one sentence slot.
std::string normalize_fill(std::string_view fill);

EssayRecord sentence_substitute(const EssayRecord& essay, double ratio, std::uint64_t seed,
                                InfillProvider& model);

EssayRecord paraphrase_essay(const EssayRecord& essay, const TopicSpec& topic,
                             GenerationProvider& provider, const GenerationParams& params);

/// Author of a perturbed essay: the parent's generator, or
/// "perturbed:<method>" for a human parent.
std::string perturbed_author(const EssayRecord& parent, Origin method);

std::string perturbed_id(const EssayRecord& parent, Origin method);

enum class PerturbMethod { kWordSub, kSentenceSub, kParaphrase };

const char* to_string(PerturbMethod method);
PerturbMethod perturb_method_from_string(std::string_view s);

struct PerturbConfig {
  WordSubConfig word;
  double sentence_ratio = 0.2;
  std::uint64_t seed = 0;
  GenerationParams generation;
  std::size_t parallelism = 4;
  /// topic_id -> instruction text (the topic prompt), for word substitution.
  std::map<int, std::string> instruction_by_topic;
  std::vector<TopicSpec> topics;
};

/// Non-owning handles to the backends a method needs.
struct Providers {
  FillMaskProvider* fill_mask = nullptr;
  InfillProvider* infill = nullptr;
  GenerationProvider* chat = nullptr;
  const SynonymKB* kb = nullptr;
};

struct PerturbBatchResult {
  std::vector<EssayRecord> records;
  std::vector<SubstitutionPlan> plans;
  std::vector<ItemDiagnostic> diagnostics;
  BatchSummary summary;
};

/// Applies `method` to every record. One failing item never aborts the
/// batch. With an output, records are appended as they finish and plans are
/// written to "<out>.plans.json".
PerturbBatchResult perturb_batch(const std::vector<EssayRecord>& records, PerturbMethod method,
                                 const PerturbConfig& config, const Providers& providers,
                                 const std::optional<BatchOutput>& output = std::nullopt);

std::filesystem::path plans_path_for(const std::filesystem::path& out);

}  // namespace evasion

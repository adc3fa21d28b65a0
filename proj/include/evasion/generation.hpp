#pragma once

// Prompt construction for the writing and rewriting modes, and batch
// generation through an abstract text-in/text-out provider.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evasion/batch.hpp"
#include "evasion/corpus.hpp"
#include "json.hpp"

namespace evasion {

enum class PromptMode { kInstructionWriting, kRefined, kContinuation, kParaphrase };

const char* to_string(PromptMode mode);
PromptMode prompt_mode_from_string(std::string_view s);
Origin origin_of(PromptMode mode);

/// Instruction plus optional context. serialize() joins them with a blank line.
struct PromptInput {
  std::string instruction;
  std::optional<std::string> context;

  std::string serialize() const;

  friend bool operator==(const PromptInput&, const PromptInput&) = default;
};

struct GenerationRequest {
  PromptInput prompt;
  std::string model_name;
  double temperature = 1.0;
  int max_tokens = 1024;
  std::optional<std::int64_t> seed;

  void validate() const;
};

/// A chat-completion backend. Implementations throw ProviderError with kind
/// kTransport for network/5xx problems and kRefusal when the model declines.
class GenerationProvider {
 public:
  virtual ~GenerationProvider() = default;
  virtual std::string generate(const GenerationRequest& request) = 0;
};

/// Prompt wording. Placeholders: {prompt}, {source}, {essay}.
struct PromptTemplates {
  std::string argumentative_instruction;
  std::string narrative_instruction;
  std::string source_dependent_instruction;
  std::string refine;
  std::string continuation;
  std::string continuation_context;
  std::string paraphrase;

  static const PromptTemplates& defaults();
  /// Overrides any subset of the defaults from a JSON object.
  static PromptTemplates from_json(const nlohmann::json& j);
};

inline constexpr std::string_view kRefineSentence = "Polish and optimize the following essay:";
inline constexpr std::string_view kContinuationSentence =
    "Follow the first couple of sentences from an essay to write a follow-up paragraph:";
inline constexpr std::string_view kParaphraseSentence =
    "Please rewrite the essay and imitate its word using habits:";
inline constexpr std::string_view kParaphraseClosing = "Try to be different from the original text.";
inline constexpr std::string_view kRolePreamble = "Act as a middle school student";

/// Builds the prompt for `mode`. `essay` is required for every mode except
/// instruction writing.
PromptInput build_prompt(PromptMode mode, const TopicSpec& topic, const EssayRecord* essay,
                         const PromptTemplates& templates = PromptTemplates::defaults());

/// Replaces {essay}; a '.' right after the placeholder is dropped when the
/// essay already ends with a sentence terminator.
std::string interpolate_essay(std::string_view tmpl, std::string_view essay);

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
};

/// Calls the provider, retrying transport errors with exponential backoff.
/// Empty responses raise kEmpty. Thrown errors carry the attempt count.
std::string generate_with_retry(GenerationProvider& provider, const GenerationRequest& request,
                                const RetryPolicy& retry);

struct GenerationParams {
  std::string model_name = "model";
  double temperature = 1.0;
  int max_tokens = 1024;
  std::optional<std::int64_t> seed;
  int samples_per_topic = 1;
  std::size_t parallelism = 4;
  RetryPolicy retry;
  PromptTemplates templates = PromptTemplates::defaults();
};

nlohmann::ordered_json to_json(const GenerationParams& params);

struct GenerationResult {
  std::vector<EssayRecord> records;
  std::vector<ItemDiagnostic> diagnostics;
  BatchSummary summary;
};

/// Instruction writing: samples_per_topic essays for every topic.
GenerationResult generate_subset(const std::vector<TopicSpec>& topics, GenerationProvider& provider,
                                 const GenerationParams& params,
                                 const std::optional<BatchOutput>& output = std::nullopt);

/// Refined / continuation / paraphrase over human-written essays.
GenerationResult generate_subset(const std::vector<EssayRecord>& essays, PromptMode mode,
                                 const std::vector<TopicSpec>& topics, GenerationProvider& provider,
                                 const GenerationParams& params,
                                 const std::optional<BatchOutput>& output = std::nullopt);

std::string generated_id(const std::string& model, PromptMode mode, const std::string& source);

/// Sidecar manifest for a generation run.
nlohmann::ordered_json generation_manifest(PromptMode mode, const GenerationParams& params,
                                           const std::string& started_at, const BatchSummary& counts);

}  // namespace evasion

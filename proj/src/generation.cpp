#include "evasion/generation.hpp"

#include <cmath>
#include <thread>

#include "evasion/error.hpp"
#include "evasion/parallel.hpp"
#include "evasion/text.hpp"

namespace evasion {

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

const std::string& instruction_template(const PromptTemplates& t, EssayType type) {
  switch (type) {
    case EssayType::kArgumentative: return t.argumentative_instruction;
    case EssayType::kNarrative: return t.narrative_instruction;
    case EssayType::kSourceDependent: return t.source_dependent_instruction;
  }
  return t.argumentative_instruction;
}

struct WorkItem {
  std::string id;
  std::string label;
  GenerationRequest request;
  int topic_id = 0;
  std::optional<std::string> parent_id;
};

GenerationResult run_items(std::vector<WorkItem>& items, Origin origin, GenerationProvider& provider,
                           const GenerationParams& params, const std::optional<BatchOutput>& output,
                           std::vector<ItemDiagnostic> diagnostics, std::size_t pre_skipped) {
  IncrementalOutput sink(output);
  std::vector<std::optional<EssayRecord>> produced(items.size());
  std::vector<std::optional<ItemDiagnostic>> failures(items.size());
  std::vector<char> resumed(items.size(), 0);

  parallel_for(items.size(), params.parallelism, [&](std::size_t i) {
    const auto& item = items[i];
    if (auto prev = sink.existing(item.id)) {
      produced[i] = std::move(*prev);
      resumed[i] = 1;
      return;
    }
    try {
      EssayRecord record;
      record.id = item.id;
      record.topic_id = item.topic_id;
      record.text = generate_with_retry(provider, item.request, params.retry);
      record.author = params.model_name;
      record.origin = origin;
      record.parent_id = item.parent_id;
      record.validate();
      sink.append(record);
      produced[i] = std::move(record);
    } catch (const ProviderError& e) {
      failures[i] = ItemDiagnostic{item.label, to_string(e.kind()), e.what(), e.attempts()};
    } catch (const std::exception& e) {
      failures[i] = ItemDiagnostic{item.label, "error", e.what(), 1};
    }
  });

  GenerationResult result;
  result.diagnostics = std::move(diagnostics);
  result.summary.skipped = pre_skipped;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (produced[i]) {
      if (resumed[i]) {
        ++result.summary.skipped;
      } else {
        ++result.summary.ok;
      }
      result.records.push_back(std::move(*produced[i]));
    } else if (failures[i]) {
      if (failures[i]->kind == to_string(ProviderErrorKind::kRefusal)) {
        ++result.summary.skipped;
      } else {
        ++result.summary.failed;
      }
      result.diagnostics.push_back(std::move(*failures[i]));
    }
  }
  sink.finalize(result.records);
  return result;
}

GenerationRequest make_request(const GenerationParams& params, PromptInput prompt,
                               std::optional<std::int64_t> seed) {
  GenerationRequest request;
  request.prompt = std::move(prompt);
  request.model_name = params.model_name;
  request.temperature = params.temperature;
  request.max_tokens = params.max_tokens;
  request.seed = seed;
  request.validate();
  return request;
}

}  // namespace

const char* to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::kInstructionWriting: return "instruction_writing";
    case PromptMode::kRefined: return "refined";
    case PromptMode::kContinuation: return "continuation";
    case PromptMode::kParaphrase: return "paraphrase";
  }
  return "instruction_writing";
}

PromptMode prompt_mode_from_string(std::string_view s) {
  for (auto m : {PromptMode::kInstructionWriting, PromptMode::kRefined, PromptMode::kContinuation,
                 PromptMode::kParaphrase}) {
    if (s == to_string(m)) return m;
  }
  throw InvalidArgument("unknown generation mode '" + std::string(s) + "'");
}

Origin origin_of(PromptMode mode) {
  switch (mode) {
    case PromptMode::kInstructionWriting: return Origin::kInstructionWriting;
    case PromptMode::kRefined: return Origin::kRefined;
    case PromptMode::kContinuation: return Origin::kContinuation;
    case PromptMode::kParaphrase: return Origin::kParaphrase;
  }
  return Origin::kInstructionWriting;
}

std::string PromptInput::serialize() const {
  if (!context) return instruction;
  return instruction + "\n\n" + *context;
}

void GenerationRequest::validate() const {
  if (trim(prompt.instruction).empty()) throw InvalidArgument("generation request: empty instruction");
  if (model_name.empty()) throw InvalidArgument("generation request: empty model_name");
  if (!(temperature >= 0.0)) throw InvalidArgument("generation request: temperature must be >= 0");
  if (max_tokens < 64) throw InvalidArgument("generation request: max_tokens must be >= 64");
}

const PromptTemplates& PromptTemplates::defaults() {
  static const PromptTemplates t = [] {
    PromptTemplates d;
    d.argumentative_instruction =
        "Act as a middle school student, please read the below prompt and write an essay:\n\n{prompt}";
    d.narrative_instruction = d.argumentative_instruction;
    d.source_dependent_instruction =
        "Act as a middle school student, please read the source essay and write an essay based on "
        "given topic prompt.\n\nSource essay:\n\n{source}\n\nPrompt:\n\n{prompt}";
    d.refine = std::string(kRefineSentence) + " {essay}.";
    d.continuation = std::string(kContinuationSentence) + " {essay}.";
    d.continuation_context = "Besides, consider the essay writing prompt:\n\n{prompt}";
    d.paraphrase = std::string(kParaphraseSentence) + " {essay}. " + std::string(kParaphraseClosing);
    return d;
  }();
  return t;
}

PromptTemplates PromptTemplates::from_json(const nlohmann::json& j) {
  PromptTemplates t = defaults();
  auto take = [&](const char* key, std::string& field) {
    if (j.contains(key)) field = j.at(key).get<std::string>();
  };
  take("argumentative_instruction", t.argumentative_instruction);
  take("narrative_instruction", t.narrative_instruction);
  take("source_dependent_instruction", t.source_dependent_instruction);
  take("refine", t.refine);
  take("continuation", t.continuation);
  take("continuation_context", t.continuation_context);
  take("paraphrase", t.paraphrase);
  for (const auto* s : {&t.refine, &t.continuation, &t.paraphrase}) {
    if (s->find("{essay}") == std::string::npos) {
      throw InvalidArgument("prompt template lacks the {essay} placeholder: " + *s);
    }
  }
  return t;
}

std::string interpolate_essay(std::string_view tmpl, std::string_view essay) {
  const std::string body = trim(essay);
  std::string out(tmpl);
  const auto pos = out.find("{essay}");
  if (pos == std::string::npos) return out;
  std::size_t tail = pos + 7;
  if (tail < out.size() && out[tail] == '.' && !body.empty() && is_sentence_terminator(body.back())) {
    ++tail;
  }
  return out.substr(0, pos) + body + out.substr(tail);
}

PromptInput build_prompt(PromptMode mode, const TopicSpec& topic, const EssayRecord* essay,
                         const PromptTemplates& templates) {
  if (mode != PromptMode::kInstructionWriting && essay == nullptr) {
    throw InvalidArgument(std::string("build_prompt: mode ") + to_string(mode) + " requires an essay");
  }
  PromptInput prompt;
  switch (mode) {
    case PromptMode::kInstructionWriting: {
      std::string s = instruction_template(templates, topic.essay_type);
      replace_all(s, "{source}", topic.source_article.value_or(""));
      replace_all(s, "{prompt}", topic.prompt_text);
      prompt.instruction = std::move(s);
      break;
    }
    case PromptMode::kRefined:
      prompt.instruction = interpolate_essay(templates.refine, essay->text);
      break;
    case PromptMode::kContinuation: {
      prompt.instruction = interpolate_essay(templates.continuation, first_sentence(essay->text));
      std::string context = templates.continuation_context;
      replace_all(context, "{prompt}", topic.prompt_text);
      prompt.context = std::move(context);
      break;
    }
    case PromptMode::kParaphrase:
      prompt.instruction = interpolate_essay(templates.paraphrase, essay->text);
      break;
  }
  return prompt;
}

std::string generate_with_retry(GenerationProvider& provider, const GenerationRequest& request,
                                const RetryPolicy& retry) {
  const int max_attempts = std::max(1, retry.max_attempts);
  for (int attempt = 1;; ++attempt) {
    try {
      std::string text = provider.generate(request);
      if (trim(text).empty()) {
        throw ProviderError(ProviderErrorKind::kEmpty, "provider returned empty text", attempt);
      }
      return text;
    } catch (const ProviderError& e) {
      if (!e.retryable() || attempt >= max_attempts) {
        if (e.attempts() == attempt) throw;
        throw ProviderError(e.kind(), std::string(e.what()) + " (after " + std::to_string(attempt) +
                                          " attempt(s))",
                            attempt);
      }
      const auto delay = std::chrono::duration<double, std::milli>(
          static_cast<double>(retry.base_delay.count()) * std::pow(retry.multiplier, attempt - 1));
      std::this_thread::sleep_for(delay);
    }
  }
}

nlohmann::ordered_json to_json(const GenerationParams& p) {
  nlohmann::ordered_json j;
  j["model"] = p.model_name;
  j["temperature"] = p.temperature;
  j["max_tokens"] = p.max_tokens;
  j["seed"] = p.seed ? nlohmann::ordered_json(*p.seed) : nullptr;
  j["samples_per_topic"] = p.samples_per_topic;
  j["parallelism"] = p.parallelism;
  j["max_attempts"] = p.retry.max_attempts;
  return j;
}

std::string generated_id(const std::string& model, PromptMode mode, const std::string& source) {
  return model + ":" + to_string(mode) + ":" + source;
}

GenerationResult generate_subset(const std::vector<TopicSpec>& topics, GenerationProvider& provider,
                                 const GenerationParams& params,
                                 const std::optional<BatchOutput>& output) {
  if (params.samples_per_topic < 1) throw InvalidArgument("samples_per_topic must be >= 1");
  std::vector<WorkItem> items;
  for (const auto& topic : topics) {
    topic.validate();
    const auto prompt = build_prompt(PromptMode::kInstructionWriting, topic, nullptr, params.templates);
    for (int s = 0; s < params.samples_per_topic; ++s) {
      const std::string source = "t" + std::to_string(topic.topic_id) + "-" + std::to_string(s);
      std::optional<std::int64_t> seed;
      if (params.seed) seed = *params.seed + s;
      items.push_back({generated_id(params.model_name, PromptMode::kInstructionWriting, source),
                       "topic " + std::to_string(topic.topic_id) + " sample " + std::to_string(s),
                       make_request(params, prompt, seed), topic.topic_id, std::nullopt});
    }
  }
  return run_items(items, Origin::kInstructionWriting, provider, params, output, {}, 0);
}

GenerationResult generate_subset(const std::vector<EssayRecord>& essays, PromptMode mode,
                                 const std::vector<TopicSpec>& topics, GenerationProvider& provider,
                                 const GenerationParams& params,
                                 const std::optional<BatchOutput>& output) {
  if (mode == PromptMode::kInstructionWriting) {
    return generate_subset(topics, provider, params, output);
  }
  std::vector<WorkItem> items;
  std::vector<ItemDiagnostic> diagnostics;
  std::size_t skipped = 0;
  for (const auto& essay : essays) {
    if (!essay.is_human()) {
      diagnostics.push_back({essay.id, "precondition",
                             std::string(to_string(mode)) + " requires a human-written essay", 0});
      ++skipped;
      continue;
    }
    const auto& topic = find_topic(topics, essay.topic_id);
    items.push_back({generated_id(params.model_name, mode, essay.id), essay.id,
                     make_request(params, build_prompt(mode, topic, &essay, params.templates),
                                  params.seed),
                     essay.topic_id, essay.id});
  }
  return run_items(items, origin_of(mode), provider, params, output, std::move(diagnostics), skipped);
}

nlohmann::ordered_json generation_manifest(PromptMode mode, const GenerationParams& params,
                                           const std::string& started_at, const BatchSummary& counts) {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["model"] = params.model_name;
  j["params"] = to_json(params);
  j["started_at"] = started_at;
  nlohmann::ordered_json c;
  c["ok"] = counts.ok;
  c["failed"] = counts.failed;
  c["skipped"] = counts.skipped;
  j["counts"] = c;
  return j;
}

}  // namespace evasion

#include "evasion/perturbation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <mutex>
#include <unordered_map>

#include "evasion/error.hpp"
#include "evasion/parallel.hpp"
#include "evasion/text.hpp"

namespace evasion {

namespace {

std::vector<WordSpan> occurrences_of(std::string_view text, std::string_view word) {
  std::vector<WordSpan> out;
  for (const auto& span : word_spans(text)) {
    if (span.size() == word.size() && to_lower(text.substr(span.begin, span.size())) == word) {
      out.push_back(span);
    }
  }
  return out;
}

void check_fill_mask_response(const std::vector<MaskCandidate>& response, int top) {
  if (static_cast<int>(response.size()) > top) {
    throw ProviderError(ProviderErrorKind::kContract,
                        "fill-mask returned " + std::to_string(response.size()) +
                            " candidates for top=" + std::to_string(top));
  }
  for (std::size_t i = 1; i < response.size(); ++i) {
    if (response[i].score > response[i - 1].score) {
      throw ProviderError(ProviderErrorKind::kContract, "fill-mask scores are not non-increasing");
    }
  }
}

struct Ranked {
  std::string token;
  double score;
};

}  // namespace

std::string span_token(std::size_t i) {
  return std::string(kSpanTokenPrefix) + std::to_string(i) + ">";
}

JsonSynonymKB::JsonSynonymKB(std::map<std::string, std::vector<std::string>> entries) {
  for (auto& [word, synonyms] : entries) {
    const auto key = to_lower(word);
    auto& list = entries_[key];
    for (const auto& s : synonyms) {
      if (to_lower(s) == key) continue;
      if (std::find(list.begin(), list.end(), s) == list.end()) list.push_back(s);
    }
  }
}

JsonSynonymKB JsonSynonymKB::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("synonym KB must be a JSON object of word -> [synonyms]");
  std::map<std::string, std::vector<std::string>> entries;
  for (const auto& [word, value] : j.items()) {
    if (!value.is_array()) throw ParseError("synonym KB entry '" + word + "' is not an array");
    entries[word] = value.get<std::vector<std::string>>();
  }
  return JsonSynonymKB(std::move(entries));
}

JsonSynonymKB JsonSynonymKB::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open synonym KB " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> JsonSynonymKB::lookup(std::string_view word) const {
  const auto it = entries_.find(to_lower(word));
  if (it == entries_.end()) return {};
  return it->second;
}

void WordSubConfig::validate() const {
  if (k < 1) throw InvalidArgument("word substitution: k must be >= 1");
  if (p < 1) throw InvalidArgument("word substitution: p must be >= 1");
  if (n < 1) throw InvalidArgument("word substitution: n must be >= 1");
  stopwords(stopword_set_id);
}

nlohmann::ordered_json to_json(const WordSubConfig& cfg) {
  nlohmann::ordered_json j;
  j["k"] = cfg.k;
  j["p"] = cfg.p;
  j["n"] = cfg.n;
  j["stopword_set_id"] = cfg.stopword_set_id;
  j["seed"] = cfg.seed;
  return j;
}

const char* to_string(ReplacementSource source) {
  switch (source) {
    case ReplacementSource::kIntersection: return "intersection";
    case ReplacementSource::kKbEmptyFallback: return "kb_empty_fallback";
    case ReplacementSource::kNoCandidate: return "no_candidate";
  }
  return "no_candidate";
}

nlohmann::ordered_json to_json(const SubstitutionPlan& plan) {
  nlohmann::ordered_json j;
  j["essay_id"] = plan.essay_id;
  j["params"] = to_json(plan.config);
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (const auto& e : plan.entries) {
    nlohmann::ordered_json item;
    item["original_word"] = e.original_word;
    item["replacement"] = e.replacement ? nlohmann::ordered_json(*e.replacement) : nullptr;
    item["source"] = to_string(e.source);
    item["occurrences_replaced"] = e.occurrences_replaced;
    entries.push_back(std::move(item));
  }
  j["entries"] = std::move(entries);
  return j;
}

std::vector<std::string> top_frequency_words(std::string_view instruction, std::string_view essay,
                                             int k, const std::set<std::string>& stop) {
  std::map<std::string, std::pair<int, int>> counts;  // word -> (instruction, essay)
  for (const auto& t : alpha_tokens(essay)) ++counts[t].second;
  for (const auto& t : alpha_tokens(instruction)) {
    auto it = counts.find(t);
    if (it != counts.end()) ++it->second.first;
  }
  std::vector<std::pair<std::string, std::pair<int, int>>> eligible;
  for (const auto& [word, c] : counts) {
    if (word.size() < 3 || stop.count(word)) continue;
    eligible.emplace_back(word, c);
  }
  std::sort(eligible.begin(), eligible.end(), [](const auto& a, const auto& b) {
    if (a.second.first != b.second.first) return a.second.first > b.second.first;
    if (a.second.second != b.second.second) return a.second.second > b.second.second;
    return a.first < b.first;
  });
  std::vector<std::string> out;
  for (const auto& e : eligible) {
    if (static_cast<int>(out.size()) >= k) break;
    out.push_back(e.first);
  }
  return out;
}

std::string match_case(std::string_view occurrence, std::string_view replacement) {
  std::string out = to_lower(replacement);
  if (!occurrence.empty() && !out.empty() && std::isupper(static_cast<unsigned char>(occurrence[0]))) {
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  }
  return out;
}

std::size_t replace_word(std::string& text, std::string_view word, std::string_view replacement) {
  const auto spans = occurrences_of(text, to_lower(word));
  for (auto it = spans.rbegin(); it != spans.rend(); ++it) {
    const auto occurrence = text.substr(it->begin, it->size());
    text.replace(it->begin, it->size(), match_case(occurrence, replacement));
  }
  return spans.size();
}

WordSubTrace word_substitute_trace(const EssayRecord& essay, std::string_view instruction,
                                   const WordSubConfig& cfg, FillMaskProvider& model,
                                   const SynonymKB& kb) {
  cfg.validate();
  if (trim(essay.text).empty()) throw InvalidArgument("word substitution: essay text is empty");
  const auto& stop = stopwords(cfg.stopword_set_id);

  WordSubTrace trace;
  trace.plan.essay_id = essay.id;
  trace.plan.config = cfg;
  std::string text = essay.text;
  trace.texts.push_back(text);

  std::set<std::string> processed;
  const auto words = top_frequency_words(instruction, essay.text, cfg.k, stop);
  for (const auto& word : words) {
    auto acceptable = [&](const std::string& candidate) {
      return is_alpha_word(candidate) && candidate != word && !stop.count(candidate) &&
             !processed.count(candidate);
    };

    // Model candidates: one query per occurrence, scores averaged.
    const auto spans = occurrences_of(text, word);
    std::map<std::string, double> summed;
    for (const auto& span : spans) {
      std::string masked = text;
      masked.replace(span.begin, span.size(), kMaskToken);
      std::vector<MaskCandidate> response;
      try {
        response = model.predict(masked, cfg.p);
        check_fill_mask_response(response, cfg.p);
      } catch (const ProviderError& e) {
        throw ProviderError(e.kind(), "while substituting '" + word + "': " + e.what(), e.attempts());
      }
      std::map<std::string, double> best;
      for (const auto& c : response) {
        const auto token = to_lower(trim(c.token));
        if (!acceptable(token)) continue;
        auto [it, inserted] = best.emplace(token, c.score);
        if (!inserted) it->second = std::max(it->second, c.score);
      }
      for (const auto& [token, score] : best) summed[token] += score;
    }
    std::vector<Ranked> ranked;
    for (const auto& [token, total] : summed) {
      ranked.push_back({token, total / static_cast<double>(spans.size())});
    }
    std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.token < b.token;
    });
    if (static_cast<int>(ranked.size()) > cfg.p) ranked.resize(static_cast<std::size_t>(cfg.p));

    std::vector<std::string> synonyms;
    for (const auto& s : kb.lookup(word)) {
      const auto token = to_lower(trim(s));
      if (!acceptable(token)) continue;
      if (std::find(synonyms.begin(), synonyms.end(), token) != synonyms.end()) continue;
      synonyms.push_back(token);
      if (static_cast<int>(synonyms.size()) >= cfg.n) break;
    }

    PlanEntry entry;
    entry.original_word = word;
    if (synonyms.empty()) {
      if (!ranked.empty()) {
        entry.replacement = ranked.front().token;
        entry.source = ReplacementSource::kKbEmptyFallback;
      }
    } else {
      for (const auto& r : ranked) {
        if (std::find(synonyms.begin(), synonyms.end(), r.token) != synonyms.end()) {
          entry.replacement = r.token;
          entry.source = ReplacementSource::kIntersection;
          break;
        }
      }
    }
    if (entry.replacement) entry.occurrences_replaced = replace_word(text, word, *entry.replacement);
    processed.insert(word);
    trace.plan.entries.push_back(std::move(entry));
    trace.texts.push_back(text);
  }
  return trace;
}

std::string perturbed_author(const EssayRecord& parent, Origin method) {
  if (parent.is_human()) return std::string("perturbed:") + to_string(method);
  return parent.author;
}

std::string perturbed_id(const EssayRecord& parent, Origin method) {
  return parent.id + "+" + to_string(method);
}

WordSubResult word_substitute(const EssayRecord& essay, std::string_view instruction,
                              const WordSubConfig& cfg, FillMaskProvider& model, const SynonymKB& kb) {
  auto trace = word_substitute_trace(essay, instruction, cfg, model, kb);
  WordSubResult result;
  result.essay.id = perturbed_id(essay, Origin::kWordSub);
  result.essay.topic_id = essay.topic_id;
  result.essay.text = std::move(trace.texts.back());
  result.essay.author = perturbed_author(essay, Origin::kWordSub);
  result.essay.origin = Origin::kWordSub;
  result.essay.parent_id = essay.id;
  result.plan = std::move(trace.plan);
  return result;
}

std::size_t selected_sentence_count(std::size_t sentence_count, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("sentence ratio must be in [0,1]");
  if (ratio == 0.0 || sentence_count == 0) return 0;
  const auto rounded =
      static_cast<std::size_t>(std::floor(ratio * static_cast<double>(sentence_count) + 0.5));
  return std::min(sentence_count, std::max<std::size_t>(1, rounded));
}

std::vector<std::size_t> select_sentences(std::size_t sentence_count, double ratio, std::uint64_t seed) {
  return seeded_sample_indices(sentence_count, selected_sentence_count(sentence_count, ratio), seed);
}

std::string normalize_fill(std::string_view fill) {
  std::string collapsed;
  bool pending_space = false;
  for (char c : trim(fill)) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = true;
      continue;
    }
    if (pending_space) collapsed.push_back(' ');
    pending_space = false;
    collapsed.push_back(c);
  }
  if (collapsed.empty()) return collapsed;
  std::string sentence = first_sentence(collapsed);
  if (segment_sentences(sentence + " x").size() != 2) sentence.push_back('.');
  return sentence;
}

EssayRecord sentence_substitute(const EssayRecord& essay, double ratio, std::uint64_t seed,
                                InfillProvider& model) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("sentence ratio must be in [0,1]");
  const auto sentences = segment_sentences(essay.text);
  const auto selected = select_sentences(sentences.size(), ratio, seed);

  EssayRecord out;
  out.id = perturbed_id(essay, Origin::kSentenceSub);
  out.topic_id = essay.topic_id;
  out.author = perturbed_author(essay, Origin::kSentenceSub);
  out.origin = Origin::kSentenceSub;
  out.parent_id = essay.id;
  out.text = essay.text;
  if (selected.empty()) return out;

  std::string masked = essay.text;
  for (std::size_t j = selected.size(); j-- > 0;) {
    const auto& s = sentences[selected[j]];
    masked.replace(s.begin, s.end - s.begin, span_token(j));
  }
  const auto fills = model.infill(masked, static_cast<int>(selected.size()));
  if (fills.size() != selected.size()) {
    throw ProviderError(ProviderErrorKind::kContract,
                        "infill returned " + std::to_string(fills.size()) + " fills for " +
                            std::to_string(selected.size()) + " spans");
  }
  std::vector<std::string> normalized;
  for (const auto& f : fills) {
    normalized.push_back(normalize_fill(f));
    if (normalized.back().empty()) throw ProviderError(ProviderErrorKind::kContract, "infill returned an empty span");
  }
  for (std::size_t j = selected.size(); j-- > 0;) {
    const auto& s = sentences[selected[j]];
    out.text.replace(s.begin, s.end - s.begin, normalized[j]);
  }
  return out;
}

EssayRecord paraphrase_essay(const EssayRecord& essay, const TopicSpec& topic,
                             GenerationProvider& provider, const GenerationParams& params) {
  if (!essay.is_human()) {
    throw InvalidArgument("paraphrase requires a human-written essay, got '" + essay.id + "'");
  }
  GenerationRequest request;
  request.prompt = build_prompt(PromptMode::kParaphrase, topic, &essay, params.templates);
  request.model_name = params.model_name;
  request.temperature = params.temperature;
  request.max_tokens = params.max_tokens;
  request.seed = params.seed;
  request.validate();

  EssayRecord out;
  out.id = generated_id(params.model_name, PromptMode::kParaphrase, essay.id);
  out.topic_id = essay.topic_id;
  out.text = generate_with_retry(provider, request, params.retry);
  out.author = params.model_name;
  out.origin = Origin::kParaphrase;
  out.parent_id = essay.id;
  return out;
}

const char* to_string(PerturbMethod method) {
  switch (method) {
    case PerturbMethod::kWordSub: return "word_sub";
    case PerturbMethod::kSentenceSub: return "sentence_sub";
    case PerturbMethod::kParaphrase: return "paraphrase";
  }
  return "word_sub";
}

PerturbMethod perturb_method_from_string(std::string_view s) {
  for (auto m : {PerturbMethod::kWordSub, PerturbMethod::kSentenceSub, PerturbMethod::kParaphrase}) {
    if (s == to_string(m)) return m;
  }
  throw InvalidArgument("unknown perturbation method '" + std::string(s) + "'");
}

std::filesystem::path plans_path_for(const std::filesystem::path& out) {
  return std::filesystem::path(out.string() + ".plans.json");
}

PerturbBatchResult perturb_batch(const std::vector<EssayRecord>& records, PerturbMethod method,
                                 const PerturbConfig& config, const Providers& providers,
                                 const std::optional<BatchOutput>& output) {
  switch (method) {
    case PerturbMethod::kWordSub:
      if (!providers.fill_mask || !providers.kb) {
        throw InvalidArgument("word_sub needs a fill-mask provider and a synonym KB");
      }
      config.word.validate();
      break;
    case PerturbMethod::kSentenceSub:
      if (!providers.infill) throw InvalidArgument("sentence_sub needs an infill provider");
      selected_sentence_count(1, config.sentence_ratio);
      break;
    case PerturbMethod::kParaphrase:
      if (!providers.chat) throw InvalidArgument("paraphrase needs a chat provider");
      break;
  }

  std::map<std::string, nlohmann::ordered_json> previous_plans;
  if (output && output->resume && method == PerturbMethod::kWordSub) {
    std::ifstream in(plans_path_for(output->path));
    if (in) {
      try {
        for (const auto& p : nlohmann::ordered_json::parse(in)) {
          previous_plans[p.at("essay_id").get<std::string>()] = p;
        }
      } catch (const std::exception&) {
        previous_plans.clear();
      }
    }
  }

  IncrementalOutput sink(output);
  const std::size_t n = records.size();
  std::vector<std::optional<EssayRecord>> produced(n);
  std::vector<std::optional<SubstitutionPlan>> plans(n);
  std::vector<std::optional<ItemDiagnostic>> failures(n);
  std::vector<char> resumed(n, 0);

  auto output_id = [&](const EssayRecord& r) {
    if (method == PerturbMethod::kParaphrase) {
      return generated_id(config.generation.model_name, PromptMode::kParaphrase, r.id);
    }
    return perturbed_id(r, method == PerturbMethod::kWordSub ? Origin::kWordSub : Origin::kSentenceSub);
  };

  parallel_for(n, config.parallelism, [&](std::size_t i) {
    const auto& record = records[i];
    if (auto prev = sink.existing(output_id(record))) {
      produced[i] = std::move(*prev);
      resumed[i] = 1;
      return;
    }
    try {
      EssayRecord out;
      switch (method) {
        case PerturbMethod::kWordSub: {
          const auto it = config.instruction_by_topic.find(record.topic_id);
          if (it == config.instruction_by_topic.end()) {
            throw InvalidArgument("no instruction for topic " + std::to_string(record.topic_id));
          }
          auto result = word_substitute(record, it->second, config.word, *providers.fill_mask, *providers.kb);
          out = std::move(result.essay);
          plans[i] = std::move(result.plan);
          break;
        }
        case PerturbMethod::kSentenceSub:
          out = sentence_substitute(record, config.sentence_ratio,
                                    derive_seed(config.seed, "sentence_sub:" + record.id),
                                    *providers.infill);
          break;
        case PerturbMethod::kParaphrase: {
          if (!record.is_human()) {
            failures[i] = ItemDiagnostic{record.id, "precondition",
                                         "paraphrase requires a human-written essay", 0};
            return;
          }
          out = paraphrase_essay(record, find_topic(config.topics, record.topic_id), *providers.chat,
                                 config.generation);
          break;
        }
      }
      out.validate();
      sink.append(out);
      produced[i] = std::move(out);
    } catch (const ProviderError& e) {
      failures[i] = ItemDiagnostic{record.id, to_string(e.kind()), e.what(), e.attempts()};
    } catch (const std::exception& e) {
      failures[i] = ItemDiagnostic{record.id, "error", e.what(), 1};
    }
  });

  PerturbBatchResult result;
  nlohmann::ordered_json plan_file = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < n; ++i) {
    if (produced[i]) {
      if (resumed[i]) {
        ++result.summary.skipped;
        const auto it = previous_plans.find(records[i].id);
        if (it != previous_plans.end()) plan_file.push_back(it->second);
      } else {
        ++result.summary.ok;
      }
      if (plans[i]) {
        plan_file.push_back(to_json(*plans[i]));
        result.plans.push_back(std::move(*plans[i]));
      }
      result.records.push_back(std::move(*produced[i]));
    } else if (failures[i]) {
      const auto& kind = failures[i]->kind;
      if (kind == "refusal" || kind == "precondition") {
        ++result.summary.skipped;
      } else {
        ++result.summary.failed;
      }
      result.diagnostics.push_back(std::move(*failures[i]));
    }
  }
  sink.finalize(result.records);
  if (output && method == PerturbMethod::kWordSub) {
    std::ofstream out(plans_path_for(output->path), std::ios::binary | std::ios::trunc);
    out << plan_file.dump(2) << '\n';
  }
  return result;
}

}  // namespace evasion

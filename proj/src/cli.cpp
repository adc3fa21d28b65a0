#include "evasion/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "evasion/analysis.hpp"
#include "evasion/error.hpp"
#include "evasion/harness.hpp"
#include "evasion/http.hpp"
#include "evasion/stubs.hpp"
#include "evasion/text.hpp"

namespace fs = std::filesystem;

namespace evasion::cli {

SubsetSpec parse_subset(const std::string& spec) {
  const auto eq = spec.find('=');
  const auto slash = spec.find('/');
  if (eq == std::string::npos || slash == std::string::npos || slash > eq || slash == 0 ||
      slash + 1 == eq || eq + 1 == spec.size()) {
    throw InvalidArgument("subset must look like GENERATOR/PERTURBATION=PATH, got '" + spec + "'");
  }
  return {spec.substr(0, slash), spec.substr(slash + 1, eq - slash - 1), spec.substr(eq + 1)};
}

namespace {

std::pair<std::string, std::string> parse_named_url(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == spec.size()) {
    throw InvalidArgument("detector must look like NAME=URL, got '" + spec + "'");
  }
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

std::vector<int> parse_depths(const std::string& s) {
  std::vector<int> out;
  const auto range = s.find("..");
  try {
    if (range != std::string::npos) {
      const int lo = std::stoi(s.substr(0, range));
      const int hi = std::stoi(s.substr(range + 2));
      for (int d = lo; d <= hi; ++d) out.push_back(d);
    } else {
      std::stringstream in(s);
      std::string part;
      while (std::getline(in, part, ',')) out.push_back(std::stoi(trim(part)));
    }
  } catch (const std::logic_error&) {
    throw InvalidArgument("depths must be a comma list or LO..HI range, got '" + s + "'");
  }
  if (out.empty()) throw InvalidArgument("no depths given");
  return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

void apply_config_json(RunConfig& c, const nlohmann::json& j, const fs::path& base) {
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  auto path_of = [&](const char* key, std::optional<fs::path>& dst) {
    if (j.contains(key)) dst = resolve(base, j.at(key).get<std::string>());
  };
  try {
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("output_dir")) c.output_dir = resolve(base, j.at("output_dir").get<std::string>());
    path_of("corpus", c.corpus);
    path_of("topics", c.topics);
    path_of("output", c.output);
    path_of("kb", c.kb);
    path_of("replay", c.replay);
    path_of("human", c.human);
    path_of("eval", c.eval);
    if (j.contains("input")) {
      c.inputs.clear();
      const auto& in = j.at("input");
      if (in.is_array()) {
        for (const auto& p : in) c.inputs.push_back(resolve(base, p.get<std::string>()));
      } else {
        c.inputs.push_back(resolve(base, in.get<std::string>()));
      }
    }
    if (j.contains("subsets")) {
      c.subsets.clear();
      for (const auto& s : j.at("subsets")) {
        c.subsets.push_back({s.at("generator").get<std::string>(), s.at("perturbation").get<std::string>(),
                             resolve(base, s.at("path").get<std::string>())});
      }
    }
    if (j.contains("columns")) {
      const auto& m = j.at("columns");
      c.columns.id = m.value("id", c.columns.id);
      c.columns.topic = m.value("topic", c.columns.topic);
      c.columns.text = m.value("text", c.columns.text);
      c.columns.score = m.value("score", c.columns.score);
    }
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.threshold = j.value("threshold", c.threshold);
    c.failure_budget = j.value("failure_budget", c.failure_budget);
    if (j.contains("endpoints")) {
      const auto& e = j.at("endpoints");
      if (e.contains("chat")) c.endpoints.chat = e.at("chat").get<std::string>();
      if (e.contains("fill_mask")) c.endpoints.fill_mask = e.at("fill_mask").get<std::string>();
      if (e.contains("infill")) c.endpoints.infill = e.at("infill").get<std::string>();
      if (e.contains("score")) c.endpoints.score = e.at("score").get<std::string>();
      if (e.contains("detectors")) {
        c.endpoints.detectors = e.at("detectors").get<std::map<std::string, std::string>>();
      }
    }
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      if (g.contains("mode")) c.mode = prompt_mode_from_string(g.at("mode").get<std::string>());
      c.generation.model_name = g.value("model", c.generation.model_name);
      c.generation.temperature = g.value("temperature", c.generation.temperature);
      c.generation.max_tokens = g.value("max_tokens", c.generation.max_tokens);
      c.generation.samples_per_topic = g.value("samples_per_topic", c.generation.samples_per_topic);
      if (g.contains("max_attempts")) c.generation.retry.max_attempts = g.at("max_attempts").get<int>();
      if (g.contains("templates")) c.generation.templates = PromptTemplates::from_json(g.at("templates"));
    }
    if (j.contains("perturbation")) {
      const auto& p = j.at("perturbation");
      if (p.contains("method")) c.method = perturb_method_from_string(p.at("method").get<std::string>());
      c.word.k = p.value("k", c.word.k);
      c.word.p = p.value("p", c.word.p);
      c.word.n = p.value("n", c.word.n);
      c.word.stopword_set_id = p.value("stopwords", c.word.stopword_set_id);
      c.sentence_ratio = p.value("ratio", c.sentence_ratio);
    }
    if (j.contains("sweep") && j.at("sweep").contains("depths")) {
      c.depths = j.at("sweep").at("depths").get<std::vector<int>>();
    }
    if (j.contains("analysis")) {
      const auto& a = j.at("analysis");
      c.similarity_sample = a.value("sample", c.similarity_sample);
      if (a.contains("words")) c.words = a.at("words").get<std::vector<std::string>>();
    }
    if (j.contains("stubs")) {
      const auto& s = j.at("stubs");
      c.stub_detector = s.value("detector", c.stub_detector);
      c.stub_scorer = s.value("scorer", c.stub_scorer);
      c.stub_fill_mask = s.value("fill_mask", c.stub_fill_mask);
      c.stub_infill = s.value("infill", c.stub_infill);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

void apply_environment(RunConfig& c) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = env("EVASION_CHAT_URL")) c.endpoints.chat = v;
  if (auto v = env("EVASION_FILL_MASK_URL")) c.endpoints.fill_mask = v;
  if (auto v = env("EVASION_INFILL_URL")) c.endpoints.infill = v;
  if (auto v = env("EVASION_SCORE_URL")) c.endpoints.score = v;
  if (auto v = env("EVASION_DETECTORS")) {
    c.endpoints.detectors.clear();
    std::stringstream in(*v);
    std::string part;
    while (std::getline(in, part, ',')) {
      if (trim(part).empty()) continue;
      c.endpoints.detectors.insert(parse_named_url(trim(part)));
    }
  }
  if (auto v = env("EVASION_API_TOKEN")) c.endpoints.token = v;
}

nlohmann::ordered_json to_json(const RunConfig& c) {
  auto opt_path = [](const std::optional<fs::path>& p) {
    return p ? nlohmann::ordered_json(p->generic_string()) : nlohmann::ordered_json(nullptr);
  };
  auto opt_str = [](const std::optional<std::string>& s) {
    return s ? nlohmann::ordered_json(*s) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir.generic_string();
  j["corpus"] = opt_path(c.corpus);
  j["topics"] = opt_path(c.topics);
  auto& inputs = j["input"] = nlohmann::ordered_json::array();
  for (const auto& p : c.inputs) inputs.push_back(p.generic_string());
  j["output"] = opt_path(c.output);
  j["kb"] = opt_path(c.kb);
  j["replay"] = opt_path(c.replay);
  j["human"] = opt_path(c.human);
  j["eval"] = opt_path(c.eval);
  auto& subsets = j["subsets"] = nlohmann::ordered_json::array();
  for (const auto& s : c.subsets) {
    subsets.push_back({{"generator", s.generator}, {"perturbation", s.perturbation}, {"path", s.path.generic_string()}});
  }
  j["columns"] = {{"id", c.columns.id}, {"topic", c.columns.topic}, {"text", c.columns.text}, {"score", c.columns.score}};
  j["split_ratio"] = c.split_ratio;
  j["parallelism"] = c.parallelism;
  j["threshold"] = c.threshold;
  j["failure_budget"] = c.failure_budget;
  nlohmann::ordered_json e;
  e["chat"] = opt_str(c.endpoints.chat);
  e["fill_mask"] = opt_str(c.endpoints.fill_mask);
  e["infill"] = opt_str(c.endpoints.infill);
  e["score"] = opt_str(c.endpoints.score);
  e["detectors"] = c.endpoints.detectors;
  e["token_set"] = c.endpoints.token.has_value();
  j["endpoints"] = e;
  j["generation"] = to_json(c.generation);
  j["generation"]["mode"] = to_string(c.mode);
  j["perturbation"] = {{"method", to_string(c.method)}, {"word", to_json(c.word)}, {"ratio", c.sentence_ratio}};
  j["sweep"] = {{"depths", c.depths}};
  j["analysis"] = {{"sample", c.similarity_sample}, {"words", c.words}};
  j["stubs"] = {{"detector", c.stub_detector}, {"scorer", c.stub_scorer}, {"fill_mask", c.stub_fill_mask},
                {"infill", c.stub_infill}};
  j["resume"] = c.resume;
  j["dry_run"] = c.dry_run;
  return j;
}

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
  }
  fs::rename(tmp, path);
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void require_file(const std::optional<fs::path>& p, const std::string& what, const std::string& hint) {
  if (!p) throw InvalidArgument(what + " is required (" + hint + ")");
  if (!fs::exists(*p)) throw InvalidArgument(what + " not found: " + p->string());
}

/// State of one subcommand invocation.
struct Run {
  std::string command;
  std::string tag;  // distinguishes manifests of one command run in several modes
  RunConfig config;
  std::string started_at;
  std::map<std::string, std::uint64_t> seeds;
  BatchSummary summary;
  std::vector<std::string> artifacts;
  std::vector<std::string> planned;
  nlohmann::ordered_json diagnostics = nlohmann::ordered_json::array();
  std::vector<std::string> warnings;
  std::string status = "ok";
  std::string error;

  std::uint64_t seed(const std::string& label) {
    const auto s = derive_seed(config.seed, label);
    seeds[label] = s;
    return s;
  }

  fs::path out_path(const std::string& name) const { return config.output_dir / name; }

  void artifact(const fs::path& p, const std::string& content) {
    write_text(p, content);
    artifacts.push_back(p.generic_string());
  }

  void add_diagnostics(const std::vector<ItemDiagnostic>& ds) {
    for (const auto& d : ds) diagnostics.push_back(to_json(d));
  }

  fs::path topics_path() const {
    return config.topics ? *config.topics : config.output_dir / "topics.json";
  }

  std::vector<TopicSpec> load_topics_checked() const {
    const auto p = topics_path();
    if (!fs::exists(p)) {
      throw InvalidArgument("topics file not found: " + p.string() + " (pass --topics or run ingest first)");
    }
    return load_topics(p);
  }

  fs::path single_input(const fs::path& fallback, const std::string& what) const {
    if (config.inputs.size() > 1) throw InvalidArgument(command + " takes a single --input");
    const auto p = config.inputs.empty() ? fallback : config.inputs.front();
    if (!fs::exists(p)) throw InvalidArgument(what + " not found: " + p.string());
    return p;
  }

  void write_manifest() const {
    nlohmann::ordered_json m;
    m["command"] = command;
    m["status"] = status;
    if (!error.empty()) m["error"] = error;
    m["started_at"] = started_at;
    m["finished_at"] = utc_now();
    m["seed"] = config.seed;
    m["derived_seeds"] = seeds;
    m["config"] = to_json(config);
    m["summary"] = to_json(summary);
    m["planned"] = planned;
    m["artifacts"] = artifacts;
    m["warnings"] = warnings;
    m["diagnostics"] = diagnostics;
    const auto name = tag.empty() ? command : command + "." + tag;
    write_text(config.output_dir / ("manifest." + name + ".json"), m.dump(2) + "\n");
  }
};

Endpoint endpoint_for(const RunConfig& c, const std::string& url) {
  Endpoint e;
  e.url = url;
  e.bearer_token = c.endpoints.token;
  return e;
}

std::map<int, std::string> instructions(const std::vector<TopicSpec>& topics) {
  std::map<int, std::string> out;
  for (const auto& t : topics) out[t.topic_id] = t.prompt_text;
  return out;
}

std::set<std::string> topic_vocabulary(const std::vector<TopicSpec>& topics) {
  std::vector<std::string> texts;
  for (const auto& t : topics) texts.push_back(t.prompt_text);
  return instruction_vocabulary(texts);
}

/// Owns whichever backends a command resolved to.
struct Backends {
  std::unique_ptr<GenerationProvider> chat;
  std::unique_ptr<FillMaskProvider> fill_mask;
  std::unique_ptr<InfillProvider> infill;
  std::unique_ptr<JsonSynonymKB> kb;
  std::vector<std::unique_ptr<DetectorClient>> detectors;
  std::unique_ptr<ScorerClient> scorer;
};

void resolve_chat(Run& run, Backends& b) {
  const auto& c = run.config;
  if (c.replay) {
    require_file(c.replay, "replay file", "--replay");
    b.chat = std::make_unique<ReplayProvider>(ReplayProvider::from_file(*c.replay));
  } else if (c.endpoints.chat) {
    b.chat = std::make_unique<HttpChatProvider>(endpoint_for(c, *c.endpoints.chat));
  } else {
    throw InvalidArgument(run.command +
                          " needs a chat backend: pass --chat-url URL, set EVASION_CHAT_URL or "
                          "endpoints.chat, or pass --replay FILE for offline replay");
  }
}

void resolve_kb(Run& run, Backends& b) {
  require_file(run.config.kb, "synonym KB", "--kb FILE");
  b.kb = std::make_unique<JsonSynonymKB>(JsonSynonymKB::from_file(*run.config.kb));
}

void resolve_fill_mask(Run& run, Backends& b) {
  const auto& c = run.config;
  if (c.stub_fill_mask) {
    b.fill_mask = std::make_unique<HashedVocabularyFillMask>(
        HashedVocabularyFillMask::from_kb(*b.kb, run.seed("fill_mask_stub")));
  } else if (c.endpoints.fill_mask) {
    b.fill_mask = std::make_unique<HttpFillMask>(endpoint_for(c, *c.endpoints.fill_mask));
  } else {
    throw InvalidArgument(run.command +
                          " needs a fill-mask backend: pass --fill-mask-url URL, set "
                          "EVASION_FILL_MASK_URL or endpoints.fill_mask, or pass --stub-fill-mask");
  }
}

void resolve_infill(Run& run, Backends& b) {
  const auto& c = run.config;
  if (c.stub_infill) {
    b.infill = std::make_unique<StubInfill>();
  } else if (c.endpoints.infill) {
    b.infill = std::make_unique<HttpInfill>(endpoint_for(c, *c.endpoints.infill));
  } else {
    throw InvalidArgument(run.command +
                          " needs an infill backend: pass --infill-url URL, set EVASION_INFILL_URL "
                          "or endpoints.infill, or pass --stub-infill");
  }
}

void require_detector(const Run& run) {
  const auto& c = run.config;
  if (!c.stub_detector && c.endpoints.detectors.empty()) {
    throw InvalidArgument(run.command +
                          " needs a detector: pass --detector NAME=URL, set EVASION_DETECTORS or "
                          "endpoints.detectors, or pass --stub-detector for the offline "
                          "topical-overlap detector");
  }
}

void resolve_detectors(Run& run, Backends& b, const std::vector<TopicSpec>& topics) {
  const auto& c = run.config;
  require_detector(run);
  if (c.stub_detector) b.detectors.push_back(topical_overlap_stub_detector(topic_vocabulary(topics)));
  for (const auto& [name, url] : c.endpoints.detectors) {
    b.detectors.push_back(std::make_unique<HttpDetector>(name, endpoint_for(c, url)));
  }
}

void resolve_scorer(Run& run, Backends& b) {
  const auto& c = run.config;
  if (c.stub_scorer) {
    b.scorer = std::make_unique<LexicalDiversityScorer>();
  } else if (c.endpoints.score) {
    b.scorer = std::make_unique<HttpScorer>("scorer", endpoint_for(c, *c.endpoints.score));
  } else {
    run.warnings.push_back("no scorer configured; the quality column is left empty");
  }
}

// A refused item produced nothing, so the run is partial even though the
// item is counted as skipped. Resumed and precondition skips are not.
void set_batch_status(Run& run) {
  bool refused = false;
  for (const auto& d : run.diagnostics) refused = refused || d.value("kind", "") == "refusal";
  if (run.summary.failed == 0 && !refused) return;
  run.status = run.summary.ok == 0 && run.summary.skipped == 0 ? "error" : "partial";
}

void cmd_ingest(Run& run) {
  auto& c = run.config;
  require_file(c.corpus, "corpus TSV", "--corpus FILE");
  if (!c.topics) throw InvalidArgument("topics file is required (--topics FILE)");
  const auto topics = run.load_topics_checked();
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw InvalidArgument("split ratio must be in (0,1)");
  const auto ingested = ingest_asap(*c.corpus, c.columns, topics);
  for (const auto& d : ingested.diagnostics) {
    run.diagnostics.push_back({{"line", d.line}, {"message", d.message}});
  }
  const auto parts = split(ingested.records, c.split_ratio, run.seed("split"));

  run.planned = {"corpus.jsonl", "train.jsonl", "test.jsonl", "topics.json", "split.json"};
  run.summary.ok = ingested.records.size();
  run.summary.skipped = ingested.diagnostics.size();
  if (c.dry_run) return;

  std::map<std::string, const EssayRecord*> by_id;
  for (const auto& r : ingested.records) by_id[r.id] = &r;
  auto subset = [&](const std::vector<std::string>& ids) {
    std::vector<EssayRecord> out;
    for (const auto& id : ids) out.push_back(*by_id.at(id));
    return out;
  };
  fs::create_directories(c.output_dir);
  auto save = [&](const std::string& name, const std::vector<EssayRecord>& records) {
    write_jsonl(run.out_path(name), records);
    run.artifacts.push_back(run.out_path(name).generic_string());
  };
  save("corpus.jsonl", ingested.records);
  save("train.jsonl", subset(parts.train));
  save("test.jsonl", subset(parts.test));
  save_topics(run.out_path("topics.json"), topics);
  run.artifacts.push_back(run.out_path("topics.json").generic_string());
  nlohmann::ordered_json sj;
  sj["ratio"] = parts.ratio;
  sj["seed"] = parts.seed;
  sj["train"] = parts.train;
  sj["test"] = parts.test;
  run.artifact(run.out_path("split.json"), sj.dump(2) + "\n");
}

void cmd_generate(Run& run) {
  auto& c = run.config;
  const auto topics = run.load_topics_checked();
  run.tag = to_string(c.mode);
  Backends b;
  resolve_chat(run, b);
  c.generation.seed = static_cast<std::int64_t>(run.seed("generate") & 0x7fffffffULL);
  c.generation.parallelism = c.parallelism;

  std::vector<EssayRecord> essays;
  if (c.mode != PromptMode::kInstructionWriting) {
    essays = read_jsonl(run.single_input(c.output_dir / "test.jsonl", "input essays"));
  }
  const auto out = c.output ? *c.output
                            : run.out_path("generated." + c.generation.model_name + "." + to_string(c.mode) + ".jsonl");
  run.planned.push_back(out.generic_string());
  if (c.dry_run) {
    run.summary.ok = c.mode == PromptMode::kInstructionWriting
                         ? topics.size() * static_cast<std::size_t>(std::max(0, c.generation.samples_per_topic))
                         : essays.size();
    return;
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const BatchOutput sink{out, c.resume};
  const auto result = c.mode == PromptMode::kInstructionWriting
                          ? generate_subset(topics, *b.chat, c.generation, sink)
                          : generate_subset(essays, c.mode, topics, *b.chat, c.generation, sink);
  run.summary = result.summary;
  run.add_diagnostics(result.diagnostics);
  run.artifacts.push_back(out.generic_string());
  write_text(out.string() + ".manifest.json",
             generation_manifest(c.mode, c.generation, run.started_at, result.summary).dump(2) + "\n");
  set_batch_status(run);
}

void cmd_perturb(Run& run) {
  auto& c = run.config;
  const auto input = run.single_input(c.output_dir / "test.jsonl", "input essays");
  const auto records = read_jsonl(input);
  run.tag = to_string(c.method);
  Backends b;
  Providers providers;
  PerturbConfig pc;
  pc.word = c.word;
  pc.sentence_ratio = c.sentence_ratio;
  pc.parallelism = c.parallelism;
  pc.generation = c.generation;
  pc.generation.parallelism = c.parallelism;

  switch (c.method) {
    case PerturbMethod::kWordSub: {
      pc.topics = run.load_topics_checked();
      pc.instruction_by_topic = instructions(pc.topics);
      resolve_kb(run, b);
      resolve_fill_mask(run, b);
      providers.kb = b.kb.get();
      providers.fill_mask = b.fill_mask.get();
      pc.word.seed = run.seed("word_sub");
      break;
    }
    case PerturbMethod::kSentenceSub:
      resolve_infill(run, b);
      providers.infill = b.infill.get();
      pc.seed = run.seed("sentence_sub");
      break;
    case PerturbMethod::kParaphrase:
      pc.topics = run.load_topics_checked();
      resolve_chat(run, b);
      providers.chat = b.chat.get();
      pc.generation.seed = static_cast<std::int64_t>(run.seed("paraphrase") & 0x7fffffffULL);
      break;
  }

  const auto out = c.output ? *c.output
                            : run.out_path(input.stem().string() + "." + to_string(c.method) + ".jsonl");
  run.planned.push_back(out.generic_string());
  if (c.method == PerturbMethod::kWordSub) run.planned.push_back(plans_path_for(out).generic_string());
  if (c.dry_run) {
    run.summary.ok = records.size();
    return;
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const auto result = perturb_batch(records, c.method, pc, providers, BatchOutput{out, c.resume});
  run.summary = result.summary;
  run.add_diagnostics(result.diagnostics);
  run.artifacts.push_back(out.generic_string());
  if (c.method == PerturbMethod::kWordSub) run.artifacts.push_back(plans_path_for(out).generic_string());
  set_batch_status(run);
}

void cmd_analyze(Run& run) {
  auto& c = run.config;
  if (c.inputs.empty()) throw InvalidArgument("analyze needs at least one --input FILE");
  std::vector<EssayRecord> essays;
  for (const auto& p : c.inputs) {
    if (!fs::exists(p)) throw InvalidArgument("input not found: " + p.string());
    auto part = read_jsonl(p);
    essays.insert(essays.end(), part.begin(), part.end());
  }
  run.planned = {"similarity_histogram.csv", "similarity_summary.json"};
  if (!c.words.empty()) run.planned.push_back("topical_words.json");
  run.summary.ok = essays.size();
  if (c.dry_run) return;

  const auto report = pairwise_similarity_stats(essays, c.similarity_sample, run.seed("analyze"));
  for (const auto& d : report.diagnostics) run.warnings.push_back(d);
  run.artifact(run.out_path("similarity_histogram.csv"), histogram_csv(report));
  run.artifact(run.out_path("similarity_summary.json"), summary_json(report).dump(2) + "\n");

  if (!c.words.empty()) {
    std::map<std::string, std::vector<std::string>> by_group;
    for (const auto& e : essays) by_group[similarity_group(e)].push_back(e.text);
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& w : c.words) {
      nlohmann::ordered_json g = nlohmann::ordered_json::object();
      for (const auto& [group, texts] : by_group) g[group] = topical_word_frequency(texts, w);
      j[to_lower(w)] = g;
    }
    run.artifact(run.out_path("topical_words.json"), j.dump(2) + "\n");
  }
}

std::vector<EssayRecord> read_human_subset(const fs::path& path) {
  auto records = read_jsonl(path);
  for (const auto& r : records) {
    if (!r.is_human()) throw InvalidArgument("human subset contains non-human essay " + r.id);
  }
  return records;
}

void cmd_evaluate(Run& run) {
  auto& c = run.config;
  require_detector(run);
  const auto topics = run.load_topics_checked();
  Backends b;
  resolve_detectors(run, b, topics);
  resolve_scorer(run, b);
  const auto human_path = c.human ? *c.human : c.output_dir / "test.jsonl";
  if (!fs::exists(human_path)) throw InvalidArgument("human subset not found: " + human_path.string());
  const auto human = read_human_subset(human_path);

  std::map<SubsetKey, std::vector<EssayRecord>> subsets;
  for (const auto& s : c.subsets) {
    if (!fs::exists(s.path)) throw InvalidArgument("subset file not found: " + s.path.string());
    auto& dst = subsets[{s.generator, s.perturbation}];
    if (!dst.empty()) throw InvalidArgument("subset " + s.generator + "/" + s.perturbation + " given twice");
    dst = read_jsonl(s.path);
  }
  const auto out = c.output ? *c.output : run.out_path("eval.json");
  run.planned.push_back(out.generic_string());
  if (c.dry_run) {
    run.summary.ok = subsets.size() * b.detectors.size();
    return;
  }

  std::vector<DetectorClient*> detectors;
  for (auto& d : b.detectors) detectors.push_back(d.get());
  ResponseCache cache;
  EvalOptions options;
  options.threshold = c.threshold;
  options.failure_budget = c.failure_budget;
  options.parallelism = c.parallelism;
  options.cache = &cache;
  const auto report = evaluate_matrix(detectors, b.scorer.get(), subsets, human, options);
  run.add_diagnostics(report.diagnostics);
  for (const auto& w : report.warnings) run.warnings.push_back(w);
  run.summary.ok = report.rows.size();
  run.summary.failed = report.failed_rows;
  run.artifact(out, report_json(report, c.threshold).dump(2) + "\n");
  set_batch_status(run);
}

void cmd_sweep(Run& run) {
  auto& c = run.config;
  require_detector(run);
  const auto topics = run.load_topics_checked();
  const auto essays = read_jsonl(run.single_input(c.output_dir / "test.jsonl", "input essays"));
  Backends b;
  resolve_kb(run, b);
  resolve_fill_mask(run, b);
  resolve_detectors(run, b, topics);
  resolve_scorer(run, b);

  SweepConfig sc;
  sc.depths = c.depths;
  sc.word = c.word;
  sc.word.seed = run.seed("sweep");
  sc.eval.threshold = c.threshold;
  sc.eval.failure_budget = c.failure_budget;
  sc.eval.parallelism = c.parallelism;
  for (const auto& d : b.detectors) run.planned.push_back("sweep." + d->name() + ".csv");
  run.planned.push_back("sweep.json");
  if (c.dry_run) {
    run.summary.ok = c.depths.size() * b.detectors.size();
    return;
  }

  ResponseCache cache;
  sc.eval.cache = &cache;
  const auto instr = instructions(topics);
  nlohmann::ordered_json all = nlohmann::ordered_json::object();
  for (const auto& d : b.detectors) {
    const auto result = depth_sweep(essays, instr, sc, *b.fill_mask, *b.kb, *d, b.scorer.get());
    for (const auto& msg : result.diagnostics) run.warnings.push_back(d->name() + ": " + msg);
    run.summary.ok += result.points.size();
    run.summary.failed += c.depths.size() - result.points.size();
    run.artifact(run.out_path("sweep." + d->name() + ".csv"), sweep_csv(result.points));
    nlohmann::ordered_json points = nlohmann::ordered_json::array();
    for (const auto& p : result.points) {
      nlohmann::ordered_json pj;
      pj["depth"] = p.depth;
      pj["acc_ai"] = p.acc_ai;
      pj["mean_quality"] = p.mean_quality ? nlohmann::ordered_json(*p.mean_quality) : nlohmann::ordered_json(nullptr);
      nlohmann::ordered_json per = nlohmann::ordered_json::object();
      for (std::size_t i = 0; i < p.p_ai.size(); ++i) per[essays[i].id] = p.p_ai[i];
      pj["p_ai"] = per;
      points.push_back(pj);
    }
    all[d->name()] = points;
  }
  run.artifact(run.out_path("sweep.json"), all.dump(2) + "\n");
  set_batch_status(run);
}

void cmd_report(Run& run) {
  auto& c = run.config;
  const auto eval_path = c.eval ? *c.eval : c.output_dir / "eval.json";
  if (!fs::exists(eval_path)) throw InvalidArgument("evaluation file not found: " + eval_path.string());
  const auto topics = run.load_topics_checked();
  const auto j = read_json_file(eval_path);
  const auto report = report_from_json(j);
  const double threshold = j.value("threshold", c.threshold);
  run.planned = {"report.csv", "report.json", "by_type.csv"};
  run.summary.ok = report.rows.size();
  if (c.dry_run) return;

  run.artifact(run.out_path("report.csv"), report_csv(report.rows));
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) rows.push_back(to_json(r));
  nlohmann::ordered_json tj;
  tj["threshold"] = threshold;
  tj["auc_pooling"] = j.value("auc_pooling", "");
  tj["rows"] = rows;
  run.artifact(run.out_path("report.json"), tj.dump(2) + "\n");

  // Per detector: every distinct essay it judged, across all rows.
  std::map<std::string, std::map<std::pair<std::string, Label>, EssayVerdict>> by_detector;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    for (const auto& v : report.verdicts[i]) by_detector[report.rows[i].detector][{v.essay_id, v.truth}] = v;
  }
  std::map<std::string, TypeSlice> slices;
  for (const auto& [detector, verdicts] : by_detector) {
    std::vector<EssayVerdict> vs;
    for (const auto& [key, v] : verdicts) vs.push_back(v);
    slices[detector] = slice_by_essay_type(vs, topics, threshold);
    for (const auto& d : slices[detector].diagnostics) run.warnings.push_back(detector + ": " + d);
  }
  run.artifact(run.out_path("by_type.csv"), type_slice_csv(slices));
}

/// Options are parsed into holders; after the config file and environment
/// are applied, every option given on the command line is written over them.
class Flags {
 public:
  explicit Flags(CLI::App* app) : app_(app) {}

  template <typename T, typename Apply>
  void option(const std::string& name, const std::string& help, Apply apply) {
    auto holder = std::make_shared<T>();
    auto* opt = app_->add_option(name, *holder, help);
    appliers_.push_back([opt, holder, apply](RunConfig& c) {
      if (opt->count() > 0) apply(c, *holder);
    });
  }

  template <typename Apply>
  void flag(const std::string& name, const std::string& help, Apply apply) {
    auto holder = std::make_shared<bool>(false);
    auto* opt = app_->add_flag(name, *holder, help);
    appliers_.push_back([opt, apply](RunConfig& c) {
      if (opt->count() > 0) apply(c);
    });
  }

  void apply(RunConfig& c) const {
    for (const auto& a : appliers_) a(c);
  }

 private:
  CLI::App* app_;
  std::vector<std::function<void(RunConfig&)>> appliers_;
};

struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Flags> flags;
  std::string config_path;
  std::function<void(Run&)> body;
};

void common_flags(Command& cmd) {
  cmd.app->add_option("--config", cmd.config_path, "JSON config file; flags override it");
  auto& f = *cmd.flags;
  f.option<std::uint64_t>("--seed", "top-level seed", [](RunConfig& c, std::uint64_t v) { c.seed = v; });
  f.option<std::string>("--out", "output directory", [](RunConfig& c, const std::string& v) { c.output_dir = v; });
  f.option<std::size_t>("--parallelism", "concurrent backend calls",
                        [](RunConfig& c, std::size_t v) { c.parallelism = std::max<std::size_t>(1, v); });
  f.flag("--dry-run", "validate and print the plan without calling backends",
         [](RunConfig& c) { c.dry_run = true; });
}

void topics_flag(Command& cmd) {
  cmd.flags->option<std::string>("--topics", "topic spec JSON (default: <out>/topics.json)",
                                 [](RunConfig& c, const std::string& v) { c.topics = v; });
}

void input_flag(Command& cmd, const std::string& help) {
  cmd.flags->option<std::vector<std::string>>("--input", help, [](RunConfig& c, const std::vector<std::string>& v) {
    c.inputs.assign(v.begin(), v.end());
  });
}

void output_flag(Command& cmd) {
  cmd.flags->option<std::string>("--output", "output file", [](RunConfig& c, const std::string& v) { c.output = v; });
}

void resume_flag(Command& cmd) {
  cmd.flags->flag("--resume", "reuse records already in the output file", [](RunConfig& c) { c.resume = true; });
}

void chat_flags(Command& cmd) {
  auto& f = *cmd.flags;
  f.option<std::string>("--replay", "offline replay file for the chat backend",
                        [](RunConfig& c, const std::string& v) { c.replay = v; });
  f.option<std::string>("--chat-url", "chat endpoint base URL",
                        [](RunConfig& c, const std::string& v) { c.endpoints.chat = v; });
  f.option<std::string>("--model", "model name", [](RunConfig& c, const std::string& v) {
    c.generation.model_name = v;
  });
  f.option<double>("--temperature", "sampling temperature", [](RunConfig& c, double v) { c.generation.temperature = v; });
  f.option<int>("--max-tokens", "response token cap", [](RunConfig& c, int v) { c.generation.max_tokens = v; });
}

void word_flags(Command& cmd) {
  auto& f = *cmd.flags;
  f.option<std::string>("--kb", "synonym KB JSON", [](RunConfig& c, const std::string& v) { c.kb = v; });
  f.option<int>("--p", "fill-mask predictions kept", [](RunConfig& c, int v) { c.word.p = v; });
  f.option<int>("--n", "synonyms kept from the KB", [](RunConfig& c, int v) { c.word.n = v; });
  f.option<std::string>("--stopwords", "stopword set: english or none",
                        [](RunConfig& c, const std::string& v) { c.word.stopword_set_id = v; });
  f.flag("--stub-fill-mask", "offline fill-mask stub over the KB vocabulary",
         [](RunConfig& c) { c.stub_fill_mask = true; });
  f.option<std::string>("--fill-mask-url", "fill-mask endpoint base URL",
                        [](RunConfig& c, const std::string& v) { c.endpoints.fill_mask = v; });
}

void detector_flags(Command& cmd) {
  auto& f = *cmd.flags;
  f.option<std::vector<std::string>>("--detector", "detector endpoint NAME=URL (repeatable)",
                                     [](RunConfig& c, const std::vector<std::string>& v) {
                                       c.endpoints.detectors.clear();
                                       for (const auto& s : v) c.endpoints.detectors.insert(parse_named_url(s));
                                     });
  f.flag("--stub-detector", "offline topical-overlap detector", [](RunConfig& c) { c.stub_detector = true; });
  f.option<std::string>("--score-url", "scorer endpoint base URL",
                        [](RunConfig& c, const std::string& v) { c.endpoints.score = v; });
  f.flag("--stub-scorer", "offline lexical-diversity scorer", [](RunConfig& c) { c.stub_scorer = true; });
  f.option<double>("--threshold", "p_ai at or above this is classified as AI",
                   [](RunConfig& c, double v) { c.threshold = v; });
  f.option<std::size_t>("--failure-budget", "tolerated backend failures per row",
                        [](RunConfig& c, std::size_t v) { c.failure_budget = v; });
}

void validate(const RunConfig& c) {
  if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) throw InvalidArgument("threshold must be in [0,1]");
  if (!(c.sentence_ratio >= 0.0 && c.sentence_ratio <= 1.0)) throw InvalidArgument("ratio must be in [0,1]");
  if (c.parallelism == 0) throw InvalidArgument("parallelism must be positive");
  c.word.validate();
  stopwords(c.word.stopword_set_id);
}

std::string summary_line(const Run& run) {
  std::ostringstream s;
  s << "status=" << run.status << " command=" << run.command;
  if (run.config.dry_run) s << " dry_run=1";
  s << " ok=" << run.summary.ok << " skipped=" << run.summary.skipped << " failed=" << run.summary.failed;
  return s.str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Detection-evasion toolkit for AI-generated essay detectors", "evasionkit"};
  app.require_subcommand(1);
  std::map<std::string, Command> commands;

  auto add = [&](const std::string& name, const std::string& help, std::function<void(Run&)> body) -> Command& {
    auto& cmd = commands[name];
    cmd.app = app.add_subcommand(name, help);
    cmd.flags = std::make_unique<Flags>(cmd.app);
    cmd.body = std::move(body);
    common_flags(cmd);
    return cmd;
  };

  {
    auto& cmd = add("ingest", "read an ASAP-style TSV into JSONL and split train/test", cmd_ingest);
    auto& f = *cmd.flags;
    f.option<std::string>("--corpus", "essay TSV", [](RunConfig& c, const std::string& v) { c.corpus = v; });
    topics_flag(cmd);
    f.option<double>("--split-ratio", "train fraction", [](RunConfig& c, double v) { c.split_ratio = v; });
    f.option<std::string>("--col-id", "id column", [](RunConfig& c, const std::string& v) { c.columns.id = v; });
    f.option<std::string>("--col-topic", "topic column", [](RunConfig& c, const std::string& v) { c.columns.topic = v; });
    f.option<std::string>("--col-text", "essay column", [](RunConfig& c, const std::string& v) { c.columns.text = v; });
    f.option<std::string>("--col-score", "score column", [](RunConfig& c, const std::string& v) { c.columns.score = v; });
  }
  {
    auto& cmd = add("generate", "generate essays through a chat backend", cmd_generate);
    auto& f = *cmd.flags;
    f.option<std::string>("--mode", "instruction_writing, refined, continuation or paraphrase",
                          [](RunConfig& c, const std::string& v) { c.mode = prompt_mode_from_string(v); });
    f.option<int>("--samples", "essays per topic (instruction_writing)",
                  [](RunConfig& c, int v) { c.generation.samples_per_topic = v; });
    input_flag(cmd, "human essays JSONL for rewriting modes (default: <out>/test.jsonl)");
    output_flag(cmd);
    topics_flag(cmd);
    chat_flags(cmd);
    resume_flag(cmd);
  }
  {
    auto& cmd = add("perturb", "apply word_sub, sentence_sub or paraphrase", cmd_perturb);
    auto& f = *cmd.flags;
    f.option<std::string>("--method", "word_sub, sentence_sub or paraphrase",
                          [](RunConfig& c, const std::string& v) { c.method = perturb_method_from_string(v); });
    f.option<int>("--k", "words to substitute", [](RunConfig& c, int v) { c.word.k = v; });
    f.option<double>("--ratio", "fraction of sentences to replace", [](RunConfig& c, double v) { c.sentence_ratio = v; });
    f.flag("--stub-infill", "offline infill stub", [](RunConfig& c) { c.stub_infill = true; });
    f.option<std::string>("--infill-url", "infill endpoint base URL",
                          [](RunConfig& c, const std::string& v) { c.endpoints.infill = v; });
    input_flag(cmd, "essays JSONL (default: <out>/test.jsonl)");
    output_flag(cmd);
    topics_flag(cmd);
    word_flags(cmd);
    chat_flags(cmd);
    resume_flag(cmd);
  }
  {
    auto& cmd = add("analyze", "SimHash similarity distributions and topical word frequency", cmd_analyze);
    auto& f = *cmd.flags;
    input_flag(cmd, "essay JSONL files (repeatable)");
    f.option<std::size_t>("--sample", "essays sampled per (group, topic)",
                          [](RunConfig& c, std::size_t v) { c.similarity_sample = v; });
    f.option<std::vector<std::string>>("--word", "word for the frequency table (repeatable)",
                                       [](RunConfig& c, const std::vector<std::string>& v) { c.words = v; });
  }
  {
    auto& cmd = add("evaluate", "score subsets with detectors and a scorer", cmd_evaluate);
    auto& f = *cmd.flags;
    f.option<std::string>("--human", "human test subset JSONL (default: <out>/test.jsonl)",
                          [](RunConfig& c, const std::string& v) { c.human = v; });
    f.option<std::vector<std::string>>("--subset", "AI subset GENERATOR/PERTURBATION=PATH (repeatable)",
                                       [](RunConfig& c, const std::vector<std::string>& v) {
                                         c.subsets.clear();
                                         for (const auto& s : v) c.subsets.push_back(parse_subset(s));
                                       });
    output_flag(cmd);
    topics_flag(cmd);
    detector_flags(cmd);
  }
  {
    auto& cmd = add("sweep", "detector accuracy and quality against word-substitution depth", cmd_sweep);
    auto& f = *cmd.flags;
    f.option<std::string>("--depths", "comma list or LO..HI", [](RunConfig& c, const std::string& v) {
      c.depths = parse_depths(v);
    });
    input_flag(cmd, "essays JSONL (default: <out>/test.jsonl)");
    topics_flag(cmd);
    word_flags(cmd);
    detector_flags(cmd);
  }
  {
    auto& cmd = add("report", "render evaluation results as tables", cmd_report);
    cmd.flags->option<std::string>("--eval", "evaluation JSON (default: <out>/eval.json)",
                                   [](RunConfig& c, const std::string& v) { c.eval = v; });
    topics_flag(cmd);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Subcommand help is raised as a CallForHelp from the subcommand.
    if (e.get_exit_code() == 0) {
      for (const auto& [name, cmd] : commands) {
        if (cmd.app->parsed()) {
          out << cmd.app->help();
          return kExitOk;
        }
      }
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n";
    out << "status=error command=" << (app.get_subcommands().empty() ? "none" : app.get_subcommands().front()->get_name())
        << "\n";
    return kExitFatal;
  }

  Command* selected = nullptr;
  std::string name;
  for (auto& [n, cmd] : commands) {
    if (cmd.app->parsed()) {
      selected = &cmd;
      name = n;
    }
  }

  Run run;
  run.command = name;
  run.started_at = utc_now();
  bool config_ready = false;
  try {
    if (!selected->config_path.empty()) {
      const fs::path cfg_path(selected->config_path);
      apply_config_json(run.config, read_json_file(cfg_path), cfg_path.parent_path());
    }
    apply_environment(run.config);
    selected->flags->apply(run.config);
    validate(run.config);
    config_ready = true;
    selected->body(run);
    if (run.config.dry_run) {
      for (const auto& p : run.planned) out << "plan " << p << "\n";
    }
  } catch (const std::exception& e) {
    run.status = "error";
    run.error = e.what();
    err << "error: " << e.what() << "\n";
  }

  if (config_ready) {
    try {
      run.write_manifest();
    } catch (const std::exception& e) {
      err << "error: cannot write manifest: " << e.what() << "\n";
      if (run.status != "error") run.status = "error";
    }
  }
  out << summary_line(run) << "\n";
  if (run.status == "error") return kExitFatal;
  if (run.status == "partial") return kExitPartial;
  return kExitOk;
}

}  // namespace evasion::cli

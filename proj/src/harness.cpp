#include "evasion/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "evasion/error.hpp"
#include "evasion/parallel.hpp"
#include "evasion/text.hpp"

namespace evasion {

std::size_t ResponseCache::KeyHash::operator()(const Key& k) const {
  return static_cast<std::size_t>(mix64(fnv1a64(k.first) ^ k.second));
}

std::optional<double> ResponseCache::get(const std::string& backend, std::string_view text) const {
  std::lock_guard lock(mu_);
  auto it = values_.find({backend, fnv1a64(text)});
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::put(const std::string& backend, std::string_view text, double value) {
  std::lock_guard lock(mu_);
  values_[{backend, fnv1a64(text)}] = value;
}

std::size_t ResponseCache::size() const {
  std::lock_guard lock(mu_);
  return values_.size();
}

namespace {

ItemDiagnostic diagnose(const std::string& item, const std::string& backend, const std::exception& e) {
  ItemDiagnostic d;
  d.item = item;
  d.message = backend + ": " + e.what();
  if (const auto* pe = dynamic_cast<const ProviderError*>(&e)) {
    d.kind = to_string(pe->kind());
    d.attempts = pe->attempts();
  } else {
    d.kind = "contract";
    d.attempts = 1;
  }
  return d;
}

// Runs `call(text)` for every essay, consulting the cache first. Slots for
// failed essays stay empty.
template <typename Call>
std::vector<std::optional<double>> call_all(const std::string& backend,
                                            const std::vector<EssayRecord>& essays,
                                            const EvalOptions& options, Call&& call,
                                            std::vector<ItemDiagnostic>& diagnostics) {
  std::vector<std::optional<double>> values(essays.size());
  std::vector<std::optional<ItemDiagnostic>> errors(essays.size());
  parallel_for(essays.size(), options.parallelism, [&](std::size_t i) {
    const auto& text = essays[i].text;
    if (options.cache) {
      if (auto hit = options.cache->get(backend, text)) {
        values[i] = *hit;
        return;
      }
    }
    try {
      const double v = call(text);
      values[i] = v;
      if (options.cache) options.cache->put(backend, text, v);
    } catch (const std::exception& e) {
      errors[i] = diagnose(essays[i].id, backend, e);
    }
  });
  for (auto& e : errors) {
    if (e) diagnostics.push_back(std::move(*e));
  }
  return values;
}

bool predicts_ai(double p_ai, double threshold) { return p_ai >= threshold; }

void check_budget(const std::vector<ItemDiagnostic>& diagnostics, const EvalOptions& options,
                  const std::string& what) {
  if (diagnostics.size() > options.failure_budget) {
    throw Error(what + ": " + std::to_string(diagnostics.size()) +
                " backend failure(s) exceed the budget of " + std::to_string(options.failure_budget));
  }
}

double fraction_correct(const std::vector<EssayVerdict>& verdicts, double threshold) {
  std::size_t correct = 0;
  for (const auto& v : verdicts) {
    correct += predicts_ai(v.p_ai, threshold) == (v.truth == Label::kAi);
  }
  return static_cast<double>(correct) / static_cast<double>(verdicts.size());
}

double pooled_auc(const std::vector<const std::vector<EssayVerdict>*>& sets) {
  std::vector<LabeledScore> items;
  for (const auto* s : sets) {
    for (const auto& v : *s) items.push_back({v.p_ai, v.truth});
  }
  return auroc(items);
}

}  // namespace

ScoredSet detect_all(DetectorClient& detector, const std::vector<EssayRecord>& essays, Label truth,
                     const EvalOptions& options) {
  ScoredSet out;
  const auto backend = "detector:" + detector.name();
  auto values = call_all(
      backend, essays, options,
      [&](const std::string& text) {
        const double p = detector.detect(text);
        if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
          throw ProviderError(ProviderErrorKind::kContract, "p_ai outside [0,1]");
        }
        return p;
      },
      out.diagnostics);
  for (std::size_t i = 0; i < essays.size(); ++i) {
    if (!values[i]) continue;
    out.verdicts.push_back({essays[i].id, essays[i].topic_id, truth, *values[i]});
  }
  return out;
}

std::optional<double> mean_quality(ScorerClient& scorer, const std::vector<EssayRecord>& essays,
                                   const EvalOptions& options, std::vector<ItemDiagnostic>& diagnostics) {
  auto values = call_all(
      "scorer:" + scorer.name(), essays, options,
      [&](const std::string& text) {
        const double s = scorer.score(text);
        if (!std::isfinite(s) || s < 0.0 || s > 10.0) {
          throw ProviderError(ProviderErrorKind::kContract, "score outside [0,10]");
        }
        return s;
      },
      diagnostics);
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& v : values) {
    if (!v) continue;
    sum += *v;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

namespace {

EvalRow make_row(const std::string& generator, const std::string& perturbation,
                 const std::string& detector, const ScoredSet& ai, const ScoredSet& human,
                 std::optional<double> quality, double threshold) {
  if (ai.verdicts.empty()) throw Error("no AI essay could be scored");
  if (human.verdicts.empty()) throw Error("no human essay could be scored");
  EvalRow row;
  row.generator = generator;
  row.perturbation = perturbation;
  row.detector = detector;
  row.acc_ai = fraction_correct(ai.verdicts, threshold);
  row.acc_human = fraction_correct(human.verdicts, threshold);
  row.auc = pooled_auc({&ai.verdicts, &human.verdicts});
  row.mean_quality = quality;
  row.n_ai = ai.verdicts.size();
  row.n_human = human.verdicts.size();
  return row;
}

}  // namespace

EvalOutcome evaluate(DetectorClient& detector, ScorerClient* scorer,
                     const std::vector<EssayRecord>& ai_subset,
                     const std::vector<EssayRecord>& human_subset, const EvalOptions& options,
                     const std::string& generator, const std::string& perturbation) {
  if (ai_subset.empty()) throw InvalidArgument("evaluate: AI subset is empty");
  if (human_subset.empty()) throw InvalidArgument("evaluate: human subset is empty");

  EvalOutcome out;
  auto ai = detect_all(detector, ai_subset, Label::kAi, options);
  auto human = detect_all(detector, human_subset, Label::kHuman, options);
  std::optional<double> quality;
  std::vector<ItemDiagnostic> scorer_diags;
  if (scorer) quality = mean_quality(*scorer, ai_subset, options, scorer_diags);

  for (auto* src : {&ai.diagnostics, &human.diagnostics, &scorer_diags}) {
    out.diagnostics.insert(out.diagnostics.end(), src->begin(), src->end());
  }
  check_budget(out.diagnostics, options, "evaluate " + detector.name());

  out.row = make_row(generator, perturbation, detector.name(), ai, human, quality, options.threshold);
  out.verdicts = ai.verdicts;
  out.verdicts.insert(out.verdicts.end(), human.verdicts.begin(), human.verdicts.end());
  return out;
}

MatrixReport evaluate_matrix(const std::vector<DetectorClient*>& detectors, ScorerClient* scorer,
                             const std::map<SubsetKey, std::vector<EssayRecord>>& subsets,
                             const std::vector<EssayRecord>& human_subset, const EvalOptions& options) {
  MatrixReport report;
  if (subsets.empty()) {
    report.warnings.push_back("no AI subsets to evaluate");
    return report;
  }
  if (detectors.empty()) throw InvalidArgument("evaluate_matrix: no detector");
  if (human_subset.empty()) throw InvalidArgument("evaluate_matrix: human subset is empty");

  // Quality depends only on the subset, so it is computed once per subset.
  std::map<SubsetKey, std::optional<double>> quality;
  std::map<SubsetKey, std::vector<ItemDiagnostic>> quality_diags;
  for (const auto& [key, essays] : subsets) {
    if (scorer && !essays.empty()) {
      quality[key] = mean_quality(*scorer, essays, options, quality_diags[key]);
    }
  }

  struct Pending {
    EvalRow row;
    std::vector<EssayVerdict> verdicts;
  };
  std::vector<Pending> subset_rows;
  std::vector<Pending> human_rows;

  std::vector<DetectorClient*> ordered = detectors;
  std::sort(ordered.begin(), ordered.end(),
            [](DetectorClient* a, DetectorClient* b) { return a->name() < b->name(); });

  for (auto* detector : ordered) {
    const auto name = detector->name();
    auto human = detect_all(*detector, human_subset, Label::kHuman, options);
    report.diagnostics.insert(report.diagnostics.end(), human.diagnostics.begin(),
                              human.diagnostics.end());
    if (human.diagnostics.size() > options.failure_budget || human.verdicts.empty()) {
      report.warnings.push_back("detector " + name + ": human subset failed, rows skipped");
      report.failed_rows += subsets.size() + 1;
      continue;
    }

    std::vector<std::vector<EssayVerdict>> ai_sets;
    for (const auto& [key, essays] : subsets) {
      const auto label = key.first + "/" + key.second + "/" + name;
      if (essays.empty()) {
        report.warnings.push_back("subset " + label + " is empty, row skipped");
        continue;
      }
      auto ai = detect_all(*detector, essays, Label::kAi, options);
      std::vector<ItemDiagnostic> row_diags = ai.diagnostics;
      const auto& qd = quality_diags[key];
      row_diags.insert(row_diags.end(), qd.begin(), qd.end());
      report.diagnostics.insert(report.diagnostics.end(), ai.diagnostics.begin(), ai.diagnostics.end());
      if (row_diags.size() + human.diagnostics.size() > options.failure_budget || ai.verdicts.empty()) {
        report.warnings.push_back("row " + label + " failed: backend failures exceed the budget");
        ++report.failed_rows;
        continue;
      }
      auto row = make_row(key.first, key.second, name, ai, human, quality[key], options.threshold);
      std::vector<EssayVerdict> verdicts = ai.verdicts;
      verdicts.insert(verdicts.end(), human.verdicts.begin(), human.verdicts.end());
      ai_sets.push_back(ai.verdicts);
      subset_rows.push_back({std::move(row), std::move(verdicts)});
    }

    if (ai_sets.empty()) continue;
    std::vector<const std::vector<EssayVerdict>*> pool{&human.verdicts};
    std::size_t n_ai = 0;
    for (const auto& s : ai_sets) {
      pool.push_back(&s);
      n_ai += s.size();
    }
    EvalRow hr;
    hr.generator = std::string(kHumanRowGenerator);
    hr.perturbation = std::string(kNoPerturbation);
    hr.detector = name;
    hr.acc_human = fraction_correct(human.verdicts, options.threshold);
    hr.auc = pooled_auc(pool);
    hr.n_ai = n_ai;
    hr.n_human = human.verdicts.size();
    human_rows.push_back({std::move(hr), human.verdicts});
  }
  for (const auto& [key, diags] : quality_diags) {
    report.diagnostics.insert(report.diagnostics.end(), diags.begin(), diags.end());
  }

  std::stable_sort(subset_rows.begin(), subset_rows.end(), [](const Pending& a, const Pending& b) {
    return std::tie(a.row.generator, a.row.perturbation, a.row.detector) <
           std::tie(b.row.generator, b.row.perturbation, b.row.detector);
  });
  for (auto* rows : {&subset_rows, &human_rows}) {
    for (auto& p : *rows) {
      report.rows.push_back(std::move(p.row));
      report.verdicts.push_back(std::move(p.verdicts));
    }
  }
  return report;
}

TypeSlice slice_by_essay_type(const std::vector<EssayVerdict>& verdicts,
                              const std::vector<TopicSpec>& topics, double threshold) {
  const auto index = index_topics(topics);
  std::map<EssayType, std::vector<EssayVerdict>> groups;
  for (const auto& v : verdicts) {
    auto it = index.find(v.topic_id);
    if (it == index.end()) {
      throw InvalidArgument("essay " + v.essay_id + " has unknown topic " + std::to_string(v.topic_id));
    }
    groups[it->second->essay_type].push_back(v);
  }
  TypeSlice slice;
  for (auto type : {EssayType::kArgumentative, EssayType::kSourceDependent, EssayType::kNarrative}) {
    auto it = groups.find(type);
    if (it == groups.end()) {
      slice.diagnostics.push_back(std::string("no essays of type ") + to_string(type));
      continue;
    }
    slice.rows.push_back({type, fraction_correct(it->second, threshold), it->second.size()});
  }
  return slice;
}

SweepResult depth_sweep(const std::vector<EssayRecord>& essays,
                        const std::map<int, std::string>& instruction_by_topic,
                        const SweepConfig& config, FillMaskProvider& fill_mask, const SynonymKB& kb,
                        DetectorClient& detector, ScorerClient* scorer) {
  if (essays.empty()) throw InvalidArgument("depth_sweep: no essays");
  if (config.depths.empty()) throw InvalidArgument("depth_sweep: no depths");
  for (std::size_t i = 0; i < config.depths.size(); ++i) {
    if (config.depths[i] < 0) throw InvalidArgument("depth_sweep: negative depth");
    if (i > 0 && config.depths[i] <= config.depths[i - 1]) {
      throw InvalidArgument("depth_sweep: depths must be strictly increasing");
    }
  }
  const int max_depth = config.depths.back();

  SweepResult result;
  // texts[e][d] for d = 0..plan size; deeper depths reuse the last entry.
  std::vector<std::vector<std::string>> texts(essays.size());
  bool traces_ok = true;
  if (max_depth > 0) {
    WordSubConfig word = config.word;
    word.k = max_depth;
    std::vector<std::optional<std::string>> errors(essays.size());
    parallel_for(essays.size(), config.eval.parallelism, [&](std::size_t i) {
      const auto& e = essays[i];
      auto it = instruction_by_topic.find(e.topic_id);
      if (it == instruction_by_topic.end()) {
        errors[i] = "essay " + e.id + ": no instruction for topic " + std::to_string(e.topic_id);
        return;
      }
      try {
        texts[i] = word_substitute_trace(e, it->second, word, fill_mask, kb).texts;
      } catch (const std::exception& ex) {
        errors[i] = "essay " + e.id + ": " + ex.what();
      }
    });
    for (auto& err : errors) {
      if (!err) continue;
      traces_ok = false;
      result.diagnostics.push_back(*err);
    }
  }

  for (int depth : config.depths) {
    if (depth > 0 && !traces_ok) {
      result.diagnostics.push_back("depth " + std::to_string(depth) + ": substitution failed, no point");
      continue;
    }
    std::vector<EssayRecord> perturbed = essays;
    if (depth > 0) {
      for (std::size_t i = 0; i < perturbed.size(); ++i) {
        const auto& t = texts[i];
        perturbed[i].text = t[std::min<std::size_t>(static_cast<std::size_t>(depth), t.size() - 1)];
      }
    }
    auto scored = detect_all(detector, perturbed, Label::kAi, config.eval);
    std::vector<ItemDiagnostic> diags = scored.diagnostics;
    std::optional<double> quality;
    if (scorer) quality = mean_quality(*scorer, perturbed, config.eval, diags);
    if (diags.size() > config.eval.failure_budget || scored.verdicts.size() != perturbed.size()) {
      result.diagnostics.push_back("depth " + std::to_string(depth) + ": " +
                                   std::to_string(diags.size()) + " backend failure(s), no point");
      continue;
    }
    SweepPoint point;
    point.depth = depth;
    point.acc_ai = fraction_correct(scored.verdicts, config.eval.threshold);
    point.mean_quality = quality;
    for (const auto& v : scored.verdicts) point.p_ai.push_back(v.p_ai);
    result.points.push_back(std::move(point));
  }
  return result;
}

std::set<std::string> instruction_vocabulary(const std::vector<std::string>& instructions) {
  const auto& stop = stopwords("english");
  std::set<std::string> vocab;
  for (const auto& text : instructions) {
    for (auto& t : alpha_tokens(text)) {
      if (t.size() >= 3 && !stop.count(t)) vocab.insert(std::move(t));
    }
  }
  return vocab;
}

TopicalOverlapDetector::TopicalOverlapDetector(std::set<std::string> vocabulary, double gain)
    : vocab_(std::move(vocabulary)), gain_(gain) {
  if (vocab_.empty()) throw InvalidArgument("topical overlap detector: empty vocabulary");
  if (!(gain_ > 0.0)) throw InvalidArgument("topical overlap detector: gain must be positive");
}

double TopicalOverlapDetector::detect(std::string_view text) {
  const auto tokens = alpha_tokens(text);
  if (tokens.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& t : tokens) hits += vocab_.count(t);
  const double overlap = static_cast<double>(hits) / static_cast<double>(tokens.size());
  return std::min(1.0, gain_ * overlap);
}

std::unique_ptr<DetectorClient> topical_overlap_stub_detector(std::set<std::string> vocabulary) {
  return std::make_unique<TopicalOverlapDetector>(std::move(vocabulary));
}

double LexicalDiversityScorer::score(std::string_view text) {
  const auto tokens = alpha_tokens(text);
  if (tokens.empty()) return 0.0;
  const std::set<std::string> distinct(tokens.begin(), tokens.end());
  return 10.0 * static_cast<double>(distinct.size()) / static_cast<double>(tokens.size());
}

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  // Avoid "-0.0" so output does not depend on the sign of a rounded zero.
  std::string s = buf;
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

std::string percent(const std::optional<double>& v) { return v ? fixed(*v * 100.0, 1) : ""; }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

template <typename T>
nlohmann::ordered_json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

template <typename T>
std::optional<T> optional_from(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

std::string report_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream out;
  out << "generator,perturbation,detector,acc_ai,acc_human,auc,quality,n_ai,n_human\n";
  for (const auto& r : rows) {
    out << csv_field(r.generator) << ',' << csv_field(r.perturbation) << ',' << csv_field(r.detector)
        << ',' << percent(r.acc_ai) << ',' << percent(r.acc_human) << ',' << fixed(r.auc * 100.0, 1)
        << ',' << (r.mean_quality ? fixed(*r.mean_quality, 2) : "") << ',' << r.n_ai << ','
        << r.n_human << '\n';
  }
  return out.str();
}

nlohmann::ordered_json to_json(const EvalRow& row) {
  nlohmann::ordered_json j;
  j["generator"] = row.generator;
  j["perturbation"] = row.perturbation;
  j["detector"] = row.detector;
  j["acc_ai"] = optional_json(row.acc_ai);
  j["acc_human"] = optional_json(row.acc_human);
  j["auc"] = row.auc;
  j["mean_quality"] = optional_json(row.mean_quality);
  j["n_ai"] = row.n_ai;
  j["n_human"] = row.n_human;
  return j;
}

EvalRow eval_row_from_json(const nlohmann::json& j) {
  EvalRow r;
  r.generator = j.at("generator").get<std::string>();
  r.perturbation = j.at("perturbation").get<std::string>();
  r.detector = j.at("detector").get<std::string>();
  r.acc_ai = optional_from<double>(j, "acc_ai");
  r.acc_human = optional_from<double>(j, "acc_human");
  r.auc = j.at("auc").get<double>();
  r.mean_quality = optional_from<double>(j, "mean_quality");
  r.n_ai = j.at("n_ai").get<std::size_t>();
  r.n_human = j.at("n_human").get<std::size_t>();
  return r;
}

nlohmann::ordered_json to_json(const EssayVerdict& v) {
  nlohmann::ordered_json j;
  j["essay_id"] = v.essay_id;
  j["topic_id"] = v.topic_id;
  j["truth"] = to_string(v.truth);
  j["p_ai"] = v.p_ai;
  return j;
}

EssayVerdict verdict_from_json(const nlohmann::json& j) {
  EssayVerdict v;
  v.essay_id = j.at("essay_id").get<std::string>();
  v.topic_id = j.at("topic_id").get<int>();
  v.truth = label_from_string(j.at("truth").get<std::string>());
  v.p_ai = j.at("p_ai").get<double>();
  return v;
}

nlohmann::ordered_json report_json(const MatrixReport& report, double threshold) {
  nlohmann::ordered_json j;
  j["threshold"] = threshold;
  j["auc_pooling"] =
      "each row pools its AI subset with the human subset; the Human row pools every AI subset "
      "with the human subset and has no acc_ai";
  j["rows"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    auto row = to_json(report.rows[i]);
    auto& vs = row["verdicts"] = nlohmann::ordered_json::array();
    if (i < report.verdicts.size()) {
      for (const auto& v : report.verdicts[i]) vs.push_back(to_json(v));
    }
    j["rows"].push_back(std::move(row));
  }
  j["failed_rows"] = report.failed_rows;
  j["warnings"] = report.warnings;
  auto& diags = j["diagnostics"] = nlohmann::ordered_json::array();
  for (const auto& d : report.diagnostics) diags.push_back(to_json(d));
  return j;
}

MatrixReport report_from_json(const nlohmann::json& j) {
  MatrixReport report;
  for (const auto& row : j.at("rows")) {
    report.rows.push_back(eval_row_from_json(row));
    std::vector<EssayVerdict> vs;
    if (row.contains("verdicts")) {
      for (const auto& v : row.at("verdicts")) vs.push_back(verdict_from_json(v));
    }
    report.verdicts.push_back(std::move(vs));
  }
  if (j.contains("failed_rows")) report.failed_rows = j.at("failed_rows").get<std::size_t>();
  if (j.contains("warnings")) report.warnings = j.at("warnings").get<std::vector<std::string>>();
  return report;
}

std::string type_slice_csv(const std::map<std::string, TypeSlice>& slices_by_detector) {
  std::ostringstream out;
  out << "detector,essay_type,accuracy,n\n";
  for (const auto& [detector, slice] : slices_by_detector) {
    for (const auto& r : slice.rows) {
      out << csv_field(detector) << ',' << to_string(r.type) << ',' << fixed(r.accuracy * 100.0, 1)
          << ',' << r.n << '\n';
    }
  }
  return out.str();
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::ostringstream out;
  out << "depth,acc_ai,mean_quality\n";
  for (const auto& p : points) {
    out << p.depth << ',' << fixed(p.acc_ai, 6) << ',' << (p.mean_quality ? fixed(*p.mean_quality, 6) : "")
        << '\n';
  }
  return out.str();
}

}  // namespace evasion

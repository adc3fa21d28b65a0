#pragma once

// Detector and scorer evaluation over corpus subsets, perturbation-depth
// sweeps and report rendering.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "evasion/batch.hpp"
#include "evasion/corpus.hpp"
#include "evasion/metrics.hpp"
#include "evasion/perturbation.hpp"
#include "json.hpp"

namespace evasion {

/// Returns P(machine-generated | text) in [0,1].
class DetectorClient {
 public:
  virtual ~DetectorClient() = default;
  virtual double detect(std::string_view text) = 0;
  virtual std::string name() const = 0;
};

/// Returns an essay quality score in [0,10].
class ScorerClient {
 public:
  virtual ~ScorerClient() = default;
  virtual double score(std::string_view text) = 0;
  virtual std::string name() const = 0;
};

/// Thread-safe memo of backend responses keyed by (backend name, text hash).
class ResponseCache {
 public:
  std::optional<double> get(const std::string& backend, std::string_view text) const;
  void put(const std::string& backend, std::string_view text, double value);
  std::size_t size() const;

 private:
  using Key = std::pair<std::string, std::uint64_t>;
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  mutable std::mutex mu_;
  std::unordered_map<Key, double, KeyHash> values_;
};

inline constexpr double kDefaultThreshold = 0.5;

struct EvalOptions {
  double threshold = kDefaultThreshold;  // p_ai >= threshold means "ai"
  /// Per-essay backend failures tolerated before the row is rejected.
  std::size_t failure_budget = 0;
  std::size_t parallelism = 4;
  ResponseCache* cache = nullptr;
};

struct EssayVerdict {
  std::string essay_id;
  int topic_id = 0;
  Label truth = Label::kHuman;
  double p_ai = 0.0;

  friend bool operator==(const EssayVerdict&, const EssayVerdict&) = default;
};

struct EvalRow {
  std::string generator;
  std::string perturbation;
  std::string detector;
  std::optional<double> acc_ai;  // absent on the human row
  std::optional<double> acc_human;
  double auc = 0.0;
  std::optional<double> mean_quality;
  std::size_t n_ai = 0;
  std::size_t n_human = 0;

  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

/// Label given to the per-detector row that summarizes the human subset.
inline constexpr std::string_view kHumanRowGenerator = "Human";
inline constexpr std::string_view kNoPerturbation = "none";

/// Detector scores for one essay set, in input order. Essays whose call
/// failed are absent from `verdicts` and listed in `diagnostics`.
struct ScoredSet {
  std::vector<EssayVerdict> verdicts;
  std::vector<ItemDiagnostic> diagnostics;
};

ScoredSet detect_all(DetectorClient& detector, const std::vector<EssayRecord>& essays, Label truth,
                     const EvalOptions& options);

/// Mean scorer output over `essays`; failures go to `diagnostics`.
std::optional<double> mean_quality(ScorerClient& scorer, const std::vector<EssayRecord>& essays,
                                   const EvalOptions& options, std::vector<ItemDiagnostic>& diagnostics);

struct EvalOutcome {
  EvalRow row;
  std::vector<EssayVerdict> verdicts;  // ai essays first, then human
  std::vector<ItemDiagnostic> diagnostics;
};

/// Scores one AI subset against the human subset. Throws Error when backend
/// failures exceed the budget.
EvalOutcome evaluate(DetectorClient& detector, ScorerClient* scorer,
                     const std::vector<EssayRecord>& ai_subset,
                     const std::vector<EssayRecord>& human_subset, const EvalOptions& options,
                     const std::string& generator = "", const std::string& perturbation = "");

using SubsetKey = std::pair<std::string, std::string>;  // (generator, perturbation)

struct MatrixReport {
  std::vector<EvalRow> rows;
  /// Verdicts per row, parallel to `rows`.
  std::vector<std::vector<EssayVerdict>> verdicts;
  std::vector<ItemDiagnostic> diagnostics;
  std::vector<std::string> warnings;
  std::size_t failed_rows = 0;
};

/// One row per (subset, detector), sorted by (generator, perturbation,
/// detector), followed by one human row per detector whose AUC pools every
/// AI subset with the human subset.
MatrixReport evaluate_matrix(const std::vector<DetectorClient*>& detectors, ScorerClient* scorer,
                             const std::map<SubsetKey, std::vector<EssayRecord>>& subsets,
                             const std::vector<EssayRecord>& human_subset, const EvalOptions& options);

struct TypeAccuracy {
  EssayType type = EssayType::kArgumentative;
  double accuracy = 0.0;
  std::size_t n = 0;
};

struct TypeSlice {
  std::vector<TypeAccuracy> rows;  // argumentative, source_dependent, narrative order
  std::vector<std::string> diagnostics;
};

/// Accuracy per essay type. Types without essays are omitted with a
/// diagnostic; an unknown topic throws.
TypeSlice slice_by_essay_type(const std::vector<EssayVerdict>& verdicts,
                              const std::vector<TopicSpec>& topics, double threshold);

struct SweepPoint {
  int depth = 0;
  double acc_ai = 0.0;
  std::optional<double> mean_quality;
  std::vector<double> p_ai;  // per essay, input order
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<std::string> diagnostics;
};

struct SweepConfig {
  std::vector<int> depths;
  WordSubConfig word;  // k is ignored; every depth shares the rest
  EvalOptions eval;
};

/// Word substitution at increasing depth. A single substitution trace per
/// essay makes deeper points extend shallower ones. Depths whose essays or
/// backend calls fail produce no point.
SweepResult depth_sweep(const std::vector<EssayRecord>& essays,
                        const std::map<int, std::string>& instruction_by_topic,
                        const SweepConfig& config, FillMaskProvider& fill_mask, const SynonymKB& kb,
                        DetectorClient& detector, ScorerClient* scorer);

/// Lowercased alphabetic non-stopword tokens of length >= 3.
std::set<std::string> instruction_vocabulary(const std::vector<std::string>& instructions);

inline constexpr double kTopicalOverlapGain = 5.0;

/// Offline detector: p_ai = min(1, gain * fraction of essay tokens that
/// belong to the instruction vocabulary).
class TopicalOverlapDetector final : public DetectorClient {
 public:
  explicit TopicalOverlapDetector(std::set<std::string> vocabulary, double gain = kTopicalOverlapGain);

  double detect(std::string_view text) override;
  std::string name() const override { return "topical-overlap"; }

 private:
  std::set<std::string> vocab_;
  double gain_;
};

std::unique_ptr<DetectorClient> topical_overlap_stub_detector(std::set<std::string> vocabulary);

/// Offline scorer: 10 * distinct / total alphabetic tokens.
class LexicalDiversityScorer final : public ScorerClient {
 public:
  double score(std::string_view text) override;
  std::string name() const override { return "lexical-diversity"; }
};

// Rendering. Percentages carry one decimal, quality two; JSON keeps full
// precision.

std::string report_csv(const std::vector<EvalRow>& rows);
nlohmann::ordered_json report_json(const MatrixReport& report, double threshold);
MatrixReport report_from_json(const nlohmann::json& j);
std::string type_slice_csv(const std::map<std::string, TypeSlice>& slices_by_detector);
std::string sweep_csv(const std::vector<SweepPoint>& points);

nlohmann::ordered_json to_json(const EvalRow& row);
EvalRow eval_row_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const EssayVerdict& v);
EssayVerdict verdict_from_json(const nlohmann::json& j);

}  // namespace evasion

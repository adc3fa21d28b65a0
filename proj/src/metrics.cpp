#include "evasion/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "evasion/error.hpp"

namespace evasion {

const char* to_string(Label label) { return label == Label::kAi ? "ai" : "human"; }

Label label_from_string(std::string_view s) {
  if (s == "ai") return Label::kAi;
  if (s == "human") return Label::kHuman;
  throw InvalidArgument("unknown label '" + std::string(s) + "'");
}

double accuracy(std::span<const Label> predictions, std::span<const Label> truths) {
  if (predictions.size() != truths.size()) throw InvalidArgument("accuracy: length mismatch");
  if (predictions.empty()) throw InvalidArgument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == truths[i];
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double auroc(std::span<const LabeledScore> items) {
  const std::size_t n = items.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (const auto& item : items) {
    if (!std::isfinite(item.score)) throw InvalidArgument("auroc: non-finite score");
  }
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return items[a].score < items[b].score; });

  // Average 1-based ranks over tie groups.
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && items[order[j + 1]].score == items[order[i]].score) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }

  double ai_rank_sum = 0.0;
  std::size_t n_ai = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (items[i].label == Label::kAi) {
      ai_rank_sum += rank[i];
      ++n_ai;
    }
  }
  const std::size_t n_human = n - n_ai;
  if (n_ai == 0 || n_human == 0) throw InvalidArgument("auroc: needs both ai and human items");
  const double ai = static_cast<double>(n_ai);
  const double u = ai_rank_sum - ai * (ai + 1.0) / 2.0;
  return u / (ai * static_cast<double>(n_human));
}

double quadratic_weighted_kappa(std::span<const RatingPair> pairs) {
  if (pairs.size() < 2) throw InvalidArgument("qwk: needs at least 2 rating pairs");
  const int lo = pairs.front().category_min;
  const int hi = pairs.front().category_max;
  for (const auto& p : pairs) {
    if (p.category_min != lo || p.category_max != hi) throw InvalidArgument("qwk: category ranges differ");
    if (p.a < lo || p.a > hi || p.b < lo || p.b > hi) throw InvalidArgument("qwk: rating outside range");
  }
  const int categories = hi - lo + 1;
  if (categories < 2) throw InvalidArgument("qwk: degenerate category range");
  const auto size = static_cast<std::size_t>(categories);

  std::vector<double> observed(size * size, 0.0);
  std::vector<double> hist_a(size, 0.0);
  std::vector<double> hist_b(size, 0.0);
  for (const auto& p : pairs) {
    const auto i = static_cast<std::size_t>(p.a - lo);
    const auto j = static_cast<std::size_t>(p.b - lo);
    observed[i * size + j] += 1.0;
    hist_a[i] += 1.0;
    hist_b[j] += 1.0;
  }
  const double total = static_cast<double>(pairs.size());
  const double denom_w = static_cast<double>((categories - 1) * (categories - 1));
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    for (std::size_t j = 0; j < size; ++j) {
      const double d = static_cast<double>(i) - static_cast<double>(j);
      const double w = d * d / denom_w;
      num += w * observed[i * size + j];
      den += w * hist_a[i] * hist_b[j] / total;
    }
  }
  if (den == 0.0) {
    if (num == 0.0) return 1.0;
    throw InvalidArgument("qwk: zero expected disagreement with nonzero observed disagreement");
  }
  return 1.0 - num / den;
}

double cohen_kappa(std::span<const Label> a, std::span<const Label> b) {
  if (a.size() != b.size()) throw InvalidArgument("cohen_kappa: length mismatch");
  if (a.empty()) throw InvalidArgument("cohen_kappa: empty input");
  const double n = static_cast<double>(a.size());
  double agree = 0.0;
  double a_ai = 0.0;
  double b_ai = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    agree += a[i] == b[i];
    a_ai += a[i] == Label::kAi;
    b_ai += b[i] == Label::kAi;
  }
  const double p_o = agree / n;
  const double pa = a_ai / n;
  const double pb = b_ai / n;
  const double p_e = pa * pb + (1.0 - pa) * (1.0 - pb);
  if (p_e == 1.0) {
    if (p_o == 1.0) return 1.0;
    throw InvalidArgument("cohen_kappa: undefined (chance agreement is 1)");
  }
  return (p_o - p_e) / (1.0 - p_e);
}

double preference_ratio(std::span<const Label> preferences) {
  if (preferences.empty()) throw InvalidArgument("preference_ratio: empty input");
  const auto ai = std::count(preferences.begin(), preferences.end(), Label::kAi);
  return static_cast<double>(ai) / static_cast<double>(preferences.size());
}

}  // namespace evasion

#pragma once

// Evaluation metrics. All functions are pure and return full precision;
// rounding is a rendering concern.

#include <span>
#include <string_view>
#include <vector>

namespace evasion {

enum class Label { kHuman, kAi };

const char* to_string(Label label);
Label label_from_string(std::string_view s);

/// Detector output: probability that the text is machine-generated.
struct LabeledScore {
  double score = 0.0;
  Label label = Label::kHuman;
};

struct RatingPair {
  int a = 0;
  int b = 0;
  int category_min = 0;
  int category_max = 0;
};

/// Fraction of exact matches. Throws on empty input or length mismatch.
double accuracy(std::span<const Label> predictions, std::span<const Label> truths);

/// Probability that a random AI item outscores a random human item, ties
/// counting one half. Computed from average ranks (Mann-Whitney U).
/// Throws when either class is absent.
double auroc(std::span<const LabeledScore> items);

/// 1 - sum(w * O) / sum(w * E), w_ij = (i - j)^2 / (N - 1)^2 over the full
/// declared category range. Identical constant vectors score 1.
double quadratic_weighted_kappa(std::span<const RatingPair> pairs);

/// Binary Cohen's kappa, (p_o - p_e) / (1 - p_e). Two identical constant
/// raters give 1.
double cohen_kappa(std::span<const Label> a, std::span<const Label> b);

/// Fraction of preferences that went to the AI essay.
double preference_ratio(std::span<const Label> preferences);

}  // namespace evasion

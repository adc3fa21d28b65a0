#include <gtest/gtest.h>

#include <random>

#include "evasion/error.hpp"
#include "evasion/metrics.hpp"
#include "support/oracles.hpp"

using namespace evasion;

namespace {

constexpr Label H = Label::kHuman;
constexpr Label A = Label::kAi;

std::vector<RatingPair> pairs(const std::vector<int>& a, const std::vector<int>& b, int lo, int hi) {
  std::vector<RatingPair> out;
  for (std::size_t i = 0; i < a.size(); ++i) out.push_back({a[i], b[i], lo, hi});
  return out;
}

}  // namespace

TEST(Accuracy, Examples) {
  const std::vector<Label> t{A, H, A, H};
  EXPECT_DOUBLE_EQ(accuracy(t, t), 1.0);
  EXPECT_DOUBLE_EQ(accuracy(std::vector<Label>{H, A, H, A}, t), 0.0);
  EXPECT_DOUBLE_EQ(accuracy(std::vector<Label>{A, H, A, A}, t), 0.75);
  EXPECT_THROW(accuracy(std::vector<Label>{}, std::vector<Label>{}), InvalidArgument);
  EXPECT_THROW(accuracy(std::vector<Label>{A}, t), InvalidArgument);
}

TEST(Auroc, Examples) {
  EXPECT_DOUBLE_EQ(auroc(std::vector<LabeledScore>{{0.9, A}, {0.8, A}, {0.2, H}, {0.1, H}}), 1.0);
  EXPECT_DOUBLE_EQ(auroc(std::vector<LabeledScore>{{0.5, A}, {0.5, A}, {0.5, H}}), 0.5);
  // Pair enumeration: (0.9,0.3) win, (0.8,0.3) win, (0.2,0.3) loss.
  const std::vector<LabeledScore> four{{0.9, A}, {0.8, A}, {0.3, H}, {0.2, A}};
  EXPECT_NEAR(auroc(four), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(auroc(four), oracle::auroc_pairs({0.9, 0.8, 0.2}, {0.3}), 1e-12);
}

TEST(Auroc, Errors) {
  EXPECT_THROW(auroc(std::vector<LabeledScore>{{0.1, A}, {0.2, A}}), InvalidArgument);
  EXPECT_THROW(auroc(std::vector<LabeledScore>{}), InvalidArgument);
  EXPECT_THROW(auroc(std::vector<LabeledScore>{{std::nan(""), A}, {0.2, H}}), InvalidArgument);
}

TEST(Auroc, TiesAcrossClassesCountHalf) {
  const std::vector<LabeledScore> items{{0.4, A}, {0.4, H}, {0.7, A}, {0.1, H}, {0.4, H}};
  EXPECT_NEAR(auroc(items), oracle::auroc_pairs({0.4, 0.7}, {0.4, 0.1, 0.4}), 1e-12);
}

TEST(Qwk, HandCases) {
  EXPECT_DOUBLE_EQ(quadratic_weighted_kappa(pairs({1, 2, 3}, {1, 2, 3}, 1, 4)), 1.0);
  EXPECT_NEAR(quadratic_weighted_kappa(pairs({1, 2}, {1, 1}, 1, 2)), 0.0, 1e-12);
  // Identical constant vectors: no expected and no observed disagreement.
  EXPECT_DOUBLE_EQ(quadratic_weighted_kappa(pairs({2, 2}, {2, 2}, 0, 4)), 1.0);
}

TEST(Qwk, Errors) {
  EXPECT_THROW(quadratic_weighted_kappa(pairs({1}, {1}, 0, 2)), InvalidArgument);
  EXPECT_THROW(quadratic_weighted_kappa(pairs({1, 1}, {1, 1}, 1, 1)), InvalidArgument);
  EXPECT_THROW(quadratic_weighted_kappa(pairs({1, 5}, {1, 1}, 0, 4)), InvalidArgument);
  auto mixed = pairs({1, 2}, {1, 2}, 0, 4);
  mixed[1].category_max = 5;
  EXPECT_THROW(quadratic_weighted_kappa(mixed), InvalidArgument);
}

TEST(Qwk, MatchesPairwiseFormOnRandomInputs) {
  std::mt19937 g(17);
  for (int trial = 0; trial < 500; ++trial) {
    const int lo = static_cast<int>(g() % 3);
    const int hi = lo + 1 + static_cast<int>(g() % 5);
    const std::size_t n = 2 + g() % 12;
    std::vector<int> a(n), b(n);
    for (auto& x : a) x = lo + static_cast<int>(g() % static_cast<unsigned>(hi - lo + 1));
    for (auto& x : b) x = lo + static_cast<int>(g() % static_cast<unsigned>(hi - lo + 1));
    const auto expected = oracle::qwk_pairwise(a, b, lo, hi);
    if (expected) {
      EXPECT_NEAR(quadratic_weighted_kappa(pairs(a, b, lo, hi)), *expected, 1e-12);
    } else {
      EXPECT_THROW(quadratic_weighted_kappa(pairs(a, b, lo, hi)), Error);
    }
  }
}

TEST(CohenKappa, Examples) {
  EXPECT_DOUBLE_EQ(cohen_kappa(std::vector<Label>{A, H, A, H}, std::vector<Label>{A, H, A, H}), 1.0);
  EXPECT_DOUBLE_EQ(cohen_kappa(std::vector<Label>{A, H, A, H}, std::vector<Label>{H, A, H, A}), -1.0);
  EXPECT_DOUBLE_EQ(cohen_kappa(std::vector<Label>{A, A, H, H}, std::vector<Label>{A, H, H, H}), 0.5);
  EXPECT_DOUBLE_EQ(cohen_kappa(std::vector<Label>{A, A}, std::vector<Label>{A, A}), 1.0);
  EXPECT_THROW(cohen_kappa(std::vector<Label>{A}, std::vector<Label>{A, H}), InvalidArgument);
  EXPECT_THROW(cohen_kappa(std::vector<Label>{}, std::vector<Label>{}), InvalidArgument);
}

TEST(PreferenceRatio, Examples) {
  EXPECT_DOUBLE_EQ(preference_ratio(std::vector<Label>{A, A, A}), 1.0);
  EXPECT_DOUBLE_EQ(preference_ratio(std::vector<Label>{A, H}), 0.5);
  std::vector<Label> prefs(27, H);
  std::fill(prefs.begin(), prefs.begin() + 19, A);
  EXPECT_NEAR(preference_ratio(prefs), 0.7037, 5e-5);
  EXPECT_DOUBLE_EQ(preference_ratio(prefs), 19.0 / 27.0);
  EXPECT_THROW(preference_ratio(std::vector<Label>{}), InvalidArgument);
}

TEST(Labels, StringForms) {
  EXPECT_STREQ(to_string(A), "ai");
  EXPECT_STREQ(to_string(H), "human");
  EXPECT_EQ(label_from_string("ai"), A);
  EXPECT_THROW(label_from_string("robot"), InvalidArgument);
}

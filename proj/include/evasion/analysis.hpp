#pragma once

// Corpus diagnostics: SimHash similarity distributions and topical word
// frequency.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "evasion/corpus.hpp"
#include "json.hpp"

namespace evasion {

/// 64-bit Charikar fingerprint over term-frequency weighted unigrams.
struct SimHashSignature {
  std::uint64_t bits = 0;
  std::size_t token_count = 0;

  friend bool operator==(const SimHashSignature&, const SimHashSignature&) = default;
};

/// Throws InvalidArgument when the text has no alphabetic token.
SimHashSignature simhash(std::string_view text);

/// Fraction of agreeing bits: 1 - hamming(a, b) / 64.
double simhash_similarity(const SimHashSignature& a, const SimHashSignature& b);

inline constexpr std::size_t kHistogramBins = 20;

struct SimilarityStats {
  std::array<std::size_t, kHistogramBins> histogram{};
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t pair_count = 0;
};

/// Bin index of a similarity in [0,1]; 1.0 lands in the last bin.
std::size_t histogram_bin(double similarity);

/// Accumulates similarities; merge() combines per-worker partials.
class SimilarityAccumulator {
 public:
  void add(double similarity);
  void merge(const SimilarityAccumulator& other);
  SimilarityStats stats() const;
  std::size_t count() const { return count_; }

 private:
  std::array<std::size_t, kHistogramBins> histogram_{};
  double sum_ = 0.0;
  double min_ = 1.0;
  double max_ = 0.0;
  std::size_t count_ = 0;
};

struct SimilarityReport {
  std::map<std::string, SimilarityStats> groups;  // "human" / "generated"
  std::vector<std::string> diagnostics;
};

/// "human" for human-origin essays, "generated" otherwise.
std::string similarity_group(const EssayRecord& essay);

/// Per (group, topic): samples min(per_topic_sample, available) essays with
/// `seed`, scores all unordered pairs, and aggregates per group. Topics with
/// fewer than 2 essays are skipped with a diagnostic.
SimilarityReport pairwise_similarity_stats(const std::vector<EssayRecord>& essays,
                                           std::size_t per_topic_sample, std::uint64_t seed);

/// Mean over essays of the whole-token, case-insensitive count of `word`.
double topical_word_frequency(const std::vector<EssayRecord>& essays, std::string_view word);
double topical_word_frequency(const std::vector<std::string>& texts, std::string_view word);

/// CSV: group,bin_low,bin_high,count
std::string histogram_csv(const SimilarityReport& report);

/// {group: {mean, min, max, pair_count}}
nlohmann::ordered_json summary_json(const SimilarityReport& report);

}  // namespace evasion

#include "evasion/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <sstream>

#include "evasion/error.hpp"
#include "evasion/text.hpp"

namespace evasion {

SimHashSignature simhash(std::string_view text) {
  const auto tokens = alpha_tokens(text);
  if (tokens.empty()) throw InvalidArgument("simhash: text has no alphabetic tokens");
  std::map<std::string, long long> tf;
  for (const auto& t : tokens) ++tf[t];

  std::array<long long, 64> acc{};
  for (const auto& [token, weight] : tf) {
    const auto h = fnv1a64(token);
    for (int bit = 0; bit < 64; ++bit) {
      acc[bit] += ((h >> bit) & 1U) ? weight : -weight;
    }
  }
  SimHashSignature sig;
  sig.token_count = tokens.size();
  for (int bit = 0; bit < 64; ++bit) {
    if (acc[bit] > 0) sig.bits |= (std::uint64_t{1} << bit);
  }
  return sig;
}

double simhash_similarity(const SimHashSignature& a, const SimHashSignature& b) {
  return 1.0 - static_cast<double>(std::popcount(a.bits ^ b.bits)) / 64.0;
}

std::size_t histogram_bin(double similarity) {
  const auto clamped = std::clamp(similarity, 0.0, 1.0);
  return std::min(kHistogramBins - 1, static_cast<std::size_t>(clamped * kHistogramBins));
}

void SimilarityAccumulator::add(double similarity) {
  ++histogram_[histogram_bin(similarity)];
  sum_ += similarity;
  min_ = count_ == 0 ? similarity : std::min(min_, similarity);
  max_ = count_ == 0 ? similarity : std::max(max_, similarity);
  ++count_;
}

void SimilarityAccumulator::merge(const SimilarityAccumulator& other) {
  if (other.count_ == 0) return;
  for (std::size_t i = 0; i < kHistogramBins; ++i) histogram_[i] += other.histogram_[i];
  min_ = count_ == 0 ? other.min_ : std::min(min_, other.min_);
  max_ = count_ == 0 ? other.max_ : std::max(max_, other.max_);
  sum_ += other.sum_;
  count_ += other.count_;
}

SimilarityStats SimilarityAccumulator::stats() const {
  SimilarityStats s;
  s.histogram = histogram_;
  s.pair_count = count_;
  if (count_ > 0) {
    s.mean = sum_ / static_cast<double>(count_);
    s.min = min_;
    s.max = max_;
  }
  return s;
}

std::string similarity_group(const EssayRecord& essay) {
  return essay.is_human() ? "human" : "generated";
}

SimilarityReport pairwise_similarity_stats(const std::vector<EssayRecord>& essays,
                                           std::size_t per_topic_sample, std::uint64_t seed) {
  // group -> topic -> essays sorted by id
  std::map<std::string, std::map<int, std::vector<const EssayRecord*>>> buckets;
  for (const auto& e : essays) buckets[similarity_group(e)][e.topic_id].push_back(&e);

  SimilarityReport report;
  for (auto& [group, topics] : buckets) {
    SimilarityAccumulator acc;
    for (auto& [topic, members] : topics) {
      if (members.size() < 2) {
        report.diagnostics.push_back("group " + group + " topic " + std::to_string(topic) + ": " +
                                     std::to_string(members.size()) + " essay(s), skipped");
        continue;
      }
      std::sort(members.begin(), members.end(),
                [](const EssayRecord* a, const EssayRecord* b) { return a->id < b->id; });
      const auto picked = seeded_sample_indices(
          members.size(), per_topic_sample,
          derive_seed(seed, "similarity:" + group + ":" + std::to_string(topic)));
      if (picked.size() < 2) {
        report.diagnostics.push_back("group " + group + " topic " + std::to_string(topic) +
                                     ": sample smaller than 2, skipped");
        continue;
      }
      std::vector<SimHashSignature> sigs;
      sigs.reserve(picked.size());
      for (auto idx : picked) sigs.push_back(simhash(members[idx]->text));
      for (std::size_t i = 0; i < sigs.size(); ++i) {
        for (std::size_t j = i + 1; j < sigs.size(); ++j) acc.add(simhash_similarity(sigs[i], sigs[j]));
      }
    }
    if (acc.count() > 0) report.groups[group] = acc.stats();
  }
  return report;
}

double topical_word_frequency(const std::vector<std::string>& texts, std::string_view word) {
  if (texts.empty()) throw InvalidArgument("topical_word_frequency: no essays");
  const auto query = to_lower(trim(word));
  if (query.empty()) throw InvalidArgument("topical_word_frequency: empty word");
  std::size_t total = 0;
  for (const auto& text : texts) {
    for (const auto& t : alpha_tokens(text)) total += (t == query);
  }
  return static_cast<double>(total) / static_cast<double>(texts.size());
}

double topical_word_frequency(const std::vector<EssayRecord>& essays, std::string_view word) {
  std::vector<std::string> texts;
  texts.reserve(essays.size());
  for (const auto& e : essays) texts.push_back(e.text);
  return topical_word_frequency(texts, word);
}

std::string histogram_csv(const SimilarityReport& report) {
  std::ostringstream out;
  out << "group,bin_low,bin_high,count\n";
  char buf[64];
  for (const auto& [group, stats] : report.groups) {
    for (std::size_t i = 0; i < kHistogramBins; ++i) {
      std::snprintf(buf, sizeof buf, "%.2f,%.2f", static_cast<double>(i) / kHistogramBins,
                    static_cast<double>(i + 1) / kHistogramBins);
      out << group << ',' << buf << ',' << stats.histogram[i] << '\n';
    }
  }
  return out.str();
}

nlohmann::ordered_json summary_json(const SimilarityReport& report) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [group, stats] : report.groups) {
    nlohmann::ordered_json g;
    g["mean"] = stats.mean;
    g["min"] = stats.min;
    g["max"] = stats.max;
    g["pair_count"] = stats.pair_count;
    j[group] = g;
  }
  return j;
}

}  // namespace evasion

#pragma once

// Scriptable backends for tests.

#include <atomic>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "evasion/error.hpp"
#include "evasion/harness.hpp"
#include "evasion/perturbation.hpp"

namespace support {

class FunctionFillMask final : public evasion::FillMaskProvider {
 public:
  using Fn = std::function<std::vector<evasion::MaskCandidate>(std::string_view, int)>;
  explicit FunctionFillMask(Fn fn) : fn_(std::move(fn)) {}
  std::vector<evasion::MaskCandidate> predict(std::string_view masked, int top) override {
    ++calls;
    auto out = fn_(masked, top);
    if (static_cast<int>(out.size()) > top) out.resize(static_cast<std::size_t>(top));
    return out;
  }
  std::atomic<int> calls{0};

 private:
  Fn fn_;
};

/// Same candidate list for every query.
inline std::unique_ptr<FunctionFillMask> fixed_fill_mask(std::vector<evasion::MaskCandidate> list) {
  return std::make_unique<FunctionFillMask>([list](std::string_view, int) { return list; });
}

class ConstantInfill final : public evasion::InfillProvider {
 public:
  explicit ConstantInfill(std::string fill, int delta = 0) : fill_(std::move(fill)), delta_(delta) {}
  std::vector<std::string> infill(std::string_view, int span_count) override {
    return std::vector<std::string>(static_cast<std::size_t>(std::max(0, span_count + delta_)), fill_);
  }

 private:
  std::string fill_;
  int delta_;
};

/// Detector answering from a text -> p_ai table, or a fallback function.
class TableDetector final : public evasion::DetectorClient {
 public:
  TableDetector(std::string name, std::function<double(std::string_view)> fn)
      : name_(std::move(name)), fn_(std::move(fn)) {}
  double detect(std::string_view text) override {
    ++calls;
    return fn_(text);
  }
  std::string name() const override { return name_; }
  std::atomic<int> calls{0};

 private:
  std::string name_;
  std::function<double(std::string_view)> fn_;
};

class TableScorer final : public evasion::ScorerClient {
 public:
  explicit TableScorer(std::function<double(std::string_view)> fn) : fn_(std::move(fn)) {}
  double score(std::string_view text) override { return fn_(text); }
  std::string name() const override { return "table-scorer"; }

 private:
  std::function<double(std::string_view)> fn_;
};

inline evasion::EssayRecord essay(const std::string& id, int topic, const std::string& text,
                                  evasion::Origin origin = evasion::Origin::kHuman) {
  evasion::EssayRecord r;
  r.id = id;
  r.topic_id = topic;
  r.text = text;
  r.origin = origin;
  if (origin != evasion::Origin::kHuman) r.author = "gen";
  if (evasion::is_derived(origin)) r.parent_id = "root";
  return r;
}

}  // namespace support

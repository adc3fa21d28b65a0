#pragma once

// Shared bookkeeping for long-running batch jobs: per-item diagnostics,
// ok/skipped/failed counts, incremental JSONL persistence and resume.

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evasion/corpus.hpp"
#include "json.hpp"

namespace evasion {

struct ItemDiagnostic {
  std::string item;      // input id (or topic/sample label)
  std::string kind;      // "transport", "refusal", "precondition", ...
  std::string message;
  int attempts = 0;
};

struct BatchSummary {
  std::size_t ok = 0;
  std::size_t skipped = 0;
  std::size_t failed = 0;

  friend bool operator==(const BatchSummary&, const BatchSummary&) = default;
};

nlohmann::ordered_json to_json(const BatchSummary& s);
nlohmann::ordered_json to_json(const ItemDiagnostic& d);

/// Where and how a batch persists its output.
struct BatchOutput {
  std::filesystem::path path;
  bool resume = false;
};

/// Appends each finished record as soon as it exists, and on finalize()
/// rewrites the file in canonical (input) order. With resume, records
/// already in the file are reused instead of recomputed.
class IncrementalOutput {
 public:
  explicit IncrementalOutput(std::optional<BatchOutput> output);

  /// Record previously written under `id`, if resuming.
  std::optional<EssayRecord> existing(const std::string& id) const;

  void append(const EssayRecord& record);

  /// Rewrites the file with `records` in the given order.
  void finalize(const std::vector<EssayRecord>& records);

  bool enabled() const { return appender_ != nullptr; }

 private:
  std::map<std::string, EssayRecord> done_;
  std::unique_ptr<JsonlAppender> appender_;
  std::optional<BatchOutput> output_;
};

}  // namespace evasion

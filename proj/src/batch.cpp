#include "evasion/batch.hpp"

#include <fstream>

namespace evasion {

nlohmann::ordered_json to_json(const BatchSummary& s) {
  nlohmann::ordered_json j;
  j["ok"] = s.ok;
  j["skipped"] = s.skipped;
  j["failed"] = s.failed;
  return j;
}

nlohmann::ordered_json to_json(const ItemDiagnostic& d) {
  nlohmann::ordered_json j;
  j["item"] = d.item;
  j["kind"] = d.kind;
  j["message"] = d.message;
  j["attempts"] = d.attempts;
  return j;
}

IncrementalOutput::IncrementalOutput(std::optional<BatchOutput> output) : output_(std::move(output)) {
  if (!output_) return;
  if (output_->path.has_parent_path()) std::filesystem::create_directories(output_->path.parent_path());
  if (output_->resume) {
    for (auto& r : read_jsonl_lenient(output_->path)) done_.emplace(r.id, std::move(r));
  }
  // Start from a clean file holding only the reusable records.
  std::vector<EssayRecord> kept;
  for (const auto& [id, r] : done_) kept.push_back(r);
  write_jsonl(output_->path, kept);
  appender_ = std::make_unique<JsonlAppender>(output_->path);
}

std::optional<EssayRecord> IncrementalOutput::existing(const std::string& id) const {
  const auto it = done_.find(id);
  if (it == done_.end()) return std::nullopt;
  return it->second;
}

void IncrementalOutput::append(const EssayRecord& record) {
  if (appender_) appender_->append(record);
}

void IncrementalOutput::finalize(const std::vector<EssayRecord>& records) {
  if (output_) write_jsonl(output_->path, records);
}

}  // namespace evasion

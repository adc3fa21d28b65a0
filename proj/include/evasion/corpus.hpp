#pragma once

// Essay corpus: topic specs, essay records with lineage, ASAP-style TSV
// ingest, score normalization, stratified splits and JSONL storage.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace evasion {

enum class EssayType { kArgumentative, kSourceDependent, kNarrative };

const char* to_string(EssayType type);
EssayType essay_type_from_string(std::string_view s);

struct TopicSpec {
  int topic_id = 0;
  std::string prompt_text;
  std::optional<std::string> source_article;
  EssayType essay_type = EssayType::kArgumentative;
  int score_min = 0;
  int score_max = 1;

  /// Throws InvalidArgument when an invariant does not hold.
  void validate() const;
};

enum class Origin {
  kHuman,
  kInstructionWriting,
  kRefined,
  kContinuation,
  kParaphrase,
  kSentenceSub,
  kWordSub,
};

const char* to_string(Origin origin);
Origin origin_from_string(std::string_view s);

/// Origins that must carry a parent_id.
bool is_derived(Origin origin);

inline constexpr std::string_view kHumanAuthor = "human";

struct EssayRecord {
  std::string id;
  int topic_id = 0;
  std::string text;
  std::string author{kHumanAuthor};
  Origin origin = Origin::kHuman;
  std::optional<std::string> parent_id;
  std::optional<int> raw_score;
  std::optional<double> normalized_score;

  bool is_human() const { return origin == Origin::kHuman; }

  void validate() const;

  friend bool operator==(const EssayRecord&, const EssayRecord&) = default;
};

struct CorpusSplit {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  double ratio = 0.9;
};

/// Maps the logical fields onto TSV header names.
struct ColumnMap {
  std::string id = "essay_id";
  std::string topic = "essay_set";
  std::string text = "essay";
  std::string score = "domain1_score";
};

struct RowDiagnostic {
  std::size_t line = 0;  // 1-based line number in the file (header is line 1)
  std::string message;
};

struct IngestResult {
  std::vector<EssayRecord> records;
  std::vector<RowDiagnostic> diagnostics;
};

/// Reads a tab-separated file with a header row. Blank essays become
/// diagnostics; structural problems throw ParseError / InvalidArgument.
IngestResult ingest_asap(const std::filesystem::path& path, const ColumnMap& columns,
                         const std::vector<TopicSpec>& topics);

/// 10 * (raw - min) / (max - min).
double normalize_score(int raw, const TopicSpec& spec);

/// Stratified by topic, deterministic in (id set, ratio, seed).
CorpusSplit split(const std::vector<EssayRecord>& records, double ratio, std::uint64_t seed);

/// Prefix of `text` up to and including the first sentence terminator.
std::string first_sentence(std::string_view text);

/// Throws InvalidArgument if a derived record's parent chain is broken
/// (unknown parent) or cyclic, or does not end at a human / instruction root.
void check_lineage(const std::vector<EssayRecord>& records);

const TopicSpec& find_topic(const std::vector<TopicSpec>& topics, int topic_id);

// JSON forms

nlohmann::ordered_json to_json(const EssayRecord& record);
EssayRecord essay_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const TopicSpec& topic);
TopicSpec topic_from_json(const nlohmann::json& j);

std::vector<TopicSpec> load_topics(const std::filesystem::path& path);
void save_topics(const std::filesystem::path& path, const std::vector<TopicSpec>& topics);

std::vector<EssayRecord> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<EssayRecord>& records);

/// One EssayRecord per line.
std::string to_jsonl_line(const EssayRecord& record);

/// Appends records to a JSONL file; safe to call from several threads.
class JsonlAppender {
 public:
  explicit JsonlAppender(std::filesystem::path path);

  void append(const EssayRecord& record);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::mutex mutex_;
};

/// Records already present in an output file; empty if the file does not
/// exist. Lines that fail to parse (a torn final write) are ignored.
std::vector<EssayRecord> read_jsonl_lenient(const std::filesystem::path& path);

std::map<int, const TopicSpec*> index_topics(const std::vector<TopicSpec>& topics);

}  // namespace evasion

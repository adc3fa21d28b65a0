#include "evasion/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "evasion/error.hpp"
#include "evasion/text.hpp"

namespace evasion {

namespace {

std::optional<int> parse_int(std::string_view s) {
  const std::string t = trim(s);
  int value = 0;
  const auto* first = t.data();
  const auto* last = t.data() + t.size();
  if (t.empty()) return std::nullopt;
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.emplace_back(line.substr(start));
      break;
    }
    fields.emplace_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

std::string line_context(std::size_t line) { return "line " + std::to_string(line) + ": "; }

}  // namespace

const char* to_string(EssayType type) {
  switch (type) {
    case EssayType::kArgumentative: return "argumentative";
    case EssayType::kSourceDependent: return "source_dependent";
    case EssayType::kNarrative: return "narrative";
  }
  return "argumentative";
}

EssayType essay_type_from_string(std::string_view s) {
  if (s == "argumentative") return EssayType::kArgumentative;
  if (s == "source_dependent") return EssayType::kSourceDependent;
  if (s == "narrative") return EssayType::kNarrative;
  throw ParseError("unknown essay_type '" + std::string(s) + "'");
}

void TopicSpec::validate() const {
  const std::string where = "topic " + std::to_string(topic_id) + ": ";
  if (score_min >= score_max) throw InvalidArgument(where + "score_min must be < score_max");
  if (trim(prompt_text).empty()) throw InvalidArgument(where + "prompt_text is empty");
  const bool needs_source = essay_type == EssayType::kSourceDependent;
  if (needs_source != source_article.has_value()) {
    throw InvalidArgument(where + "source_article must be present iff essay_type is source_dependent");
  }
}

const char* to_string(Origin origin) {
  switch (origin) {
    case Origin::kHuman: return "human";
    case Origin::kInstructionWriting: return "instruction_writing";
    case Origin::kRefined: return "refined";
    case Origin::kContinuation: return "continuation";
    case Origin::kParaphrase: return "paraphrase";
    case Origin::kSentenceSub: return "sentence_sub";
    case Origin::kWordSub: return "word_sub";
  }
  return "human";
}

Origin origin_from_string(std::string_view s) {
  for (auto o : {Origin::kHuman, Origin::kInstructionWriting, Origin::kRefined, Origin::kContinuation,
                 Origin::kParaphrase, Origin::kSentenceSub, Origin::kWordSub}) {
    if (s == to_string(o)) return o;
  }
  throw ParseError("unknown origin '" + std::string(s) + "'");
}

bool is_derived(Origin origin) {
  return origin != Origin::kHuman && origin != Origin::kInstructionWriting;
}

void EssayRecord::validate() const {
  const std::string where = "essay '" + id + "': ";
  if (id.empty()) throw InvalidArgument("essay with empty id");
  if (trim(text).empty()) throw InvalidArgument(where + "text is empty");
  if ((origin == Origin::kHuman) != (author == kHumanAuthor)) {
    throw InvalidArgument(where + "origin=human must coincide with author=human");
  }
  if (is_derived(origin) && !parent_id) {
    throw InvalidArgument(where + "derived essay without parent_id");
  }
  if (normalized_score && (*normalized_score < 0.0 || *normalized_score > 10.0)) {
    throw InvalidArgument(where + "normalized_score outside [0,10]");
  }
}

double normalize_score(int raw, const TopicSpec& spec) {
  if (raw < spec.score_min || raw > spec.score_max) {
    throw InvalidArgument("score " + std::to_string(raw) + " outside [" +
                          std::to_string(spec.score_min) + "," + std::to_string(spec.score_max) +
                          "] for topic " + std::to_string(spec.topic_id));
  }
  return 10.0 * static_cast<double>(raw - spec.score_min) /
         static_cast<double>(spec.score_max - spec.score_min);
}

const TopicSpec& find_topic(const std::vector<TopicSpec>& topics, int topic_id) {
  for (const auto& t : topics) {
    if (t.topic_id == topic_id) return t;
  }
  throw InvalidArgument("unknown topic_id " + std::to_string(topic_id));
}

std::map<int, const TopicSpec*> index_topics(const std::vector<TopicSpec>& topics) {
  std::map<int, const TopicSpec*> index;
  for (const auto& t : topics) index[t.topic_id] = &t;
  return index;
}

IngestResult ingest_asap(const std::filesystem::path& path, const ColumnMap& columns,
                         const std::vector<TopicSpec>& topics) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open corpus file " + path.string());
  for (const auto& t : topics) t.validate();
  const auto topic_index = index_topics(topics);

  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  // Strip a UTF-8 byte order mark.
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const auto header = split_tabs(line);

  auto column_of = [&](const std::string& name, const char* role) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw ParseError(path.string() + ": header has no '" + name + "' column (" + role + ")");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto id_col = column_of(columns.id, "id");
  const auto topic_col = column_of(columns.topic, "topic");
  const auto text_col = column_of(columns.text, "text");
  const auto score_col = column_of(columns.score, "score");

  IngestResult result;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != header.size()) {
      throw ParseError(line_context(line_no) + "expected " + std::to_string(header.size()) +
                       " columns, got " + std::to_string(fields.size()));
    }
    EssayRecord record;
    record.id = trim(fields[id_col]);
    if (record.id.empty()) throw ParseError(line_context(line_no) + "empty id");
    const auto topic = parse_int(fields[topic_col]);
    if (!topic) throw ParseError(line_context(line_no) + "non-integer topic '" + fields[topic_col] + "'");
    const auto spec_it = topic_index.find(*topic);
    if (spec_it == topic_index.end()) {
      throw InvalidArgument(line_context(line_no) + "row '" + record.id + "' has unknown topic_id " +
                            std::to_string(*topic));
    }
    record.topic_id = *topic;
    const auto score = parse_int(fields[score_col]);
    if (!score) {
      throw ParseError(line_context(line_no) + "non-integer score '" + fields[score_col] + "'");
    }
    if (trim(fields[text_col]).empty()) {
      result.diagnostics.push_back({line_no, "row '" + record.id + "' has an empty essay; rejected"});
      continue;
    }
    if (!seen.insert(record.id).second) {
      throw InvalidArgument(line_context(line_no) + "duplicate id '" + record.id + "'");
    }
    record.text = fields[text_col];
    record.raw_score = *score;
    try {
      record.normalized_score = normalize_score(*score, *spec_it->second);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument(line_context(line_no) + e.what());
    }
    result.records.push_back(std::move(record));
  }
  return result;
}

CorpusSplit split(const std::vector<EssayRecord>& records, double ratio, std::uint64_t seed) {
  if (records.empty()) throw InvalidArgument("split: empty input");
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidArgument("split: ratio must be in (0,1)");
  if (records.size() < 2) throw InvalidArgument("split: need at least 2 records");

  std::map<int, std::vector<std::string>> by_topic;
  std::set<std::string> ids;
  for (const auto& r : records) {
    if (!ids.insert(r.id).second) throw InvalidArgument("split: duplicate id '" + r.id + "'");
    by_topic[r.topic_id].push_back(r.id);
  }

  struct Quota {
    int topic;
    std::size_t size;
    std::size_t lo;
    std::size_t hi;
    std::size_t train;
    double remainder;
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (auto& [topic, members] : by_topic) {
    const std::size_t n = members.size();
    const double ideal = ratio * static_cast<double>(n);
    const auto base = static_cast<std::size_t>(std::floor(ideal + 1e-9));
    Quota q{topic, n, 0, n, 0, ideal - static_cast<double>(base)};
    if (n >= 2) {
      q.lo = 1;
      q.hi = n - 1;
    }
    q.train = std::clamp(base, q.lo, q.hi);
    assigned += q.train;
    quotas.push_back(q);
  }
  const auto target = static_cast<std::size_t>(
      std::floor(ratio * static_cast<double>(records.size()) + 0.5));

  // Largest remainder, ties by topic id.
  auto order = quotas;
  std::stable_sort(order.begin(), order.end(),
                   [](const Quota& a, const Quota& b) { return a.remainder > b.remainder; });
  std::map<int, std::size_t> train_count;
  for (const auto& q : quotas) train_count[q.topic] = q.train;
  for (const auto& q : order) {
    if (assigned >= target) break;
    if (train_count[q.topic] < q.hi) {
      ++train_count[q.topic];
      ++assigned;
    }
  }
  for (auto it = order.rbegin(); it != order.rend() && assigned > target; ++it) {
    if (train_count[it->topic] > it->lo) {
      --train_count[it->topic];
      --assigned;
    }
  }

  CorpusSplit out;
  out.seed = seed;
  out.ratio = ratio;
  for (auto& [topic, members] : by_topic) {
    std::sort(members.begin(), members.end());
    SeededRng rng(derive_seed(seed, "split:topic:" + std::to_string(topic)));
    seeded_shuffle(members, rng);
    const std::size_t n_train = train_count[topic];
    out.train.insert(out.train.end(), members.begin(), members.begin() + n_train);
    out.test.insert(out.test.end(), members.begin() + n_train, members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::string first_sentence(std::string_view text) {
  const auto sentences = segment_sentences(text);
  if (sentences.empty()) return std::string(text);
  return std::string(text.substr(sentences.front().begin,
                                 sentences.front().end - sentences.front().begin));
}

void check_lineage(const std::vector<EssayRecord>& records) {
  std::unordered_map<std::string, const EssayRecord*> by_id;
  for (const auto& r : records) {
    r.validate();
    by_id[r.id] = &r;
  }
  for (const auto& r : records) {
    std::unordered_set<std::string> visited{r.id};
    const EssayRecord* cur = &r;
    while (is_derived(cur->origin)) {
      const auto it = by_id.find(*cur->parent_id);
      if (it == by_id.end()) {
        throw InvalidArgument("essay '" + cur->id + "' references unknown parent '" +
                              *cur->parent_id + "'");
      }
      if (!visited.insert(it->second->id).second) {
        throw InvalidArgument("lineage cycle through essay '" + it->second->id + "'");
      }
      cur = it->second;
    }
  }
}

nlohmann::ordered_json to_json(const EssayRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["topic_id"] = r.topic_id;
  j["text"] = r.text;
  j["author"] = r.author;
  j["origin"] = to_string(r.origin);
  j["parent_id"] = r.parent_id ? nlohmann::ordered_json(*r.parent_id) : nullptr;
  j["raw_score"] = r.raw_score ? nlohmann::ordered_json(*r.raw_score) : nullptr;
  j["normalized_score"] = r.normalized_score ? nlohmann::ordered_json(*r.normalized_score) : nullptr;
  return j;
}

EssayRecord essay_from_json(const nlohmann::json& j) {
  try {
    EssayRecord r;
    r.id = j.at("id").get<std::string>();
    r.topic_id = j.at("topic_id").get<int>();
    r.text = j.at("text").get<std::string>();
    r.author = j.at("author").get<std::string>();
    r.origin = origin_from_string(j.at("origin").get<std::string>());
    if (j.contains("parent_id") && !j["parent_id"].is_null()) r.parent_id = j["parent_id"].get<std::string>();
    if (j.contains("raw_score") && !j["raw_score"].is_null()) r.raw_score = j["raw_score"].get<int>();
    if (j.contains("normalized_score") && !j["normalized_score"].is_null()) {
      r.normalized_score = j["normalized_score"].get<double>();
    }
    r.validate();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed essay record: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const TopicSpec& t) {
  nlohmann::ordered_json j;
  j["topic_id"] = t.topic_id;
  j["prompt_text"] = t.prompt_text;
  j["source_article"] = t.source_article ? nlohmann::ordered_json(*t.source_article) : nullptr;
  j["essay_type"] = to_string(t.essay_type);
  j["score_min"] = t.score_min;
  j["score_max"] = t.score_max;
  return j;
}

TopicSpec topic_from_json(const nlohmann::json& j) {
  try {
    TopicSpec t;
    t.topic_id = j.at("topic_id").get<int>();
    t.prompt_text = j.at("prompt_text").get<std::string>();
    if (j.contains("source_article") && !j["source_article"].is_null()) {
      t.source_article = j["source_article"].get<std::string>();
    }
    t.essay_type = essay_type_from_string(j.at("essay_type").get<std::string>());
    t.score_min = j.at("score_min").get<int>();
    t.score_max = j.at("score_max").get<int>();
    t.validate();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed topic spec: ") + e.what());
  }
}

std::vector<TopicSpec> load_topics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open topics file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw ParseError(path.string() + ": expected a JSON array of topics");
  std::vector<TopicSpec> topics;
  std::set<int> ids;
  for (const auto& item : doc) {
    topics.push_back(topic_from_json(item));
    if (!ids.insert(topics.back().topic_id).second) {
      throw ParseError(path.string() + ": duplicate topic_id " + std::to_string(topics.back().topic_id));
    }
  }
  return topics;
}

void save_topics(const std::filesystem::path& path, const std::vector<TopicSpec>& topics) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& t : topics) arr.push_back(to_json(t));
  std::ofstream out(path, std::ios::binary);
  out << arr.dump(2) << '\n';
}

std::string to_jsonl_line(const EssayRecord& record) {
  return to_json(record).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::vector<EssayRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open JSONL file " + path.string());
  std::vector<EssayRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      records.push_back(essay_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::vector<EssayRecord> read_jsonl_lenient(const std::filesystem::path& path) {
  std::vector<EssayRecord> records;
  std::ifstream in(path, std::ios::binary);
  if (!in) return records;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      records.push_back(essay_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception&) {
      // torn write from an interrupted run
    }
  }
  return records;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<EssayRecord>& records) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot write " + tmp);
    for (const auto& r : records) out << to_jsonl_line(r) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

JsonlAppender::JsonlAppender(std::filesystem::path path) : path_(std::move(path)) {}

void JsonlAppender::append(const EssayRecord& record) {
  const auto line = to_jsonl_line(record);
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw InvalidArgument("cannot append to " + path_.string());
  out << line << '\n';
  out.flush();
}

}  // namespace evasion

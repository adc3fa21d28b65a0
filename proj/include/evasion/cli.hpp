#pragma once

// Command-line front end. `run` is the whole program minus process setup so
// tests can drive it in-process.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "evasion/corpus.hpp"
#include "evasion/generation.hpp"
#include "evasion/perturbation.hpp"
#include "json.hpp"

namespace evasion::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitPartial = 2;

struct SubsetSpec {
  std::string generator;
  std::string perturbation;
  std::filesystem::path path;
};

/// Parses "GENERATOR/PERTURBATION=PATH".
SubsetSpec parse_subset(const std::string& spec);

struct Endpoints {
  std::optional<std::string> chat;
  std::optional<std::string> fill_mask;
  std::optional<std::string> infill;
  std::optional<std::string> score;
  std::map<std::string, std::string> detectors;  // name -> URL
  std::optional<std::string> token;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> corpus;
  std::optional<std::filesystem::path> topics;
  std::vector<std::filesystem::path> inputs;
  std::optional<std::filesystem::path> output;
  std::optional<std::filesystem::path> kb;
  std::optional<std::filesystem::path> replay;
  std::optional<std::filesystem::path> human;
  std::optional<std::filesystem::path> eval;
  std::vector<SubsetSpec> subsets;
  ColumnMap columns;
  double split_ratio = 0.9;
  std::size_t parallelism = 4;
  double threshold = 0.5;
  std::size_t failure_budget = 0;
  Endpoints endpoints;
  GenerationParams generation;
  PromptMode mode = PromptMode::kInstructionWriting;
  PerturbMethod method = PerturbMethod::kWordSub;
  WordSubConfig word;
  double sentence_ratio = 0.2;
  std::vector<int> depths{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::size_t similarity_sample = 50;
  std::vector<std::string> words;
  bool stub_detector = false;
  bool stub_scorer = false;
  bool stub_fill_mask = false;
  bool stub_infill = false;
  bool resume = false;
  bool dry_run = false;
};

/// Applies a JSON config object. Relative paths resolve against `base_dir`.
void apply_config_json(RunConfig& config, const nlohmann::json& j,
                       const std::filesystem::path& base_dir);

/// EVASION_CHAT_URL, EVASION_FILL_MASK_URL, EVASION_INFILL_URL,
/// EVASION_SCORE_URL, EVASION_DETECTORS ("name=url,..."), EVASION_API_TOKEN.
void apply_environment(RunConfig& config);

/// Config as recorded in the manifest; the API token is never written.
nlohmann::ordered_json to_json(const RunConfig& config);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace evasion::cli

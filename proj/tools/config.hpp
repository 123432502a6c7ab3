#ifndef FTL_TOOLS_CONFIG_HPP_
#define FTL_TOOLS_CONFIG_HPP_

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftl/dataset.hpp"
#include "ftl/evaluation.hpp"
#include "ftl/trainer.hpp"

namespace ftl::cli {

// Malformed configuration or command line; maps to the usage exit code.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvaluationOptions {
  FeatureSpace space = FeatureSpace::kDiscriminative;
  std::vector<std::size_t> subset_sizes{1, 5, 10, 20};
  std::size_t repetitions = 100;
  std::size_t jobs = 1;
  std::uint64_t seed = 0;
};

// Everything a subcommand may read. [network] keys live in TrainConfig and
// the [transfer] section is shared by training, evaluation and the demos.
struct ExperimentConfig {
  GeneratorConfig dataset;
  TrainConfig trainer;
  EvaluationOptions evaluation;
};

// Reads an INI-style file with [dataset] [network] [transfer] [trainer]
// [evaluation] sections. Unknown sections or keys are rejected.
void apply_file(ExperimentConfig& cfg, const std::filesystem::path& path);

// "section.key=value".
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

void apply_value(ExperimentConfig& cfg, const std::string& section, const std::string& key,
                 const std::string& value);

// Full snapshot: {section: {key: value}} with every known key.
nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig from_json(const nlohmann::json& j);

}  // namespace ftl::cli

#endif  // FTL_TOOLS_CONFIG_HPP_

#pragma once

// Flat key=value experiment configuration and the suite runner behind the
// command-line tool.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "multimatch/datagen.hpp"
#include "multimatch/metrics.hpp"
#include "multimatch/model.hpp"
#include "multimatch/trainer.hpp"

namespace multimatch {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

// Every accepted key with its default.
const std::vector<ConfigKey>& config_keys();

class ExperimentConfig {
 public:
  ExperimentConfig();

  // `# comment` lines and blank lines are ignored; every other line is
  // `key = value`. Errors carry `<origin>:<line>:`.
  static ExperimentConfig parse(const std::string& text, const std::string& origin = "<config>");
  static ExperimentConfig load(const std::filesystem::path& path);

  // Rejects unknown keys. Values are checked by validate().
  void set(const std::string& key, const std::string& value);
  // `key=value`.
  void apply_override(const std::string& assignment);
  const std::string& get(const std::string& key) const;

  void validate() const;

  ModelConfig model_config() const;
  TrainConfig train_config(Algorithm algorithm, std::uint64_t seed) const;
  GaussianTask task() const;
  SplitSpec split_spec() const;
  Augmentor augmentor() const;
  std::vector<Algorithm> algorithms() const;
  std::vector<std::uint64_t> seeds() const;
  std::filesystem::path output_dir() const;
  std::string setup_name() const;
  bool flag(const std::string& key) const;

  // Same split for every algorithm under a given seed.
  Split make_data(std::uint64_t seed) const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> origins_;
};

struct ExperimentResult {
  std::vector<RunRecord> runs;
  RankTable ranks;
  std::size_t failed = 0;
};

RunRecord run_single(const ExperimentConfig& config, Algorithm algorithm, std::uint64_t seed);

// Executes every (algorithm, seed) pair with up to `jobs` concurrent runs,
// then writes the report files into output_dir. A run that fails at runtime
// is recorded and the suite continues.
ExperimentResult run_experiment(const ExperimentConfig& config, unsigned jobs = 1);

// Mean +- std test error per algorithm and Friedman rank.
std::string summary_table(const ExperimentResult& result);

// Merges results files, checks that every setup has the same algorithm set,
// writes ranks.csv into out_dir, and returns the table.
RankTable rank_results(const std::vector<std::filesystem::path>& inputs,
                       const std::filesystem::path& out_dir);

}  // namespace multimatch

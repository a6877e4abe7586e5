#pragma once

#include <string>
#include <vector>

#include "dynakf/model.hpp"
#include "dynakf/simlab.hpp"
#include "dynakf/trainer.hpp"

namespace dynakf {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  SystemSpec system;
  ModelConfig model;
  TrainConfig train;

  // dataset
  int episodes = 100;
  int episode_length = 50;

  // evaluation
  std::vector<double> segment_lengths = {10, 20, 30, 40, 50, 60, 70, 80};
  int pred_init = 5;
  std::vector<int> pred_horizons = {5, 10};

  // probe
  int probe_episodes = 60;
  int probe_length = 15;

  std::uint64_t seed = 1;
  std::string out_dir;

  std::string to_json() const;
  static ExperimentConfig from_json_text(const std::string& text);
  /// Reads .json or .toml (a flat-table TOML subset: sections, scalar and
  /// array values).
  static ExperimentConfig from_file(const std::string& path);
};

/// Parses the TOML subset into a JSON object string.
std::string toml_subset_to_json(const std::string& text);

}  // namespace dynakf

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parsec/dataset.hpp"
#include "parsec/parent_net.hpp"
#include "parsec/search_space.hpp"
#include "parsec/trainer.hpp"

namespace parsec {

struct DatasetConfig {
  std::string kind = "synthetic";  // "synthetic" | "cifar10-binary"
  std::string dir;                 // cifar10-binary only; empty -> $PARSEC_CIFAR10_DIR
                                   // -> deterministic stand-in under the run directory
  int train_subset = 0;            // 0 = all examples
  int test_subset = 0;
  std::uint64_t seed = 7;  // generation + subsampling; independent of run seeds
  SyntheticSpec synthetic;
};

struct RunConfig {
  SpaceConfig space;
  NetworkConfig network;
  TrainerConfig trainer;
  FinalTrainConfig final_train;
  DatasetConfig dataset;
  std::string output_dir = "runs/out";
  std::vector<std::uint64_t> seeds = {1};
};

RunConfig default_run_config();

// "toy-oracle": N=1, P=2 toy ops on a tiny synthetic problem.
// "mini-cifar": N=2, P=7, 4 cells, 8 channels, 2000-example subset.
RunConfig preset_run_config(const std::string& name);
std::vector<std::string> preset_names();

// Full echo of every field, stable key order, trailing newline.
std::string run_config_json(const RunConfig& cfg);
void write_run_config(const RunConfig& cfg, const std::string& path);

// Applies the JSON text on top of `base`. Unknown keys anywhere are errors.
RunConfig run_config_from_json_text(const std::string& text, const RunConfig& base);
RunConfig load_run_config(const std::string& path, const RunConfig& base);

// Materializes the dataset a run will use. CIFAR directory resolution order:
// explicit dir, $PARSEC_CIFAR10_DIR, then a deterministic stand-in written
// under <run_dir>/standin-cifar10.
DatasetHandle resolve_dataset(const DatasetConfig& cfg, const std::string& run_dir);

// Errors unless the network's input/output dimensions match the dataset.
void require_network_matches_dataset(const NetworkConfig& net, const DatasetHandle& data);

}  // namespace parsec

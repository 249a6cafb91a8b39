#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "parsec/arch_dist.hpp"
#include "parsec/dataset.hpp"
#include "parsec/optim.hpp"
#include "parsec/parent_net.hpp"
#include "parsec/rng.hpp"

namespace parsec {

struct TrainerConfig {
  int K = 16;                  // architecture samples per step
  int epochs = 100;
  int batch_size = 64;         // train batches (weight updates)
  int search_batch_size = 64;  // search batches (importance weights)
  double pi_lr = 0.02;         // Adam on distribution logits
  double pi_beta1 = 0.5;
  double pi_beta2 = 0.999;
  double v_lr = 0.025;  // SGD with momentum on shared weights
  double v_momentum = 0.9;
  double v_weight_decay = 3e-4;
  double split_fraction = 0.5;      // fraction of training data held out as the search set
  double weight_temperature = 1.0;  // divides summed log-likelihoods before the softmax
  bool augment = false;             // random flip + pad-4 crop on train batches
  bool parallel_children = false;   // run the K children on threads (trades memory for speed)
  bool finetune = false;            // marker echoed into run configs
  std::uint64_t seed = 1;
};

/// Fine-tuning defaults: shorter schedule, smaller logits step, larger batches.
TrainerConfig finetune_defaults();

struct ImportanceWeights {
  Eigen::ArrayXd log_liks;
  Eigen::ArrayXd weights;  // softmax of log_liks / temperature
  double max_weight() const { return weights.maxCoeff(); }
  double ess() const { return 1.0 / weights.square().sum(); }
};

/// Self-normalized weights via max-subtracted softmax; throws on NaN input.
ImportanceWeights importance_weights(const Eigen::ArrayXd& log_liks, double temperature = 1.0);

struct DataSplit {
  std::vector<int> train_ids;
  std::vector<int> search_ids;
};

/// Disjoint, exhaustive, seed-deterministic shuffle split; `fraction` is the
/// share held out as the search set.
DataSplit split_data(int num_examples, double fraction, std::uint64_t seed);

/// Rows of `all` at `ids`, in order.
Tensor gather_images(const Tensor& all, const std::vector<int>& ids);
std::vector<int> gather_labels(const std::vector<int>& all, const std::vector<int>& ids);
/// Random horizontal flip + zero-pad-4 random crop, in place, one draw triple
/// (flip, dy, dx) per image.
void augment_batch(Tensor& images, Rng& rng);

struct StepStats {
  double max_weight = 0.0;
  double ess = 0.0;
  double weighted_train_nll = 0.0;
};

/// One importance-weighted step: K sampled children scored on the search
/// batch, weight and logits updates aggregated with the normalized weights
/// from gradients on the train batch.
StepStats search_step(WeightStore& store, ArchDistribution& dist, Optimizer& v_opt,
                      Optimizer& pi_opt, const Tensor& search_images,
                      const std::vector<int>& search_labels, const Tensor& train_images,
                      const std::vector<int>& train_labels, const TrainerConfig& cfg, Rng& arch_rng,
                      ActivationMeter* meter = nullptr);

struct EpochMetrics {
  int epoch = 0;
  double entropy_nats = 0.0;
  double mode_val_acc = 0.0;
  double max_weight = 0.0;  // mean over the epoch's steps of the per-step max weight
  double ess = 0.0;         // mean over the epoch's steps
  double seconds = 0.0;
};

/// One JSON object (no trailing newline) with exactly the fields
/// epoch, entropy_nats, mode_val_acc, max_weight, ess, seconds.
std::string metrics_jsonl_line(const EpochMetrics& m);

struct SearchResult {
  ArchDistribution dist;
  WeightStore store;
  std::vector<EpochMetrics> metrics;
};

using EpochSink =
    std::function<void(int epoch, const ArchDistribution&, const WeightStore&, const EpochMetrics&)>;

/// The full search loop. `initial` (optional) seeds the distribution — used by
/// fine-tuning; it must match the space config.
SearchResult run_search(const DatasetHandle& data, const SpaceConfig& space,
                        const NetworkConfig& net, const TrainerConfig& cfg,
                        const ArchDistribution* initial = nullptr, const EpochSink& sink = {});

struct MultiSearchResult {
  std::vector<SearchResult> runs;
  std::vector<std::uint64_t> seeds;
  std::size_t best_index = 0;  // highest final mode validation accuracy
};

using SeedEpochSink = std::function<void(std::uint64_t seed, int epoch, const ArchDistribution&,
                                         const WeightStore&, const EpochMetrics&)>;

MultiSearchResult run_search_multi(const DatasetHandle& data, const SpaceConfig& space,
                                   const NetworkConfig& net, TrainerConfig cfg,
                                   const std::vector<std::uint64_t>& seeds,
                                   const SeedEpochSink& sink = {});

/// Fine-tunes a saved distribution on a (typically larger) network with the
/// identical loop; the logits at step 0 equal `start` exactly.
SearchResult finetune(const ArchDistribution& start, const DatasetHandle& data,
                      const NetworkConfig& net, const TrainerConfig& cfg, const EpochSink& sink = {});

/// Accuracy of one architecture over a fixed index set, evaluated in batches.
/// batch_stats=true normalizes with per-batch statistics (used during search,
/// where running buffers are never updated); false uses the running buffers.
double evaluate_sample_accuracy(WeightStore& store, const ArchSample& sample, const Tensor& images,
                                const std::vector<int>& labels, const std::vector<int>& ids,
                                int batch_size, bool batch_stats);

struct FinalTrainConfig {
  int epochs = 12;
  int batch_size = 96;
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  bool augment = true;
  int num_seeds = 5;
  std::uint64_t seed = 1;
};

struct TrainedNetwork {
  WeightStore store;
  double test_accuracy = 0.0;
};

/// Trains one fresh restricted network on the full training split and reports
/// test accuracy with running-statistics normalization.
TrainedNetwork train_final_one(const ArchSample& sample, const SpaceConfig& space,
                               const NetworkConfig& net, const DatasetHandle& data,
                               const FinalTrainConfig& cfg, std::uint64_t seed);

struct FinalTrainResult {
  std::vector<double> accuracies;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
};

/// From-scratch training of `sample` across num_seeds weight initializations.
FinalTrainResult train_final(const ArchSample& sample, const SpaceConfig& space,
                             const NetworkConfig& net, const DatasetHandle& data,
                             const FinalTrainConfig& cfg);

}  // namespace parsec

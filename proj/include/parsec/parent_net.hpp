#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "parsec/graph.hpp"
#include "parsec/ops.hpp"
#include "parsec/search_space.hpp"
#include "parsec/tensor.hpp"

namespace parsec {

struct NetworkConfig {
  int num_cells = 8;
  int init_channels = 16;
  int num_classes = 10;
  int input_channels = 3;
  int input_height = 32;
  int input_width = 32;
  /// Cells at 1-based indices divisible by this are reduction cells; 0 disables
  /// reductions entirely.
  int reduction_period = 3;
  bool operator==(const NetworkConfig&) const = default;
};

struct CellPlan {
  int index = 0;  // 0-based
  bool reduction = false;
  bool prev_reduction = false;  // previous cell reduced -> input 0 needs a stride-2 align
  int channels = 0;             // per-node channel count inside the cell
  int in0_channels = 0;
  int in1_channels = 0;
  int height = 0;  // spatial extent inside the cell (after preprocessing)
  int width = 0;
  int out_channels = 0;  // N * channels after node concatenation
};

struct NetworkPlan {
  std::vector<CellPlan> cells;
  int final_channels = 0;
};

/// Channel/stride schedule for the stacked network; single source of truth for
/// weight allocation and execution.
NetworkPlan plan_network(const NetworkConfig& net, const SpaceConfig& space);

/// The shared parent-network weights: every candidate (edge, op) pair of every
/// cell, plus stem, cell-input preprocessors, and the classifier head. Keys are
/// deterministic path strings ("cell2.node1.in0.op3.sep1.dw.w", "stem.bn.gamma",
/// ...); initialization is per-key seeded, so identical seeds give bit-identical
/// stores regardless of allocation order.
class WeightStore {
 public:
  static WeightStore build(const NetworkConfig& net, const SpaceConfig& space, std::uint64_t seed);
  /// Restricted store holding only the paths `sample` uses — a stand-alone
  /// network for training one fixed architecture.
  static WeightStore build_for_sample(const NetworkConfig& net, const SpaceConfig& space,
                                      const ArchSample& sample, std::uint64_t seed);

  const NetworkConfig& net_config() const { return net_; }
  const SpaceConfig& space_config() const { return space_; }
  const NetworkPlan& plan() const { return plan_; }

  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  bool has_param(const std::string& key) const { return params_.count(key) > 0; }
  Tensor& param(const std::string& key);
  const Tensor& param(const std::string& key) const;
  Tensor& buffer(const std::string& key);

  std::int64_t total_param_elements() const;

 private:
  NetworkConfig net_;
  SpaceConfig space_;
  NetworkPlan plan_;
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
};

struct ForwardOptions {
  bool training = true;        // batch statistics in every batchnorm
  bool update_running = false; // fold batch statistics into running buffers
  ActivationMeter* meter = nullptr;
};

/// One sampled child: records the restricted activation graph for `sample`
/// during construction (only the chosen paths are materialized), then serves
/// logits/likelihood reads and a single backward pass.
class ChildExecution {
 public:
  ChildExecution(WeightStore& store, const ArchSample& sample, const Tensor& images,
                 const std::vector<int>& labels, const ForwardOptions& opts);

  const Tensor& logits() const { return logits_; }
  double mean_nll() const { return mean_nll_; }
  double sum_log_lik() const { return sum_log_lik_; }
  double accuracy() const;

  /// Backpropagates the mean negative log-likelihood; returns gradients for
  /// every parameter the child touched, keyed like the store.
  std::map<std::string, Tensor> backward();

 private:
  Graph graph_;
  std::map<std::string, NodeId> param_nodes_;
  std::vector<int> labels_;
  Tensor logits_;
  NodeId loss_ = -1;
  double mean_nll_ = 0.0;
  double sum_log_lik_ = 0.0;
  bool backward_done_ = false;
};

/// Diagnostic dense forward: materializes every candidate op application per
/// slot (uniform mixture weights) instead of one chosen path. Returns the mean
/// negative log-likelihood; its only intended use is memory instrumentation via
/// `opts.meter`.
double forward_dense_diagnostic(WeightStore& store, const Tensor& images,
                                const std::vector<int>& labels, const ForwardOptions& opts);

}  // namespace parsec

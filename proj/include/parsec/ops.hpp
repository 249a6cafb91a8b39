#pragma once

#include <vector>

#include "parsec/graph.hpp"
#include "parsec/tensor.hpp"

namespace parsec::ops {

inline constexpr NodeId kNoNode = -1;

struct Conv2dSpec {
  int stride = 1;
  int padding = 0;
  int dilation = 1;
  int groups = 1;
};

/// Output spatial extent for one axis; throws if non-positive.
int conv_out_extent(int in, int kernel, int stride, int padding, int dilation);

/// input (B,Ci,H,W), weight (Co,Ci/groups,kh,kw), optional bias (Co).
/// im2col + GEMM per (batch item, group). Pass kNoNode for no bias.
NodeId conv2d(Graph& g, NodeId input, NodeId weight, NodeId bias, const Conv2dSpec& spec);

enum class PoolKind { kAvg, kMax };

/// 2-D pooling, square kernel. Average pooling divides by the number of
/// in-bounds cells in each window (zero padding never dilutes the mean).
NodeId pool2d(Graph& g, NodeId input, PoolKind kind, int kernel, int stride, int padding);

/// Channel-wise batch normalization over (B,H,W).
/// training=true uses batch statistics (requires batch >= 2) and, when
/// update_running is set, folds them into running_mean/running_var in place
/// (momentum * new, unbiased variance). training=false requires running stats.
NodeId batchnorm(Graph& g, NodeId input, NodeId gamma, NodeId beta, Tensor* running_mean,
                 Tensor* running_var, bool training, bool update_running, double eps = 1e-5,
                 double momentum = 0.1);

/// input (B,F), weight (O,F), bias (O) -> (B,O)
NodeId linear(Graph& g, NodeId input, NodeId weight, NodeId bias);

NodeId relu(Graph& g, NodeId input);
NodeId add(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId input, double factor);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId sum(Graph& g, NodeId input);

/// Concatenates (B,Ci,H,W) tensors along the channel axis.
NodeId concat_channels(Graph& g, const std::vector<NodeId>& parts);

/// out[b,c,h,w] = in[b,c,h+dy,w+dx]; output is (B,C,H-dy,W-dx).
NodeId shift_crop(Graph& g, NodeId input, int dy, int dx);

/// (B,C,H,W) -> (B,C) spatial mean.
NodeId global_avg_pool(Graph& g, NodeId input);

struct CrossEntropyResult {
  NodeId loss;         // scalar node: mean negative log-likelihood
  double mean_nll;     // same value as a plain double
  double sum_log_lik;  // summed log-likelihood of the labels (= -batch * mean_nll)
};

/// logits (B,K) with integer labels in [0,K).
CrossEntropyResult softmax_cross_entropy(Graph& g, NodeId logits, const std::vector<int>& labels);

/// Fraction of rows whose argmax (first maximum) equals the label.
double argmax_accuracy(const Tensor& logits, const std::vector<int>& labels);

}  // namespace parsec::ops

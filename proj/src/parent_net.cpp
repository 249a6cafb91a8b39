#include "parsec/parent_net.hpp"

#include <set>
#include <stdexcept>
#include <utility>

#include "parsec/rng.hpp"

namespace parsec {
namespace {

struct ParamDecl {
  std::string key;
  std::vector<int> shape;
};

void declare_bn(const std::string& prefix, int channels, std::vector<ParamDecl>& params,
                std::vector<ParamDecl>& buffers) {
  params.push_back({prefix + ".gamma", {channels}});
  params.push_back({prefix + ".beta", {channels}});
  buffers.push_back({prefix + ".rm", {channels}});
  buffers.push_back({prefix + ".rv", {channels}});
}

void declare_factorized_reduce(const std::string& prefix, int in_channels, int out_channels,
                               std::vector<ParamDecl>& params, std::vector<ParamDecl>& buffers) {
  if (out_channels % 2 != 0)
    throw std::invalid_argument("factorized reduce at '" + prefix +
                                "' needs an even channel count, got " + std::to_string(out_channels));
  params.push_back({prefix + ".conv_a.w", {out_channels / 2, in_channels, 1, 1}});
  params.push_back({prefix + ".conv_b.w", {out_channels / 2, in_channels, 1, 1}});
  declare_bn(prefix + ".bn", out_channels, params, buffers);
}

// Parameters of one candidate (edge, op) application rooted at `prefix`.
void declare_op(const SpaceConfig& space, const std::string& prefix, int op_index, int channels,
                int stride, std::vector<ParamDecl>& params, std::vector<ParamDecl>& buffers) {
  const std::string name = op_names(space)[static_cast<std::size_t>(op_index)];
  if (space.op_set == OpSet::kToy) {
    if (stride != 1)
      throw std::invalid_argument("toy op '" + name + "' supports stride 1 only (use reduction_period=0)");
    return;  // arithmetic ops carry no parameters
  }
  if (name == "identity") {
    if (stride == 2) declare_factorized_reduce(prefix + ".fr", channels, channels, params, buffers);
    return;
  }
  if (name == "avg_pool_3x3" || name == "max_pool_3x3") return;
  if (name == "sep_conv_3x3" || name == "sep_conv_5x5") {
    const int k = name == "sep_conv_3x3" ? 3 : 5;
    for (int round = 1; round <= 2; ++round) {
      const std::string p = prefix + ".sep" + std::to_string(round);
      params.push_back({p + ".dw.w", {channels, 1, k, k}});
      params.push_back({p + ".pw.w", {channels, channels, 1, 1}});
      declare_bn(p + ".bn", channels, params, buffers);
    }
    return;
  }
  if (name == "dil_conv_3x3" || name == "dil_conv_5x5") {
    const int k = name == "dil_conv_3x3" ? 3 : 5;
    params.push_back({prefix + ".dil.dw.w", {channels, 1, k, k}});
    params.push_back({prefix + ".dil.pw.w", {channels, channels, 1, 1}});
    declare_bn(prefix + ".dil.bn", channels, params, buffers);
    return;
  }
  throw std::logic_error("declare_op: unhandled op '" + name + "'");
}

// Candidate (input, op) pairs of node `n`: every pair for the parent store, or
// just the pairs a fixed sample names.
std::set<std::pair<int, int>> node_candidates(const SpaceConfig& space, const CellSample* restrict_to,
                                              int node) {
  std::set<std::pair<int, int>> pairs;
  if (restrict_to == nullptr) {
    for (int j = 0; j <= node; ++j)
      for (int p = 0; p < space.num_ops; ++p) pairs.insert({j, p});
  } else {
    for (int slot = 0; slot < 2; ++slot) {
      const PairChoice& c = restrict_to->pairs[static_cast<std::size_t>((node - 1) * 2 + slot)];
      pairs.insert({c.input_index, c.op_index});
    }
  }
  return pairs;
}

std::string op_prefix(int cell_index, int node, int input_index, int op_index) {
  return "cell" + std::to_string(cell_index) + ".node" + std::to_string(node) + ".in" +
         std::to_string(input_index) + ".op" + std::to_string(op_index);
}

void declare_network(const NetworkConfig& net, const SpaceConfig& space, const NetworkPlan& plan,
                     const ArchSample* restrict_to, std::vector<ParamDecl>& params,
                     std::vector<ParamDecl>& buffers) {
  params.push_back({"stem.conv.w", {net.init_channels, net.input_channels, 3, 3}});
  declare_bn("stem.bn", net.init_channels, params, buffers);
  for (const CellPlan& cp : plan.cells) {
    const std::string cell = "cell" + std::to_string(cp.index);
    if (cp.prev_reduction) {
      declare_factorized_reduce(cell + ".pre0.fr", cp.in0_channels, cp.channels, params, buffers);
    } else {
      params.push_back({cell + ".pre0.conv.w", {cp.channels, cp.in0_channels, 1, 1}});
      declare_bn(cell + ".pre0.bn", cp.channels, params, buffers);
    }
    params.push_back({cell + ".pre1.conv.w", {cp.channels, cp.in1_channels, 1, 1}});
    declare_bn(cell + ".pre1.bn", cp.channels, params, buffers);
    const CellSample* cell_sample =
        restrict_to == nullptr ? nullptr : (cp.reduction ? &restrict_to->reduction : &restrict_to->normal);
    for (int node = 1; node <= space.num_nodes; ++node) {
      for (const auto& [j, p] : node_candidates(space, cell_sample, node)) {
        const int stride = cp.reduction && j < 2 ? 2 : 1;
        declare_op(space, op_prefix(cp.index, node, j, p), p, cp.channels, stride, params, buffers);
      }
    }
  }
  params.push_back({"head.linear.w", {net.num_classes, plan.final_channels}});
  params.push_back({"head.linear.b", {net.num_classes}});
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor init_param(const ParamDecl& decl, std::uint64_t seed) {
  if (ends_with(decl.key, ".gamma")) return Tensor::full(decl.shape, 1.0);
  if (ends_with(decl.key, ".beta") || ends_with(decl.key, ".b")) return Tensor::zeros(decl.shape);
  if (ends_with(decl.key, ".w")) {
    Tensor t = Tensor::zeros(decl.shape);
    const double fan_in = static_cast<double>(t.numel() / decl.shape[0]);
    const double stddev = std::sqrt(2.0 / fan_in);
    Rng rng = derive_rng(seed, decl.key);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data(i) = rng.normal(0.0, stddev);
    return t;
  }
  throw std::logic_error("init_param: no initialization rule for key '" + decl.key + "'");
}

}  // namespace

NetworkPlan plan_network(const NetworkConfig& net, const SpaceConfig& space) {
  op_names(space);  // validates num_ops against the registry
  if (net.num_cells < 1) throw std::invalid_argument("network plan: num_cells must be >= 1");
  if (net.init_channels < 1)
    throw std::invalid_argument("network plan: init_channels must be >= 1");
  if (net.num_classes < 2) throw std::invalid_argument("network plan: num_classes must be >= 2");
  if (net.input_channels < 1 || net.input_height < 1 || net.input_width < 1)
    throw std::invalid_argument("network plan: input dimensions must be positive");
  if (net.reduction_period < 0)
    throw std::invalid_argument(
        "network plan: reduction_period must be >= 0 (0 disables reductions)");
  if (space.op_set == OpSet::kToy && net.reduction_period != 0)
    throw std::invalid_argument(
        "toy operations are stride-1 only; use reduction_period 0 with the toy op set");
  NetworkPlan plan;
  int prev_prev_ch = net.init_channels;
  int prev_ch = net.init_channels;
  bool prev_red = false;
  int channels = net.init_channels;
  int h = net.input_height, w = net.input_width;
  for (int i = 0; i < net.num_cells; ++i) {
    CellPlan cp;
    cp.index = i;
    cp.reduction = net.reduction_period > 0 && (i + 1) % net.reduction_period == 0;
    cp.prev_reduction = prev_red;
    if (cp.reduction) {
      if (h % 2 != 0 || w % 2 != 0)
        throw std::invalid_argument("cell " + std::to_string(i) + " would reduce a " +
                                    std::to_string(h) + "x" + std::to_string(w) +
                                    " input; spatial extents must be even");
      channels *= 2;
    }
    cp.channels = channels;
    cp.in0_channels = prev_prev_ch;
    cp.in1_channels = prev_ch;
    if (cp.reduction) {
      h /= 2;
      w /= 2;
    }
    cp.height = h;
    cp.width = w;
    cp.out_channels = space.num_nodes * channels;
    prev_prev_ch = prev_ch;
    prev_ch = cp.out_channels;
    prev_red = cp.reduction;
    plan.cells.push_back(cp);
  }
  plan.final_channels = prev_ch;
  return plan;
}

WeightStore WeightStore::build(const NetworkConfig& net, const SpaceConfig& space, std::uint64_t seed) {
  WeightStore store;
  store.net_ = net;
  store.space_ = space;
  store.plan_ = plan_network(net, space);
  std::vector<ParamDecl> params, buffers;
  declare_network(net, space, store.plan_, nullptr, params, buffers);
  for (const ParamDecl& d : params) {
    if (store.params_.count(d.key)) throw std::logic_error("duplicate parameter key '" + d.key + "'");
    store.params_.emplace(d.key, init_param(d, seed));
  }
  for (const ParamDecl& d : buffers)
    store.buffers_.emplace(d.key, ends_with(d.key, ".rv") ? Tensor::full(d.shape, 1.0)
                                                          : Tensor::zeros(d.shape));
  return store;
}

WeightStore WeightStore::build_for_sample(const NetworkConfig& net, const SpaceConfig& space,
                                          const ArchSample& sample, std::uint64_t seed) {
  require_valid_sample(space, sample);
  WeightStore store;
  store.net_ = net;
  store.space_ = space;
  store.plan_ = plan_network(net, space);
  std::vector<ParamDecl> params, buffers;
  declare_network(net, space, store.plan_, &sample, params, buffers);
  for (const ParamDecl& d : params)
    if (!store.params_.count(d.key)) store.params_.emplace(d.key, init_param(d, seed));
  for (const ParamDecl& d : buffers)
    if (!store.buffers_.count(d.key))
      store.buffers_.emplace(d.key, ends_with(d.key, ".rv") ? Tensor::full(d.shape, 1.0)
                                                            : Tensor::zeros(d.shape));
  return store;
}

Tensor& WeightStore::param(const std::string& key) {
  auto it = params_.find(key);
  if (it == params_.end()) throw std::out_of_range("weight store has no parameter '" + key + "'");
  return it->second;
}

const Tensor& WeightStore::param(const std::string& key) const {
  auto it = params_.find(key);
  if (it == params_.end()) throw std::out_of_range("weight store has no parameter '" + key + "'");
  return it->second;
}

Tensor& WeightStore::buffer(const std::string& key) {
  auto it = buffers_.find(key);
  if (it == buffers_.end()) throw std::out_of_range("weight store has no buffer '" + key + "'");
  return it->second;
}

std::int64_t WeightStore::total_param_elements() const {
  std::int64_t n = 0;
  for (const auto& [key, t] : params_) n += t.numel();
  return n;
}

namespace {

// Shared forward machinery over one tape: parameter-node caching and the
// stem/preprocessor/op/head builders used by both the sampled-child and the
// dense-diagnostic executors.
class NetRunner {
 public:
  NetRunner(Graph& g, WeightStore& store, const ForwardOptions& opts)
      : g_(g), store_(store), opts_(opts) {}

  NodeId param_node(const std::string& key) {
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    NodeId id = g_.parameter(store_.param(key));
    cache_.emplace(key, id);
    return id;
  }

  const std::map<std::string, NodeId>& param_nodes() const { return cache_; }

  NodeId bn(const std::string& prefix, NodeId x) {
    return ops::batchnorm(g_, x, param_node(prefix + ".gamma"), param_node(prefix + ".beta"),
                          &store_.buffer(prefix + ".rm"), &store_.buffer(prefix + ".rv"),
                          opts_.training, opts_.update_running);
  }

  NodeId stem(NodeId images) {
    ops::Conv2dSpec spec;
    spec.padding = 1;
    NodeId x = ops::conv2d(g_, images, param_node("stem.conv.w"), ops::kNoNode, spec);
    return bn("stem.bn", x);
  }

  NodeId factorized_reduce(const std::string& prefix, NodeId x) {
    NodeId r = ops::relu(g_, x);
    ops::Conv2dSpec s2;
    s2.stride = 2;
    NodeId a = ops::conv2d(g_, r, param_node(prefix + ".conv_a.w"), ops::kNoNode, s2);
    NodeId shifted = ops::shift_crop(g_, r, 1, 1);
    NodeId b = ops::conv2d(g_, shifted, param_node(prefix + ".conv_b.w"), ops::kNoNode, s2);
    return bn(prefix + ".bn", ops::concat_channels(g_, {a, b}));
  }

  NodeId preprocess(const CellPlan& cp, int which, NodeId x) {
    const std::string prefix = "cell" + std::to_string(cp.index) + ".pre" + std::to_string(which);
    if (which == 0 && cp.prev_reduction) return factorized_reduce(prefix + ".fr", x);
    NodeId r = ops::relu(g_, x);
    NodeId c = ops::conv2d(g_, r, param_node(prefix + ".conv.w"), ops::kNoNode, ops::Conv2dSpec{});
    return bn(prefix + ".bn", c);
  }

  // One candidate op application; bumps the meter's op-output counter.
  NodeId apply_candidate(const CellPlan& cp, int node, int input_index, int op_index, NodeId x) {
    const SpaceConfig& space = store_.space_config();
    const int stride = cp.reduction && input_index < 2 ? 2 : 1;
    const std::string prefix = op_prefix(cp.index, node, input_index, op_index);
    const std::string name = op_names(space)[static_cast<std::size_t>(op_index)];
    NodeId out;
    if (space.op_set == OpSet::kToy) {
      if (stride != 1) throw std::logic_error("toy op at stride 2 should have been rejected at planning");
      if (name == "identity") out = ops::scale(g_, x, 1.0);
      else if (name == "negate") out = ops::scale(g_, x, -1.0);
      else if (name == "scale2") out = ops::scale(g_, x, 2.0);
      else throw std::logic_error("unhandled toy op '" + name + "'");
    } else if (name == "identity") {
      out = stride == 1 ? ops::scale(g_, x, 1.0) : factorized_reduce(prefix + ".fr", x);
    } else if (name == "avg_pool_3x3" || name == "max_pool_3x3") {
      out = ops::pool2d(g_, x, name == "avg_pool_3x3" ? ops::PoolKind::kAvg : ops::PoolKind::kMax, 3,
                        stride, 1);
    } else if (name == "sep_conv_3x3" || name == "sep_conv_5x5") {
      const int k = name == "sep_conv_3x3" ? 3 : 5;
      out = x;
      for (int round = 1; round <= 2; ++round) {
        const std::string p = prefix + ".sep" + std::to_string(round);
        NodeId r = ops::relu(g_, out);
        ops::Conv2dSpec dw;
        dw.stride = round == 1 ? stride : 1;
        dw.padding = (k - 1) / 2;
        dw.groups = cp.channels;
        NodeId d = ops::conv2d(g_, r, param_node(p + ".dw.w"), ops::kNoNode, dw);
        NodeId pw = ops::conv2d(g_, d, param_node(p + ".pw.w"), ops::kNoNode, ops::Conv2dSpec{});
        out = bn(p + ".bn", pw);
      }
    } else if (name == "dil_conv_3x3" || name == "dil_conv_5x5") {
      const int k = name == "dil_conv_3x3" ? 3 : 5;
      NodeId r = ops::relu(g_, x);
      ops::Conv2dSpec dw;
      dw.stride = stride;
      dw.dilation = 2;
      dw.padding = k - 1;  // dilation 2 keeps stride-1 extents
      dw.groups = cp.channels;
      NodeId d = ops::conv2d(g_, r, param_node(prefix + ".dil.dw.w"), ops::kNoNode, dw);
      NodeId pw = ops::conv2d(g_, d, param_node(prefix + ".dil.pw.w"), ops::kNoNode, ops::Conv2dSpec{});
      out = bn(prefix + ".dil.bn", pw);
    } else {
      throw std::logic_error("unhandled op '" + name + "'");
    }
    if (opts_.meter != nullptr) opts_.meter->op_output_elements += g_.value(out).numel();
    return out;
  }

  NodeId head(NodeId features) {
    NodeId pooled = ops::global_avg_pool(g_, features);
    return ops::linear(g_, pooled, param_node("head.linear.w"), param_node("head.linear.b"));
  }

 private:
  Graph& g_;
  WeightStore& store_;
  ForwardOptions opts_;
  std::map<std::string, NodeId> cache_;
};

void require_batch(const NetworkConfig& net, const Tensor& images, const std::vector<int>& labels) {
  if (images.rank() != 4 || images.dim(1) != net.input_channels ||
      images.dim(2) != net.input_height || images.dim(3) != net.input_width)
    throw std::invalid_argument("batch images have shape " + shape_string(images.shape) +
                                ", network expects (*, " + std::to_string(net.input_channels) + ", " +
                                std::to_string(net.input_height) + ", " +
                                std::to_string(net.input_width) + ")");
  if (static_cast<int>(labels.size()) != images.dim(0))
    throw std::invalid_argument("batch has " + std::to_string(images.dim(0)) + " images but " +
                                std::to_string(labels.size()) + " labels");
}

}  // namespace

ChildExecution::ChildExecution(WeightStore& store, const ArchSample& sample, const Tensor& images,
                               const std::vector<int>& labels, const ForwardOptions& opts)
    : graph_(opts.meter), labels_(labels) {
  require_valid_sample(store.space_config(), sample);
  require_batch(store.net_config(), images, labels);
  NetRunner runner(graph_, store, opts);
  NodeId input = graph_.leaf(images);
  NodeId s0 = runner.stem(input);
  NodeId s1 = s0;
  const SpaceConfig& space = store.space_config();
  for (const CellPlan& cp : store.plan().cells) {
    const CellSample& cell_sample = cp.reduction ? sample.reduction : sample.normal;
    std::vector<NodeId> states{runner.preprocess(cp, 0, s0), runner.preprocess(cp, 1, s1)};
    std::vector<NodeId> node_outputs;
    for (int node = 1; node <= space.num_nodes; ++node) {
      NodeId slot_out[2];
      for (int slot = 0; slot < 2; ++slot) {
        const PairChoice& c = cell_sample.pairs[static_cast<std::size_t>((node - 1) * 2 + slot)];
        slot_out[slot] = runner.apply_candidate(cp, node, c.input_index, c.op_index,
                                                states[static_cast<std::size_t>(c.input_index)]);
      }
      NodeId value = ops::add(graph_, slot_out[0], slot_out[1]);
      states.push_back(value);
      node_outputs.push_back(value);
    }
    NodeId out = ops::concat_channels(graph_, node_outputs);
    s0 = s1;
    s1 = out;
  }
  NodeId logits_node = runner.head(s1);
  logits_ = graph_.value(logits_node);
  auto ce = ops::softmax_cross_entropy(graph_, logits_node, labels_);
  loss_ = ce.loss;
  mean_nll_ = ce.mean_nll;
  sum_log_lik_ = ce.sum_log_lik;
  for (const auto& [key, node] : runner.param_nodes()) param_nodes_.emplace(key, node);
}

double ChildExecution::accuracy() const { return ops::argmax_accuracy(logits_, labels_); }

std::map<std::string, Tensor> ChildExecution::backward() {
  if (backward_done_) throw std::logic_error("ChildExecution::backward called twice");
  backward_done_ = true;
  graph_.backward(loss_);
  std::map<std::string, Tensor> grads;
  for (const auto& [key, node] : param_nodes_)
    if (graph_.has_grad(node)) grads.emplace(key, graph_.grad(node));
  return grads;
}

double forward_dense_diagnostic(WeightStore& store, const Tensor& images,
                                const std::vector<int>& labels, const ForwardOptions& opts) {
  require_batch(store.net_config(), images, labels);
  Graph graph(opts.meter);
  NetRunner runner(graph, store, opts);
  NodeId input = graph.leaf(images);
  NodeId s0 = runner.stem(input);
  NodeId s1 = s0;
  const SpaceConfig& space = store.space_config();
  for (const CellPlan& cp : store.plan().cells) {
    std::vector<NodeId> states{runner.preprocess(cp, 0, s0), runner.preprocess(cp, 1, s1)};
    std::vector<NodeId> node_outputs;
    for (int node = 1; node <= space.num_nodes; ++node) {
      // Uniform mixture over every (input, op) candidate; both slots share it,
      // so the node value is twice the mixture.
      const double weight = 1.0 / slot_cardinality(space, node);
      NodeId mix = -1;
      for (int j = 0; j <= node; ++j) {
        for (int p = 0; p < space.num_ops; ++p) {
          NodeId cand = runner.apply_candidate(cp, node, j, p, states[static_cast<std::size_t>(j)]);
          NodeId weighted = ops::scale(graph, cand, weight);
          mix = mix < 0 ? weighted : ops::add(graph, mix, weighted);
        }
      }
      NodeId value = ops::scale(graph, mix, 2.0);
      states.push_back(value);
      node_outputs.push_back(value);
    }
    NodeId out = ops::concat_channels(graph, node_outputs);
    s0 = s1;
    s1 = out;
  }
  NodeId logits_node = runner.head(s1);
  auto ce = ops::softmax_cross_entropy(graph, logits_node, labels);
  return ce.mean_nll;
}

}  // namespace parsec

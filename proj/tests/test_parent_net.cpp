#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "parsec/checkpoint.hpp"
#include "parsec/parent_net.hpp"
#include "parsec/rng.hpp"
#include "parsec/search_space.hpp"

using namespace parsec;

namespace {

const SpaceConfig kConvSpace{2, 7, OpSet::kConv7};
const SpaceConfig kToySpace{2, 3, OpSet::kToy};
const SpaceConfig kTinySpace{1, 7, OpSet::kConv7};

NetworkConfig toy_net() {
  NetworkConfig net;
  net.num_cells = 2;
  net.init_channels = 4;
  net.num_classes = 4;
  net.input_channels = 3;
  net.input_height = 8;
  net.input_width = 8;
  net.reduction_period = 0;
  return net;
}

NetworkConfig tiny_conv_net() {
  NetworkConfig net;
  net.num_cells = 1;
  net.init_channels = 2;
  net.num_classes = 3;
  net.input_channels = 3;
  net.input_height = 6;
  net.input_width = 6;
  net.reduction_period = 0;
  return net;
}

ArchSample toy_sample(std::uint64_t flat) { return sample_from_flat_index(kToySpace, flat); }

Tensor random_batch(int b, int c, int h, int w, std::uint64_t seed) {
  Tensor t = Tensor::zeros({b, c, h, w});
  Rng rng(seed);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = rng.normal() * 0.5;
  return t;
}

std::vector<int> cycle_labels(int b, int classes) {
  std::vector<int> labels(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) labels[static_cast<std::size_t>(i)] = i % classes;
  return labels;
}

double loss_at(WeightStore& store, const ArchSample& sample, const Tensor& images,
               const std::vector<int>& labels) {
  ForwardOptions opts;
  ChildExecution child(store, sample, images, labels, opts);
  return child.mean_nll();
}

// Central-difference check of every parameter, probing a few coordinates each.
void check_store_gradients(WeightStore& store, const ArchSample& sample, const Tensor& images,
                           const std::vector<int>& labels, int coords_per_param) {
  ForwardOptions opts;
  std::map<std::string, Tensor> grads;
  {
    ChildExecution child(store, sample, images, labels, opts);
    grads = child.backward();
  }
  const double h = 1e-5;
  for (auto& [key, grad] : grads) {
    Tensor& p = store.param(key);
    REQUIRE(grad.shape == p.shape);
    const Eigen::Index n = p.data.size();
    const Eigen::Index stride = std::max<Eigen::Index>(1, n / coords_per_param);
    for (Eigen::Index i = 0; i < n; i += stride) {
      const double saved = p.data[i];
      p.data[i] = saved + h;
      const double up = loss_at(store, sample, images, labels);
      p.data[i] = saved - h;
      const double down = loss_at(store, sample, images, labels);
      p.data[i] = saved;
      const double fd = (up - down) / (2 * h);
      const double err =
          std::abs(grad.data[i] - fd) / std::max({std::abs(grad.data[i]), std::abs(fd), 1e-2});
      INFO("param ", key, " coordinate ", i);
      CHECK(err < 1e-4);
    }
  }
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("the channel and stride schedule follows the reduction period") {
  NetworkConfig net;
  net.num_cells = 8;
  net.init_channels = 16;
  net.reduction_period = 3;
  const NetworkPlan plan = plan_network(net, kConvSpace);
  REQUIRE(plan.cells.size() == 8);

  std::vector<int> expected_channels{16, 16, 32, 32, 32, 64, 64, 64};
  std::vector<int> expected_height{32, 32, 16, 16, 16, 8, 8, 8};
  for (int i = 0; i < 8; ++i) {
    const CellPlan& cp = plan.cells[static_cast<std::size_t>(i)];
    CHECK(cp.index == i);
    CHECK(cp.reduction == ((i + 1) % 3 == 0));
    CHECK(cp.channels == expected_channels[static_cast<std::size_t>(i)]);
    CHECK(cp.height == expected_height[static_cast<std::size_t>(i)]);
    CHECK(cp.width == expected_height[static_cast<std::size_t>(i)]);
    CHECK(cp.out_channels == 2 * cp.channels);
    if (i >= 1) CHECK(cp.prev_reduction == plan.cells[static_cast<std::size_t>(i - 1)].reduction);
    if (i >= 2) CHECK(cp.in0_channels == plan.cells[static_cast<std::size_t>(i - 2)].out_channels);
    if (i >= 1) CHECK(cp.in1_channels == plan.cells[static_cast<std::size_t>(i - 1)].out_channels);
  }
  CHECK(plan.final_channels == 128);
  CHECK(plan.cells[0].in0_channels == 16);  // stem feeds both inputs of cell 0
  CHECK(plan.cells[0].in1_channels == 16);
}

TEST_CASE("planning rejects impossible configurations") {
  NetworkConfig toy_red = toy_net();
  toy_red.reduction_period = 2;
  CHECK_THROWS_WITH_AS(plan_network(toy_red, kToySpace), doctest::Contains("stride-1"),
                       std::invalid_argument);

  NetworkConfig odd;
  odd.num_cells = 3;
  odd.input_height = 7;
  odd.input_width = 7;
  odd.reduction_period = 1;
  CHECK_THROWS_AS(plan_network(odd, kConvSpace), std::invalid_argument);

  NetworkConfig none = toy_net();
  none.num_cells = 0;
  CHECK_THROWS_AS(plan_network(none, kToySpace), std::invalid_argument);
  NetworkConfig one_class = toy_net();
  one_class.num_classes = 1;
  CHECK_THROWS_AS(plan_network(one_class, kToySpace), std::invalid_argument);
}

TEST_CASE("identical seeds build bit-identical stores") {
  const WeightStore a = WeightStore::build(toy_net(), kToySpace, 42);
  const WeightStore b = WeightStore::build(toy_net(), kToySpace, 42);
  const WeightStore c = WeightStore::build(toy_net(), kToySpace, 43);
  REQUIRE(a.params().size() == b.params().size());
  bool any_diff_from_c = false;
  for (const auto& [key, t] : a.params()) {
    CHECK((t.data == b.params().at(key).data).all());
    if (!(t.data == c.params().at(key).data).all()) any_diff_from_c = true;
  }
  CHECK(any_diff_from_c);
  for (const auto& [key, t] : a.buffers()) CHECK((t.data == b.buffers().at(key).data).all());
}

TEST_CASE("the parent store declares every candidate path and the restricted store only its own") {
  const WeightStore parent = WeightStore::build(tiny_conv_net(), kTinySpace, 9);
  // One cell, one node, feeds {0,1}, seven ops: all parametric candidates present.
  CHECK(parent.has_param("stem.conv.w"));
  CHECK(parent.has_param("cell0.node1.in0.op3.sep1.dw.w"));
  CHECK(parent.has_param("cell0.node1.in0.op3.sep2.pw.w"));
  CHECK(parent.has_param("cell0.node1.in1.op4.sep1.dw.w"));
  CHECK(parent.has_param("cell0.node1.in0.op5.dil.dw.w"));
  CHECK(parent.has_param("cell0.node1.in1.op6.dil.pw.w"));
  CHECK(parent.has_param("head.linear.w"));
  CHECK(!parent.has_param("cell0.node1.in0.op0.fr.c1.w"));  // stride-1 identity has no weights
  CHECK_THROWS_AS(parent.param("cell0.node1.in0.op9.sep1.dw.w"), std::out_of_range);

  ArchSample sample;
  sample.normal.pairs = {{0, 3}, {1, 6}};
  sample.reduction.pairs = {{0, 1}, {1, 0}};
  const WeightStore restricted =
      WeightStore::build_for_sample(tiny_conv_net(), kTinySpace, sample, 9);
  CHECK(restricted.has_param("cell0.node1.in0.op3.sep1.dw.w"));
  CHECK(restricted.has_param("cell0.node1.in1.op6.dil.dw.w"));
  CHECK(!restricted.has_param("cell0.node1.in1.op4.sep1.dw.w"));
  CHECK(!restricted.has_param("cell0.node1.in0.op5.dil.dw.w"));
  CHECK(restricted.total_param_elements() < parent.total_param_elements());

  // Shared keys initialize identically: the restricted child is the parent's slice.
  for (const auto& [key, t] : restricted.params()) CHECK((t.data == parent.params().at(key).data).all());
}

TEST_CASE("a child only touches and only differentiates its own path") {
  WeightStore store = WeightStore::build(tiny_conv_net(), kTinySpace, 5);
  ArchSample sample;
  sample.normal.pairs = {{0, 3}, {1, 5}};
  sample.reduction.pairs = {{0, 0}, {1, 0}};
  const Tensor images = random_batch(3, 3, 6, 6, 11);
  const std::vector<int> labels = cycle_labels(3, 3);
  ForwardOptions opts;
  ChildExecution child(store, sample, images, labels, opts);
  const auto grads = child.backward();
  CHECK(grads.count("cell0.node1.in0.op3.sep1.dw.w") == 1);
  CHECK(grads.count("cell0.node1.in1.op5.dil.dw.w") == 1);
  CHECK(grads.count("cell0.node1.in1.op4.sep1.dw.w") == 0);
  CHECK(grads.count("cell0.node1.in0.op6.dil.dw.w") == 0);
  CHECK(grads.count("stem.conv.w") == 1);
  CHECK(grads.count("head.linear.w") == 1);
  for (const auto& [key, g] : grads) {
    CHECK(store.has_param(key));
    CHECK(g.all_finite());
  }
  CHECK_THROWS_AS(child.backward(), std::logic_error);
}

TEST_CASE("child gradients match finite differences on a toy network") {
  WeightStore store = WeightStore::build(toy_net(), kToySpace, 21);
  const ArchSample sample = toy_sample(1234);
  const Tensor images = random_batch(2, 3, 8, 8, 77);
  check_store_gradients(store, sample, images, cycle_labels(2, 4), 6);
}

TEST_CASE("child gradients match finite differences on a small convolutional network") {
  ArchSample sample;
  sample.normal.pairs = {{0, 3}, {1, 6}};  // separable conv + dilated conv
  sample.reduction.pairs = {{0, 1}, {1, 0}};
  WeightStore store = WeightStore::build_for_sample(tiny_conv_net(), kTinySpace, sample, 31);
  const Tensor images = random_batch(2, 3, 6, 6, 13);
  check_store_gradients(store, sample, images, cycle_labels(2, 3), 4);

  ArchSample pooling;
  pooling.normal.pairs = {{1, 1}, {0, 0}};  // average pool + identity copy
  pooling.reduction.pairs = {{0, 0}, {1, 0}};
  WeightStore pool_store = WeightStore::build_for_sample(tiny_conv_net(), kTinySpace, pooling, 32);
  check_store_gradients(pool_store, pooling, images, cycle_labels(2, 3), 4);
}

TEST_CASE("a zeroed head yields uniform class likelihoods") {
  WeightStore store = WeightStore::build(toy_net(), kToySpace, 3);
  store.param("head.linear.w").data.setZero();
  store.param("head.linear.b").data.setZero();
  const int batch = 5;
  const Tensor images = random_batch(batch, 3, 8, 8, 2);
  const std::vector<int> labels = cycle_labels(batch, 4);
  ForwardOptions opts;
  ChildExecution child(store, toy_sample(999), images, labels, opts);
  CHECK(child.logits().data.abs().maxCoeff() == 0.0);
  CHECK(child.mean_nll() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(child.sum_log_lik() == doctest::Approx(-batch * std::log(4.0)).epsilon(1e-12));
  CHECK(child.accuracy() == doctest::Approx(2.0 / 5.0).epsilon(1e-12));  // ties pick class 0
}

TEST_CASE("shape and label mismatches are rejected with described shapes") {
  WeightStore store = WeightStore::build(toy_net(), kToySpace, 3);
  const Tensor bad = random_batch(2, 3, 8, 7, 1);
  ForwardOptions opts;
  CHECK_THROWS_WITH_AS(
      (ChildExecution(store, toy_sample(0), bad, cycle_labels(2, 4), opts)),
      doctest::Contains("(2, 3, 8, 7)"), std::invalid_argument);
  const Tensor good = random_batch(2, 3, 8, 8, 1);
  CHECK_THROWS_AS((ChildExecution(store, toy_sample(0), good, cycle_labels(3, 4), opts)),
                  std::invalid_argument);
  ArchSample foreign = sample_from_flat_index(SpaceConfig{1, 2, OpSet::kToy}, 0);
  CHECK_THROWS_AS((ChildExecution(store, foreign, good, cycle_labels(2, 4), opts)),
                  std::invalid_argument);
}

TEST_CASE("weights are shared: store mutations reach the next child") {
  WeightStore store = WeightStore::build(toy_net(), kToySpace, 8);
  const Tensor images = random_batch(4, 3, 8, 8, 4);
  const std::vector<int> labels = cycle_labels(4, 4);
  const ArchSample sample = toy_sample(40000);
  ForwardOptions opts;
  const double before = ChildExecution(store, sample, images, labels, opts).mean_nll();
  const double again = ChildExecution(store, sample, images, labels, opts).mean_nll();
  CHECK(before == again);  // reading twice does not mutate
  store.param("head.linear.b").data[0] += 0.5;
  const double after = ChildExecution(store, sample, images, labels, opts).mean_nll();
  CHECK(after != before);
}

TEST_CASE("sequential children keep peak memory at the single-child budget") {
  WeightStore store = WeightStore::build(toy_net(), kToySpace, 8);
  const Tensor images = random_batch(4, 3, 8, 8, 4);
  const std::vector<int> labels = cycle_labels(4, 4);

  ActivationMeter one;
  {
    ForwardOptions opts;
    opts.meter = &one;
    ChildExecution child(store, toy_sample(123), images, labels, opts);
    CHECK(one.current > 0);
  }
  CHECK(one.current == 0);
  CHECK(one.peak > 0);

  ActivationMeter many;
  Rng rng(55);
  for (int k = 0; k < 16; ++k) {
    ForwardOptions opts;
    opts.meter = &many;
    const std::uint64_t idx = rng.uniform_index(static_cast<std::uint64_t>(space_size(kToySpace)));
    ChildExecution child(store, toy_sample(idx), images, labels, opts);
  }
  CHECK(many.current == 0);
  CHECK(many.peak == one.peak);  // sampling more children costs no extra live memory
  CHECK(many.op_output_elements == 16 * one.op_output_elements);
}

TEST_CASE("candidate op outputs are metered, identity copies included") {
  WeightStore store = WeightStore::build(toy_net(), kToySpace, 8);
  const int batch = 3;
  const Tensor images = random_batch(batch, 3, 8, 8, 4);
  const std::vector<int> labels = cycle_labels(batch, 4);
  ActivationMeter meter;
  ForwardOptions opts;
  opts.meter = &meter;
  // All-identity architecture: every slot picks (input 0, op 0).
  ArchSample all_identity;
  all_identity.normal.pairs = {{0, 0}, {0, 0}, {0, 0}, {0, 0}};
  all_identity.reduction.pairs = {{0, 0}, {0, 0}, {0, 0}, {0, 0}};
  ChildExecution child(store, all_identity, images, labels, opts);
  // 2 cells x (2 slots x 2 nodes) candidate applications of batch x 4 x 8 x 8 each.
  const std::int64_t per_op = static_cast<std::int64_t>(batch) * 4 * 8 * 8;
  CHECK(meter.op_output_elements == 2 * 4 * per_op);
}

TEST_CASE("the dense diagnostic forward materializes at least num_ops times more op output") {
  NetworkConfig net = tiny_conv_net();
  net.num_cells = 2;
  WeightStore store = WeightStore::build(net, kConvSpace, 17);
  const Tensor images = random_batch(2, 3, 6, 6, 9);
  const std::vector<int> labels = cycle_labels(2, 3);

  ActivationMeter child_meter;
  {
    ForwardOptions opts;
    opts.meter = &child_meter;
    ChildExecution child(store, sample_from_flat_index(kConvSpace, 777), images, labels, opts);
  }
  ActivationMeter dense_meter;
  ForwardOptions opts;
  opts.meter = &dense_meter;
  const double nll = forward_dense_diagnostic(store, images, labels, opts);
  CHECK(std::isfinite(nll));
  // Candidate applications per cell: sum over nodes of (node+1)*P vs the child's 2N.
  CHECK(dense_meter.op_output_elements >= 7 * child_meter.op_output_elements);
  CHECK(dense_meter.peak > child_meter.peak);
}

TEST_CASE("weight checkpoints round-trip bit-exactly and load strictly") {
  WeightStore store = WeightStore::build(toy_net(), kToySpace, 64);
  store.buffer("stem.bn.rm").data[0] = 0.25;  // make a buffer non-trivial
  const std::string path = temp_path("parsec_weights_roundtrip.psec");
  save_weights(store, path);

  const auto table = read_weight_file(path);
  CHECK(table.size() == store.params().size() + store.buffers().size());
  CHECK((table.at("stem.conv.w").data == store.param("stem.conv.w").data).all());
  CHECK(table.at("stem.bn.rm").data[0] == 0.25);

  WeightStore other = WeightStore::build(toy_net(), kToySpace, 65);
  load_weights_into(other, path);
  for (const auto& [key, t] : store.params()) CHECK((t.data == other.param(key).data).all());
  for (const auto& [key, t] : store.buffers()) CHECK((t.data == other.buffers().at(key).data).all());

  NetworkConfig bigger = toy_net();
  bigger.num_cells = 3;
  WeightStore mismatched = WeightStore::build(bigger, kToySpace, 64);
  CHECK_THROWS_WITH_AS(load_weights_into(mismatched, path), doctest::Contains("missing"),
                       std::runtime_error);

  const std::string garbage = temp_path("parsec_weights_garbage.psec");
  {
    std::ofstream out(garbage, std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_WITH_AS(load_weights_into(store, garbage), doctest::Contains("magic"),
                       std::runtime_error);
  CHECK_THROWS_AS(read_weight_file(temp_path("parsec_no_such_file.psec")), std::runtime_error);
  std::remove(path.c_str());
  std::remove(garbage.c_str());
}

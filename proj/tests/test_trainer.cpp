#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "parsec/arch_dist.hpp"
#include "parsec/dataset.hpp"
#include "parsec/trainer.hpp"

using namespace parsec;
using json = void;  // no json needed here

namespace {

const SpaceConfig kToySpace{2, 3, OpSet::kToy};

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

DatasetHandle toy_data(int train = 64, int test = 32) {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.num_train = train;
  spec.num_test = test;
  spec.height = 8;
  spec.width = 8;
  return gen_synthetic(spec, 7);
}

TrainerConfig toy_trainer() {
  TrainerConfig cfg;
  cfg.K = 4;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.search_batch_size = 8;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("importance weights implement the stabilized softmax exactly") {
  Eigen::ArrayXd lls(3);
  lls << -10.0, -10.0, -12.0;
  const ImportanceWeights w = importance_weights(lls);
  CHECK(w.weights[0] == doctest::Approx(0.4683105308334812).epsilon(1e-14));
  CHECK(w.weights[1] == doctest::Approx(0.4683105308334812).epsilon(1e-14));
  CHECK(w.weights[2] == doctest::Approx(0.06337893833303762).epsilon(1e-14));
  CHECK(w.weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w.max_weight() == w.weights[0]);

  const ImportanceWeights tempered = importance_weights(lls, 2.0);
  CHECK(tempered.weights[0] == doctest::Approx(0.4223187982515182).epsilon(1e-14));
  CHECK(tempered.weights[2] == doctest::Approx(0.15536240349696362).epsilon(1e-14));
  CHECK(tempered.ess() == doctest::Approx(2.6257483271778526).epsilon(1e-12));
}

TEST_CASE("importance weight invariants") {
  SUBCASE("equal log-likelihoods give uniform weights for any K") {
    for (int K : {1, 3, 16}) {
      const ImportanceWeights w = importance_weights(Eigen::ArrayXd::Constant(K, -321.5));
      for (int k = 0; k < K; ++k) CHECK(w.weights[k] == doctest::Approx(1.0 / K).epsilon(1e-15));
      CHECK(w.ess() == doctest::Approx(static_cast<double>(K)).epsilon(1e-12));
    }
  }
  SUBCASE("a constant shift leaves the weights untouched") {
    Eigen::ArrayXd lls(4);
    lls << -3.0, -1.5, -9.0, -2.25;
    const ImportanceWeights a = importance_weights(lls, 1.3);
    const ImportanceWeights b = importance_weights(lls + 500.0, 1.3);
    for (int k = 0; k < 4; ++k) CHECK(a.weights[k] == doctest::Approx(b.weights[k]).epsilon(1e-12));
  }
  SUBCASE("weights normalize and ess stays within [1, K]") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
      Eigen::ArrayXd lls(6);
      for (int k = 0; k < 6; ++k) lls[k] = -200.0 + 30.0 * rng.normal();
      const ImportanceWeights w = importance_weights(lls, 0.7);
      CHECK(std::abs(w.weights.sum() - 1.0) < 1e-12);
      CHECK(w.weights.minCoeff() >= 0.0);
      CHECK(w.ess() >= 1.0 - 1e-12);
      CHECK(w.ess() <= 6.0 + 1e-12);
    }
  }
  SUBCASE("one dominant sample takes nearly all the weight") {
    Eigen::ArrayXd lls(4);
    lls << -10.0, -17.0, -18.0, -19.0;
    CHECK(importance_weights(lls).max_weight() > 0.99);
  }
  SUBCASE("K = 1 degenerates to a unit weight") {
    const ImportanceWeights w = importance_weights(Eigen::ArrayXd::Constant(1, -1234.5));
    CHECK(w.weights[0] == 1.0);
    CHECK(w.ess() == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("huge spreads stay finite") {
    Eigen::ArrayXd lls(3);
    lls << -1e6, -2e6, -3e6;
    const ImportanceWeights w = importance_weights(lls);
    CHECK(w.weights.isFinite().all());
    CHECK(w.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("NaN input is rejected") {
    Eigen::ArrayXd lls(2);
    lls << -1.0, std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(importance_weights(lls), std::runtime_error);
    CHECK_THROWS_AS(importance_weights(Eigen::ArrayXd(0)), std::invalid_argument);
  }
}

TEST_CASE("the data split is disjoint, exhaustive, and seed-deterministic") {
  const DataSplit s = split_data(100, 0.3, 17);
  CHECK(s.search_ids.size() == 30);
  CHECK(s.train_ids.size() == 70);
  std::set<int> all(s.train_ids.begin(), s.train_ids.end());
  all.insert(s.search_ids.begin(), s.search_ids.end());
  CHECK(all.size() == 100);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 99);

  const DataSplit again = split_data(100, 0.3, 17);
  CHECK(s.train_ids == again.train_ids);
  CHECK(s.search_ids == again.search_ids);
  const DataSplit other = split_data(100, 0.3, 18);
  CHECK(s.train_ids != other.train_ids);

  CHECK_THROWS_AS(split_data(3, 0.01, 0), std::invalid_argument);  // empty search side
  CHECK_THROWS_AS(split_data(1, 0.5, 0), std::invalid_argument);   // nothing to hold out
}

TEST_CASE("gathering rows preserves order and checks bounds") {
  Tensor all = Tensor::zeros({4, 1, 2, 2});
  for (int i = 0; i < 4; ++i) all.at4(i, 0, 0, 0) = 10.0 + i;
  const Tensor picked = gather_images(all, {2, 0});
  CHECK(picked.shape == std::vector<int>{2, 1, 2, 2});
  CHECK(picked.at4(0, 0, 0, 0) == 12.0);
  CHECK(picked.at4(1, 0, 0, 0) == 10.0);
  CHECK_THROWS_AS(gather_images(all, {4}), std::invalid_argument);
  CHECK(gather_labels({5, 6, 7}, {2, 2, 0}) == std::vector<int>{7, 7, 5});
}

TEST_CASE("augmentation is an in-place seeded transform") {
  SyntheticSpec spec;
  spec.num_classes = 2;
  spec.num_train = 16;
  spec.num_test = 4;
  spec.height = 8;
  spec.width = 8;
  const DatasetHandle data = gen_synthetic(spec, 3);

  Tensor a = data.train_images;
  Tensor b = data.train_images;
  Rng ra(9), rb(9);
  augment_batch(a, ra);
  augment_batch(b, rb);
  CHECK((a.data == b.data).all());
  CHECK(!(a.data == data.train_images.data).all());  // something moved

  Tensor c = data.train_images;
  Rng rc(10);
  augment_batch(c, rc);
  CHECK(!(c.data == a.data).all());  // a different seed draws different jitter
  CHECK(a.all_finite());
  // Shifts pad with zeros, so some border pixels of some image are exactly zero.
  bool any_zero = false;
  for (Eigen::Index i = 0; i < a.data.size() && !any_zero; ++i) any_zero = a.data[i] == 0.0;
  CHECK(any_zero);
}

TEST_CASE("configuration defects are rejected up front") {
  const DatasetHandle data = toy_data();
  TrainerConfig bad = toy_trainer();
  bad.K = 0;
  CHECK_THROWS_AS(run_search(data, kToySpace, toy_net(), bad), std::invalid_argument);
  bad = toy_trainer();
  bad.batch_size = 1;
  CHECK_THROWS_AS(run_search(data, kToySpace, toy_net(), bad), std::invalid_argument);
  bad = toy_trainer();
  bad.split_fraction = 1.0;
  CHECK_THROWS_AS(run_search(data, kToySpace, toy_net(), bad), std::invalid_argument);
  bad = toy_trainer();
  bad.weight_temperature = 0.0;
  CHECK_THROWS_AS(run_search(data, kToySpace, toy_net(), bad), std::invalid_argument);
  bad = toy_trainer();
  bad.epochs = 0;
  CHECK_THROWS_AS(run_search(data, kToySpace, toy_net(), bad), std::invalid_argument);
}

TEST_CASE("one search step updates both the weights and the distribution") {
  const DatasetHandle data = toy_data();
  WeightStore store = WeightStore::build(toy_net(), kToySpace, 3);
  ArchDistribution dist = ArchDistribution::uniform(kToySpace);
  TrainerConfig cfg = toy_trainer();
  Optimizer v_opt = Optimizer::sgd_momentum({cfg.v_lr, cfg.v_momentum, cfg.v_weight_decay});
  Optimizer pi_opt = Optimizer::adam({cfg.pi_lr, cfg.pi_beta1, cfg.pi_beta2, 1e-8, 0.0});
  Rng arch_rng(derive_seed(cfg.seed, "trainer.arch"));

  const Tensor search_images = gather_images(data.train_images, {0, 1, 2, 3, 4, 5, 6, 7});
  const std::vector<int> search_labels =
      gather_labels(data.train_labels, {0, 1, 2, 3, 4, 5, 6, 7});
  const Tensor train_images = gather_images(data.train_images, {8, 9, 10, 11, 12, 13, 14, 15});
  const std::vector<int> train_labels =
      gather_labels(data.train_labels, {8, 9, 10, 11, 12, 13, 14, 15});

  const Eigen::ArrayXd logits_before = dist.packed();
  const Eigen::ArrayXd head_before = store.param("head.linear.w").data;
  const StepStats stats = search_step(store, dist, v_opt, pi_opt, search_images, search_labels,
                                      train_images, train_labels, cfg, arch_rng);
  CHECK(stats.max_weight >= 1.0 / cfg.K - 1e-12);
  CHECK(stats.max_weight <= 1.0);
  CHECK(stats.ess >= 1.0 - 1e-9);
  CHECK(stats.ess <= cfg.K + 1e-9);
  CHECK(std::isfinite(stats.weighted_train_nll));
  CHECK(!(dist.packed() == logits_before).all());
  CHECK(!(store.param("head.linear.w").data == head_before).all());
}

TEST_CASE("sequential and threaded children produce bit-identical steps") {
  const DatasetHandle data = toy_data();
  const std::vector<int> ids{0, 1, 2, 3, 4, 5, 6, 7};
  const Tensor images = gather_images(data.train_images, ids);
  const std::vector<int> labels = gather_labels(data.train_labels, ids);

  auto run = [&](bool parallel) {
    WeightStore store = WeightStore::build(toy_net(), kToySpace, 3);
    ArchDistribution dist = ArchDistribution::uniform(kToySpace);
    TrainerConfig cfg = toy_trainer();
    cfg.parallel_children = parallel;
    Optimizer v_opt = Optimizer::sgd_momentum({cfg.v_lr, cfg.v_momentum, cfg.v_weight_decay});
    Optimizer pi_opt = Optimizer::adam({cfg.pi_lr, cfg.pi_beta1, cfg.pi_beta2, 1e-8, 0.0});
    Rng arch_rng(derive_seed(cfg.seed, "trainer.arch"));
    StepStats last{};
    for (int step = 0; step < 3; ++step)
      last = search_step(store, dist, v_opt, pi_opt, images, labels, images, labels, cfg, arch_rng);
    return std::make_tuple(dist.packed(), store.param("stem.conv.w").data, last);
  };

  const auto [dist_seq, stem_seq, stats_seq] = run(false);
  const auto [dist_par, stem_par, stats_par] = run(true);
  CHECK((dist_seq == dist_par).all());
  CHECK((stem_seq == stem_par).all());
  CHECK(stats_seq.max_weight == stats_par.max_weight);
  CHECK(stats_seq.ess == stats_par.ess);
  CHECK(stats_seq.weighted_train_nll == stats_par.weighted_train_nll);
}

TEST_CASE("the search loop is reproducible and reports one metrics row per epoch") {
  const DatasetHandle data = toy_data();
  const TrainerConfig cfg = toy_trainer();
  int sink_calls = 0;
  const SearchResult a = run_search(data, kToySpace, toy_net(), cfg, nullptr,
                                    [&](int epoch, const ArchDistribution&, const WeightStore&,
                                        const EpochMetrics& m) {
                                      CHECK(epoch == m.epoch);
                                      ++sink_calls;
                                    });
  CHECK(sink_calls == cfg.epochs);
  REQUIRE(a.metrics.size() == static_cast<std::size_t>(cfg.epochs));
  for (const EpochMetrics& m : a.metrics) {
    CHECK(std::isfinite(m.entropy_nats));
    CHECK(m.mode_val_acc >= 0.0);
    CHECK(m.mode_val_acc <= 1.0);
    CHECK(m.max_weight > 0.0);
    CHECK(m.ess >= 1.0 - 1e-9);
    CHECK(m.seconds >= 0.0);
  }
  CHECK(a.metrics[0].epoch == 0);
  CHECK(a.metrics[1].epoch == 1);

  const SearchResult b = run_search(data, kToySpace, toy_net(), cfg);
  CHECK((a.dist.packed() == b.dist.packed()).all());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    CHECK(a.metrics[i].entropy_nats == b.metrics[i].entropy_nats);
    CHECK(a.metrics[i].mode_val_acc == b.metrics[i].mode_val_acc);
    CHECK(a.metrics[i].max_weight == b.metrics[i].max_weight);
    CHECK(a.metrics[i].ess == b.metrics[i].ess);
  }
  for (const auto& [key, t] : a.store.params()) CHECK((t.data == b.store.params().at(key).data).all());
}

TEST_CASE("an initial distribution seeds fine-tuning exactly") {
  const DatasetHandle data = toy_data();
  ArchDistribution start = ArchDistribution::uniform(kToySpace);
  Eigen::ArrayXd flat = start.packed();
  Rng rng(31);
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = rng.normal();
  start.set_packed(flat);

  TrainerConfig cfg = toy_trainer();
  cfg.epochs = 1;
  cfg.pi_lr = 0.0;  // freeze the logits: the loop must preserve `start` bit-for-bit
  const SearchResult frozen = finetune(start, data, toy_net(), cfg);
  CHECK((frozen.dist.packed() == start.packed()).all());

  cfg.pi_lr = 0.01;
  const SearchResult moved = finetune(start, data, toy_net(), cfg);
  CHECK(!(moved.dist.packed() == start.packed()).all());

  // The loop adopts the space the checkpoint was built over.
  const ArchDistribution narrow = ArchDistribution::uniform(SpaceConfig{1, 2, OpSet::kToy});
  const SearchResult adopted = finetune(narrow, data, toy_net(), cfg);
  CHECK(adopted.dist.config() == narrow.config());
}

TEST_CASE("fine-tuning defaults shorten the schedule") {
  const TrainerConfig ft = finetune_defaults();
  CHECK(ft.epochs == 10);
  CHECK(ft.pi_lr == 0.01);
  CHECK(ft.batch_size == 96);
  CHECK(ft.search_batch_size == 96);
  CHECK(ft.finetune);
}

TEST_CASE("multi-seed search picks the best final accuracy, first on ties") {
  const DatasetHandle data = toy_data();
  TrainerConfig cfg = toy_trainer();
  cfg.epochs = 1;
  std::vector<std::uint64_t> calls;
  const MultiSearchResult result = run_search_multi(
      data, kToySpace, toy_net(), cfg, {4, 4, 9},
      [&](std::uint64_t seed, int, const ArchDistribution&, const WeightStore&,
          const EpochMetrics&) { calls.push_back(seed); });
  REQUIRE(result.runs.size() == 3);
  CHECK(result.seeds == std::vector<std::uint64_t>{4, 4, 9});
  CHECK(calls == std::vector<std::uint64_t>{4, 4, 9});
  // Seeds 4 and 4 tie exactly; the winner must never be the later duplicate.
  const double best = result.runs[result.best_index].metrics.back().mode_val_acc;
  for (const SearchResult& run : result.runs)
    CHECK(best >= run.metrics.back().mode_val_acc);
  CHECK(result.runs[0].metrics.back().mode_val_acc ==
        result.runs[1].metrics.back().mode_val_acc);
  if (result.best_index != 2) CHECK(result.best_index == 0);
}

TEST_CASE("metrics lines are fixed-field json with full precision") {
  EpochMetrics m;
  m.epoch = 3;
  m.entropy_nats = 0.1;
  m.mode_val_acc = 0.5;
  m.max_weight = 1.0 / 3.0;
  m.ess = 2.0;
  m.seconds = 1.25;
  const std::string line = metrics_jsonl_line(m);
  CHECK(line ==
        "{\"epoch\":3,\"entropy_nats\":0.10000000000000001,\"mode_val_acc\":0.5,"
        "\"max_weight\":0.33333333333333331,\"ess\":2,\"seconds\":1.25}");
  CHECK(line.find('\n') == std::string::npos);
}

TEST_CASE("sample accuracy evaluation is order-fixed and batch-folding") {
  const DatasetHandle data = toy_data(16, 8);
  WeightStore store = WeightStore::build(toy_net(), kToySpace, 12);
  store.param("head.linear.w").data.setZero();
  store.param("head.linear.b").data.setZero();
  const ArchSample sample = sample_from_flat_index(kToySpace, 99);

  std::vector<int> ids{0, 1, 2, 3, 4};  // 5 ids with batch 2: batches 2 + 3 under batch stats
  int zeros = 0;
  for (int id : ids)
    if (data.train_labels[static_cast<std::size_t>(id)] == 0) ++zeros;
  const double expect = static_cast<double>(zeros) / 5.0;

  const double acc_batch = evaluate_sample_accuracy(store, sample, data.train_images,
                                                    data.train_labels, ids, 2, true);
  CHECK(acc_batch == doctest::Approx(expect).epsilon(1e-12));
  const double acc_running = evaluate_sample_accuracy(store, sample, data.train_images,
                                                      data.train_labels, ids, 2, false);
  CHECK(acc_running == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("final training reports per-seed accuracies with population spread") {
  const DatasetHandle data = toy_data(32, 16);
  const ArchSample sample = sample_from_flat_index(kToySpace, 12345);
  FinalTrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 16;
  cfg.augment = false;
  cfg.num_seeds = 2;
  cfg.seed = 3;
  const FinalTrainResult result = train_final(sample, kToySpace, toy_net(), data, cfg);
  REQUIRE(result.accuracies.size() == 2);
  for (double acc : result.accuracies) {
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
  }
  const double mean = (result.accuracies[0] + result.accuracies[1]) / 2.0;
  CHECK(result.mean_accuracy == doctest::Approx(mean).epsilon(1e-12));
  const double var = (std::pow(result.accuracies[0] - mean, 2.0) +
                      std::pow(result.accuracies[1] - mean, 2.0)) /
                     2.0;
  CHECK(result.std_accuracy == doctest::Approx(std::sqrt(var)).epsilon(1e-12));

  const FinalTrainResult again = train_final(sample, kToySpace, toy_net(), data, cfg);
  CHECK(again.accuracies == result.accuracies);
}

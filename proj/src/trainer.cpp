#include "parsec/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <thread>

namespace parsec {
namespace {

void require_trainer_config(const TrainerConfig& cfg) {
  if (cfg.K < 1) throw std::invalid_argument("trainer config: K must be >= 1, got " + std::to_string(cfg.K));
  if (cfg.epochs < 1) throw std::invalid_argument("trainer config: epochs must be >= 1");
  if (cfg.batch_size < 2 || cfg.search_batch_size < 2)
    throw std::invalid_argument("trainer config: batch sizes must be >= 2 (batch statistics need it)");
  if (!(cfg.split_fraction > 0.0 && cfg.split_fraction < 1.0))
    throw std::invalid_argument("trainer config: split_fraction must lie in (0,1)");
  if (cfg.weight_temperature <= 0.0)
    throw std::invalid_argument("trainer config: weight_temperature must be positive");
}

std::vector<int> shuffled(std::vector<int> ids, Rng& rng) {
  for (std::size_t i = ids.size(); i > 1; --i)
    std::swap(ids[i - 1], ids[static_cast<std::size_t>(rng.uniform_index(i))]);
  return ids;
}

// Cycling sampler over the search split: deterministic reshuffle per pass,
// dropping a partial tail so every batch has full size.
class SearchBatchCycle {
 public:
  SearchBatchCycle(std::vector<int> ids, int batch, std::uint64_t seed)
      : ids_(std::move(ids)), batch_(batch), seed_(seed) {
    if (static_cast<int>(ids_.size()) < batch_)
      throw std::invalid_argument("search split of " + std::to_string(ids_.size()) +
                                  " examples cannot fill a batch of " + std::to_string(batch_));
    reshuffle();
  }

  std::vector<int> next() {
    if (pos_ + batch_ > static_cast<int>(order_.size())) reshuffle();
    std::vector<int> out(order_.begin() + pos_, order_.begin() + pos_ + batch_);
    pos_ += batch_;
    return out;
  }

 private:
  void reshuffle() {
    Rng rng = derive_rng(seed_, "trainer.search_shuffle." + std::to_string(cycle_++));
    order_ = shuffled(ids_, rng);
    pos_ = 0;
  }

  std::vector<int> ids_;
  std::vector<int> order_;
  int batch_ = 0;
  int pos_ = 0;
  int cycle_ = 0;
  std::uint64_t seed_ = 0;
};

}  // namespace

TrainerConfig finetune_defaults() {
  TrainerConfig cfg;
  cfg.epochs = 10;
  cfg.pi_lr = 0.01;
  cfg.batch_size = 96;
  cfg.search_batch_size = 96;
  cfg.finetune = true;
  return cfg;
}

ImportanceWeights importance_weights(const Eigen::ArrayXd& log_liks, double temperature) {
  if (log_liks.size() < 1) throw std::invalid_argument("importance_weights: no log-likelihoods");
  if (temperature <= 0.0) throw std::invalid_argument("importance_weights: temperature must be positive");
  if (log_liks.isNaN().any())
    throw std::runtime_error("importance_weights: log-likelihoods contain NaN");
  ImportanceWeights iw;
  iw.log_liks = log_liks;
  const Eigen::ArrayXd scaled = log_liks / temperature;
  const double mx = scaled.maxCoeff();
  iw.weights = (scaled - mx).exp();
  iw.weights /= iw.weights.sum();
  return iw;
}

DataSplit split_data(int num_examples, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw std::invalid_argument("split fraction must lie in (0,1), got " + std::to_string(fraction));
  if (num_examples < 2)
    throw std::invalid_argument("cannot split " + std::to_string(num_examples) + " examples");
  std::vector<int> ids(static_cast<std::size_t>(num_examples));
  for (int i = 0; i < num_examples; ++i) ids[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  ids = shuffled(std::move(ids), rng);
  const int search_count = static_cast<int>(std::floor(fraction * num_examples));
  DataSplit split;
  split.search_ids.assign(ids.begin(), ids.begin() + search_count);
  split.train_ids.assign(ids.begin() + search_count, ids.end());
  if (split.search_ids.empty() || split.train_ids.empty())
    throw std::invalid_argument("split fraction " + std::to_string(fraction) + " over " +
                                std::to_string(num_examples) + " examples leaves an empty side");
  return split;
}

Tensor gather_images(const Tensor& all, const std::vector<int>& ids) {
  if (all.rank() != 4) throw std::invalid_argument("gather_images expects a rank-4 image tensor");
  const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(all.dim(1)) * all.dim(2) * all.dim(3);
  Tensor out = Tensor::zeros({static_cast<int>(ids.size()), all.dim(1), all.dim(2), all.dim(3)});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= all.dim(0))
      throw std::invalid_argument("gather_images: index " + std::to_string(id) + " outside dataset of " +
                                  std::to_string(all.dim(0)));
    out.data.segment(static_cast<std::ptrdiff_t>(i) * stride, stride) =
        all.data.segment(static_cast<std::ptrdiff_t>(id) * stride, stride);
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& all, const std::vector<int>& ids) {
  std::vector<int> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(all.at(static_cast<std::size_t>(id)));
  return out;
}

void augment_batch(Tensor& images, Rng& rng) {
  constexpr int kPad = 4;
  const int B = images.dim(0), C = images.dim(1), H = images.dim(2), W = images.dim(3);
  Eigen::ArrayXd scratch(static_cast<std::ptrdiff_t>(C) * H * W);
  for (int b = 0; b < B; ++b) {
    const bool flip = rng.bernoulli(0.5);
    const int dy = static_cast<int>(rng.uniform_index(2 * kPad + 1)) - kPad;
    const int dx = static_cast<int>(rng.uniform_index(2 * kPad + 1)) - kPad;
    const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(b) * C * H * W;
    for (int c = 0; c < C; ++c) {
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          const int sy = y + dy;
          const int sx0 = x + dx;
          const int sx = flip ? W - 1 - sx0 : sx0;
          double v = 0.0;
          if (sy >= 0 && sy < H && sx0 >= 0 && sx0 < W)
            v = images.data(off + (static_cast<std::ptrdiff_t>(c) * H + sy) * W + sx);
          scratch((static_cast<std::ptrdiff_t>(c) * H + y) * W + x) = v;
        }
      }
    }
    images.data.segment(off, scratch.size()) = scratch;
  }
}

StepStats search_step(WeightStore& store, ArchDistribution& dist, Optimizer& v_opt,
                      Optimizer& pi_opt, const Tensor& search_images,
                      const std::vector<int>& search_labels, const Tensor& train_images,
                      const std::vector<int>& train_labels, const TrainerConfig& cfg, Rng& arch_rng,
                      ActivationMeter* meter) {
  const int K = cfg.K;
  std::vector<ArchSample> archs;
  archs.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) archs.push_back(dist.sample(arch_rng));

  ForwardOptions opts;
  opts.training = true;
  opts.update_running = false;
  opts.meter = cfg.parallel_children ? nullptr : meter;

  // (1) Score every child on the search batch for importance weights.
  Eigen::ArrayXd log_liks(K);
  if (cfg.parallel_children) {
    std::vector<std::thread> workers;
    std::vector<std::string> errors(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
      workers.emplace_back([&, k] {
        try {
          ChildExecution ex(store, archs[static_cast<std::size_t>(k)], search_images, search_labels, opts);
          log_liks(k) = ex.sum_log_lik();
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(k)] = e.what();
        }
      });
    for (auto& w : workers) w.join();
    for (const auto& e : errors)
      if (!e.empty()) throw std::runtime_error("search-batch child failed: " + e);
  } else {
    for (int k = 0; k < K; ++k) {
      ChildExecution ex(store, archs[static_cast<std::size_t>(k)], search_images, search_labels, opts);
      log_liks(k) = ex.sum_log_lik();
    }
  }
  if (!log_liks.isFinite().all())
    throw std::runtime_error("search step aborted: non-finite search-batch log-likelihood");
  const ImportanceWeights iw = importance_weights(log_liks, cfg.weight_temperature);

  // (2) Weighted gradient aggregation from the train batch, in sample order.
  std::vector<std::map<std::string, Tensor>> child_grads(static_cast<std::size_t>(K));
  Eigen::ArrayXd train_nll(K);
  const auto run_train_child = [&](int k) {
    ChildExecution ex(store, archs[static_cast<std::size_t>(k)], train_images, train_labels, opts);
    train_nll(k) = ex.mean_nll();
    child_grads[static_cast<std::size_t>(k)] = ex.backward();
  };
  if (cfg.parallel_children) {
    std::vector<std::thread> workers;
    std::vector<std::string> errors(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k)
      workers.emplace_back([&, k] {
        try {
          run_train_child(k);
        } catch (const std::exception& e) {
          errors[static_cast<std::size_t>(k)] = e.what();
        }
      });
    for (auto& w : workers) w.join();
    for (const auto& e : errors)
      if (!e.empty()) throw std::runtime_error("train-batch child failed: " + e);
  } else {
    for (int k = 0; k < K; ++k) run_train_child(k);
  }
  if (!train_nll.isFinite().all())
    throw std::runtime_error("search step aborted: non-finite train-batch loss");

  std::map<std::string, Tensor> agg;
  for (int k = 0; k < K; ++k) {
    const double w = iw.weights(k);
    for (auto& [key, g] : child_grads[static_cast<std::size_t>(k)]) {
      auto it = agg.find(key);
      if (it == agg.end()) {
        Tensor scaled = g;
        scaled.data *= w;
        agg.emplace(key, std::move(scaled));
      } else {
        it->second.data += w * g.data;
      }
    }
    child_grads[static_cast<std::size_t>(k)].clear();
  }

  // (3) Shared-weight update on the touched keys only.
  for (auto& [key, g] : agg) v_opt.step(key, store.param(key).data, g.data);

  // (4) Logits update: ascend the weighted score-function gradient.
  Eigen::ArrayXd pi_grad = Eigen::ArrayXd::Zero(dist.packed_size());
  for (int k = 0; k < K; ++k)
    pi_grad += iw.weights(k) * dist.grad_log_prob(archs[static_cast<std::size_t>(k)]);
  Eigen::ArrayXd packed = dist.packed();
  Eigen::ArrayXd neg = -pi_grad;
  pi_opt.step("pi", packed, neg);
  dist.set_packed(packed);

  StepStats stats;
  stats.max_weight = iw.max_weight();
  stats.ess = iw.ess();
  stats.weighted_train_nll = (iw.weights * train_nll).sum();
  return stats;
}

std::string metrics_jsonl_line(const EpochMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{\"epoch\":%d,\"entropy_nats\":%.17g,\"mode_val_acc\":%.17g,"
                "\"max_weight\":%.17g,\"ess\":%.17g,\"seconds\":%.17g}",
                m.epoch, m.entropy_nats, m.mode_val_acc, m.max_weight, m.ess, m.seconds);
  return buf;
}

double evaluate_sample_accuracy(WeightStore& store, const ArchSample& sample, const Tensor& images,
                                const std::vector<int>& labels, const std::vector<int>& ids,
                                int batch_size, bool batch_stats) {
  if (ids.empty()) throw std::invalid_argument("evaluate_sample_accuracy: empty index set");
  if (batch_size < 1) throw std::invalid_argument("evaluate_sample_accuracy: batch_size must be >= 1");
  ForwardOptions opts;
  opts.training = batch_stats;
  opts.update_running = false;
  double hits = 0.0;
  std::size_t pos = 0;
  while (pos < ids.size()) {
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(batch_size), ids.size() - pos);
    // batch statistics need at least two examples; fold a trailing singleton
    // into this batch
    if (batch_stats && ids.size() - pos - take == 1) ++take;
    std::vector<int> batch_ids(ids.begin() + static_cast<std::ptrdiff_t>(pos),
                               ids.begin() + static_cast<std::ptrdiff_t>(pos + take));
    Tensor imgs = gather_images(images, batch_ids);
    std::vector<int> labs = gather_labels(labels, batch_ids);
    ChildExecution ex(store, sample, imgs, labs, opts);
    hits += ex.accuracy() * static_cast<double>(take);
    pos += take;
  }
  return hits / static_cast<double>(ids.size());
}

SearchResult run_search(const DatasetHandle& data, const SpaceConfig& space,
                        const NetworkConfig& net, const TrainerConfig& cfg,
                        const ArchDistribution* initial, const EpochSink& sink) {
  require_trainer_config(cfg);
  if (initial != nullptr && !(initial->config() == space))
    throw std::invalid_argument("initial distribution was built for a different search space "
                                "(N/P/op_set must match)");
  WeightStore store = WeightStore::build(net, space, derive_seed(cfg.seed, "weights"));
  ArchDistribution dist = initial != nullptr ? *initial : ArchDistribution::uniform(space);
  Optimizer v_opt = Optimizer::sgd_momentum({cfg.v_lr, cfg.v_momentum, cfg.v_weight_decay});
  Optimizer pi_opt = Optimizer::adam({cfg.pi_lr, cfg.pi_beta1, cfg.pi_beta2, 1e-8, 0.0});

  const DataSplit split =
      split_data(data.train_images.dim(0), cfg.split_fraction, derive_seed(cfg.seed, "split"));
  const int steps_per_epoch = static_cast<int>(split.train_ids.size()) / cfg.batch_size;
  if (steps_per_epoch < 1)
    throw std::invalid_argument("train split of " + std::to_string(split.train_ids.size()) +
                                " examples cannot fill a batch of " + std::to_string(cfg.batch_size));
  SearchBatchCycle search_cycle(split.search_ids, cfg.search_batch_size, cfg.seed);
  Rng arch_rng = derive_rng(cfg.seed, "trainer.arch");
  Rng augment_rng = derive_rng(cfg.seed, "trainer.augment");

  SearchResult result{std::move(dist), std::move(store), {}};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng = derive_rng(cfg.seed, "trainer.shuffle." + std::to_string(epoch));
    const std::vector<int> order = shuffled(split.train_ids, shuffle_rng);
    double sum_max_w = 0.0, sum_ess = 0.0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      std::vector<int> train_ids(order.begin() + static_cast<std::ptrdiff_t>(step) * cfg.batch_size,
                                 order.begin() + static_cast<std::ptrdiff_t>(step + 1) * cfg.batch_size);
      Tensor train_imgs = gather_images(data.train_images, train_ids);
      if (cfg.augment) augment_batch(train_imgs, augment_rng);
      std::vector<int> train_labs = gather_labels(data.train_labels, train_ids);
      const std::vector<int> search_ids = search_cycle.next();
      Tensor search_imgs = gather_images(data.train_images, search_ids);
      std::vector<int> search_labs = gather_labels(data.train_labels, search_ids);
      const StepStats stats = search_step(result.store, result.dist, v_opt, pi_opt, search_imgs,
                                          search_labs, train_imgs, train_labs, cfg, arch_rng);
      sum_max_w += stats.max_weight;
      sum_ess += stats.ess;
    }
    const ArchSample mode = result.dist.mode();
    const double acc = evaluate_sample_accuracy(result.store, mode, data.train_images,
                                                data.train_labels, split.search_ids,
                                                cfg.search_batch_size, /*batch_stats=*/true);
    EpochMetrics m;
    m.epoch = epoch;
    m.entropy_nats = result.dist.entropy();
    m.mode_val_acc = acc;
    m.max_weight = sum_max_w / steps_per_epoch;
    m.ess = sum_ess / steps_per_epoch;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.metrics.push_back(m);
    if (sink) sink(epoch, result.dist, result.store, m);
  }
  return result;
}

MultiSearchResult run_search_multi(const DatasetHandle& data, const SpaceConfig& space,
                                   const NetworkConfig& net, TrainerConfig cfg,
                                   const std::vector<std::uint64_t>& seeds,
                                   const SeedEpochSink& sink) {
  if (seeds.empty()) throw std::invalid_argument("run_search_multi: no seeds");
  MultiSearchResult out;
  out.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    cfg.seed = seed;
    EpochSink per_epoch;
    if (sink)
      per_epoch = [&, seed](int epoch, const ArchDistribution& d, const WeightStore& s,
                            const EpochMetrics& m) { sink(seed, epoch, d, s, m); };
    out.runs.push_back(run_search(data, space, net, cfg, nullptr, per_epoch));
  }
  out.best_index = 0;
  for (std::size_t i = 1; i < out.runs.size(); ++i)
    if (out.runs[i].metrics.back().mode_val_acc > out.runs[out.best_index].metrics.back().mode_val_acc)
      out.best_index = i;
  return out;
}

SearchResult finetune(const ArchDistribution& start, const DatasetHandle& data,
                      const NetworkConfig& net, const TrainerConfig& cfg, const EpochSink& sink) {
  return run_search(data, start.config(), net, cfg, &start, sink);
}

TrainedNetwork train_final_one(const ArchSample& sample, const SpaceConfig& space,
                               const NetworkConfig& net, const DatasetHandle& data,
                               const FinalTrainConfig& cfg, std::uint64_t seed) {
  if (cfg.epochs < 1 || cfg.batch_size < 2)
    throw std::invalid_argument("final training needs epochs >= 1 and batch_size >= 2");
  require_valid_sample(space, sample);
  WeightStore store = WeightStore::build_for_sample(net, space, sample, derive_seed(seed, "weights"));
  Optimizer opt = Optimizer::sgd_momentum({cfg.lr, cfg.momentum, cfg.weight_decay});
  Rng augment_rng = derive_rng(seed, "final.augment");
  const int n = data.train_images.dim(0);
  std::vector<int> all_ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all_ids[static_cast<std::size_t>(i)] = i;
  const int steps = n / cfg.batch_size;
  if (steps < 1)
    throw std::invalid_argument("training set of " + std::to_string(n) +
                                " examples cannot fill a batch of " + std::to_string(cfg.batch_size));
  ForwardOptions opts;
  opts.training = true;
  opts.update_running = true;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffle_rng = derive_rng(seed, "final.shuffle." + std::to_string(epoch));
    const std::vector<int> order = shuffled(all_ids, shuffle_rng);
    for (int step = 0; step < steps; ++step) {
      std::vector<int> ids(order.begin() + static_cast<std::ptrdiff_t>(step) * cfg.batch_size,
                           order.begin() + static_cast<std::ptrdiff_t>(step + 1) * cfg.batch_size);
      Tensor imgs = gather_images(data.train_images, ids);
      if (cfg.augment) augment_batch(imgs, augment_rng);
      std::vector<int> labs = gather_labels(data.train_labels, ids);
      ChildExecution ex(store, sample, imgs, labs, opts);
      if (!std::isfinite(ex.mean_nll()))
        throw std::runtime_error("final training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch));
      auto grads = ex.backward();
      for (auto& [key, g] : grads) opt.step(key, store.param(key).data, g.data);
    }
  }
  const int test_n = data.test_images.dim(0);
  std::vector<int> test_ids(static_cast<std::size_t>(test_n));
  for (int i = 0; i < test_n; ++i) test_ids[static_cast<std::size_t>(i)] = i;
  const double acc = evaluate_sample_accuracy(store, sample, data.test_images, data.test_labels,
                                              test_ids, 256, /*batch_stats=*/false);
  return {std::move(store), acc};
}

FinalTrainResult train_final(const ArchSample& sample, const SpaceConfig& space,
                             const NetworkConfig& net, const DatasetHandle& data,
                             const FinalTrainConfig& cfg) {
  if (cfg.num_seeds < 1) throw std::invalid_argument("train_final: num_seeds must be >= 1");
  FinalTrainResult out;
  for (int s = 0; s < cfg.num_seeds; ++s) {
    const std::uint64_t seed = derive_seed(cfg.seed, "final.seed." + std::to_string(s));
    out.accuracies.push_back(train_final_one(sample, space, net, data, cfg, seed).test_accuracy);
  }
  double mean = 0.0;
  for (double a : out.accuracies) mean += a;
  mean /= static_cast<double>(out.accuracies.size());
  double var = 0.0;
  for (double a : out.accuracies) var += (a - mean) * (a - mean);
  var /= static_cast<double>(out.accuracies.size());
  out.mean_accuracy = mean;
  out.std_accuracy = std::sqrt(var);
  return out;
}

}  // namespace parsec

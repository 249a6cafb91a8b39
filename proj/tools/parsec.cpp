// parsec: importance-weighted architecture search over shared weights.
//
// Subcommands cover the full workflow — search, finetune, derive,
// train-final, eval — plus exact-oracle utilities on enumerable spaces:
// oracle-audit, planted, random-baseline, enumerate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "parsec/checkpoint.hpp"
#include "parsec/oracle.hpp"
#include "parsec/run_config.hpp"

namespace fs = std::filesystem;
using namespace parsec;

namespace {

struct CommonOpts {
  std::string config_path;
  std::string preset;
  std::string out;
  std::vector<std::uint64_t> seeds;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON config file (unknown keys rejected)");
  cmd->add_option("--preset", opts.preset, "named preset: toy-oracle or mini-cifar");
  cmd->add_option("--out", opts.out, "output directory (overrides config)");
  cmd->add_option("--seed", opts.seeds, "run seed; repeat the flag for multiple seeds");
}

RunConfig resolve_config(const CommonOpts& opts, const RunConfig& base) {
  RunConfig cfg = base;
  if (!opts.preset.empty()) cfg = preset_run_config(opts.preset);
  if (!opts.config_path.empty()) cfg = load_run_config(opts.config_path, cfg);
  if (!opts.out.empty()) cfg.output_dir = opts.out;
  if (!opts.seeds.empty()) cfg.seeds = opts.seeds;
  return cfg;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

std::string grouped_digits(BigCount v) {
  const std::string plain = big_to_string(v);
  std::string out;
  const int n = static_cast<int>(plain.size());
  for (int i = 0; i < n; ++i) {
    if (i > 0 && (n - i) % 3 == 0) out += ',';
    out += plain[static_cast<std::size_t>(i)];
  }
  return out;
}

std::string epoch_name(const char* stem, int epoch, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_epoch_%04d.%s", stem, epoch, ext);
  return buf;
}

// Writes per-epoch artifacts for one seed: metrics JSONL plus distribution
// and weight checkpoints.
EpochSink make_artifact_sink(const fs::path& seed_dir) {
  auto metrics = std::make_shared<std::ofstream>(seed_dir / "metrics.jsonl", std::ios::binary);
  if (!*metrics)
    throw std::runtime_error("cannot open " + (seed_dir / "metrics.jsonl").string() +
                             " for writing");
  return [seed_dir, metrics](int epoch, const ArchDistribution& dist, const WeightStore& store,
                             const EpochMetrics& m) {
    dist.save((seed_dir / epoch_name("dist", epoch, "json")).string());
    save_weights(store, (seed_dir / epoch_name("weights", epoch, "psec")).string());
    *metrics << metrics_jsonl_line(m) << "\n";
    metrics->flush();
  };
}

struct SeedRun {
  std::uint64_t seed;
  SearchResult result;
};

// Shared by `search` and `finetune`: per-seed runs with artifacts, then
// best-seed selection by final mode validation accuracy.
int run_search_command(RunConfig cfg, const ArchDistribution* initial) {
  const fs::path out(cfg.output_dir);
  fs::create_directories(out);
  write_run_config(cfg, (out / "config.json").string());
  const DatasetHandle data = resolve_dataset(cfg.dataset, out.string());
  require_network_matches_dataset(cfg.network, data);
  const SpaceConfig space = initial != nullptr ? initial->config() : cfg.space;

  std::vector<SeedRun> runs;
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path seed_dir = out / ("seed-" + std::to_string(seed));
    fs::create_directories(seed_dir);
    TrainerConfig tcfg = cfg.trainer;
    tcfg.seed = seed;
    SearchResult result =
        run_search(data, space, cfg.network, tcfg, initial, make_artifact_sink(seed_dir));
    result.dist.save((seed_dir / "dist_final.json").string());
    save_weights(result.store, (seed_dir / "weights_final.psec").string());
    const EpochMetrics& last = result.metrics.back();
    std::cout << "seed " << seed << ": entropy " << last.entropy_nats << " nats, mode val acc "
              << last.mode_val_acc << "\n";
    runs.push_back({seed, std::move(result)});
  }

  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].result.metrics.back().mode_val_acc >
        runs[best].result.metrics.back().mode_val_acc)
      best = i;
  const SeedRun& winner = runs[best];
  winner.result.dist.save((out / "best_dist.json").string());
  const std::string genotype = describe_genotype(space, winner.result.dist.mode());
  write_text_file((out / "genotype.txt").string(), genotype);
  std::cout << "best seed by validation accuracy: " << winner.seed << "\n" << genotype;
  return 0;
}

// Landscape selection shared by the oracle subcommands.
struct LandscapeOpts {
  std::string table_path;
  std::string target_path;
  double tau = 1.0;
};

void add_landscape(CLI::App* cmd, LandscapeOpts& opts, double default_tau) {
  opts.tau = default_tau;
  cmd->add_option("--table", opts.table_path,
                  "landscape table file ('<genotype> -> <value>' lines)");
  cmd->add_option("--target", opts.target_path,
                  "genotype file of the planted optimum (default: architecture 0)");
  cmd->add_option("--tau", opts.tau, "planted landscape gap per differing slot")->capture_default_str();
}

ArchSample landscape_target(const SpaceConfig& space, const LandscapeOpts& opts) {
  if (opts.target_path.empty()) return sample_from_flat_index(space, 0);
  return parse_genotype(space, read_text_file(opts.target_path));
}

Landscape make_landscape(const SpaceConfig& space, const LandscapeOpts& opts) {
  if (!opts.table_path.empty()) return load_landscape_table(space, opts.table_path);
  return planted_hamming_landscape(space, landscape_target(space, opts), opts.tau);
}

int main_impl(int argc, char** argv) {
  CLI::App app{"importance-weighted architecture search over shared weights"};
  app.require_subcommand(1);

  // --- search ---------------------------------------------------------
  CommonOpts search_opts;
  CLI::App* search_cmd =
      app.add_subcommand("search", "run the distribution + shared-weight search");
  add_common(search_cmd, search_opts);
  search_cmd->callback([&] {
    run_search_command(resolve_config(search_opts, default_run_config()), nullptr);
  });

  // --- finetune -------------------------------------------------------
  CommonOpts ft_opts;
  std::string ft_dist_path;
  CLI::App* ft_cmd = app.add_subcommand(
      "finetune", "continue search from a saved distribution on a fresh network");
  add_common(ft_cmd, ft_opts);
  ft_cmd->add_option("--dist", ft_dist_path, "starting distribution checkpoint")->required();
  ft_cmd->callback([&] {
    RunConfig base = default_run_config();
    base.trainer = finetune_defaults();
    RunConfig cfg = resolve_config(ft_opts, base);
    if (!ft_opts.preset.empty() && ft_opts.config_path.empty()) cfg.trainer = finetune_defaults();
    cfg.trainer.finetune = true;
    const ArchDistribution start = ArchDistribution::load(ft_dist_path);
    if (!(start.config() == cfg.space))
      throw std::runtime_error(
          "distribution checkpoint " + ft_dist_path +
          " describes a different search space than the config (nodes/ops/op_set must match)");
    fs::create_directories(cfg.output_dir);
    // Transfer contract artifact: the distribution exactly as loaded.
    start.save((fs::path(cfg.output_dir) / "dist_step0.json").string());
    run_search_command(std::move(cfg), &start);
  });

  // --- derive ---------------------------------------------------------
  std::string derive_dist_path;
  CLI::App* derive_cmd =
      app.add_subcommand("derive", "print the mode genotype of a saved distribution");
  derive_cmd->add_option("--dist", derive_dist_path, "distribution checkpoint")->required();
  derive_cmd->callback([&] {
    const ArchDistribution dist = ArchDistribution::load(derive_dist_path);
    std::cout << describe_genotype(dist.config(), dist.mode());
  });

  // --- train-final ----------------------------------------------------
  CommonOpts tf_opts;
  std::string tf_genotype_path;
  CLI::App* tf_cmd =
      app.add_subcommand("train-final", "train a fixed architecture from scratch, multi-seed");
  add_common(tf_cmd, tf_opts);
  tf_cmd->add_option("--genotype", tf_genotype_path, "genotype text file")->required();
  tf_cmd->callback([&] {
    RunConfig cfg = resolve_config(tf_opts, default_run_config());
    if (!tf_opts.seeds.empty()) cfg.final_train.seed = tf_opts.seeds.front();
    const fs::path out(cfg.output_dir);
    fs::create_directories(out);
    write_run_config(cfg, (out / "config.json").string());
    const ArchSample sample = parse_genotype(cfg.space, read_text_file(tf_genotype_path));
    write_text_file((out / "genotype.txt").string(), describe_genotype(cfg.space, sample));
    const DatasetHandle data = resolve_dataset(cfg.dataset, out.string());
    require_network_matches_dataset(cfg.network, data);
    std::vector<double> accuracies;
    for (int s = 0; s < cfg.final_train.num_seeds; ++s) {
      const std::uint64_t seed =
          derive_seed(cfg.final_train.seed, "final.seed." + std::to_string(s));
      TrainedNetwork trained =
          train_final_one(sample, cfg.space, cfg.network, data, cfg.final_train, seed);
      save_weights(trained.store,
                   (out / ("final_seed" + std::to_string(s) + ".psec")).string());
      std::cout << "seed " << s << ": test accuracy " << trained.test_accuracy << "\n";
      accuracies.push_back(trained.test_accuracy);
    }
    double mean = 0.0;
    for (double a : accuracies) mean += a;
    mean /= static_cast<double>(accuracies.size());
    double var = 0.0;
    for (double a : accuracies) var += (a - mean) * (a - mean);
    var /= static_cast<double>(accuracies.size());
    nlohmann::ordered_json doc;
    doc["accuracies"] = accuracies;
    doc["mean_accuracy"] = mean;
    doc["std_accuracy"] = std::sqrt(var);
    write_text_file((out / "final.json").string(), doc.dump(2) + "\n");
    std::cout << "test accuracy: " << mean << " +/- " << std::sqrt(var) << " over "
              << accuracies.size() << " seeds\n";
  });

  // --- eval -----------------------------------------------------------
  CommonOpts eval_opts;
  std::string eval_genotype_path, eval_weights_path;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "evaluate saved weights for a fixed architecture on the test set");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--genotype", eval_genotype_path, "genotype text file")->required();
  eval_cmd->add_option("--weights", eval_weights_path, "weight checkpoint (.psec)")->required();
  eval_cmd->callback([&] {
    RunConfig cfg = resolve_config(eval_opts, default_run_config());
    const ArchSample sample = parse_genotype(cfg.space, read_text_file(eval_genotype_path));
    const DatasetHandle data = resolve_dataset(cfg.dataset, cfg.output_dir);
    require_network_matches_dataset(cfg.network, data);
    WeightStore store = WeightStore::build_for_sample(cfg.network, cfg.space, sample, 0);
    load_weights_into(store, eval_weights_path);
    std::vector<int> ids(static_cast<std::size_t>(data.test_images.dim(0)));
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
    const double acc = evaluate_sample_accuracy(store, sample, data.test_images, data.test_labels,
                                                ids, 256, /*batch_stats=*/false);
    std::cout << "test accuracy: " << acc << "\n";
  });

  // --- oracle-audit ---------------------------------------------------
  CommonOpts audit_opts;
  LandscapeOpts audit_landscape;
  std::string audit_dist_path;
  int audit_K = 16, audit_trials = 10000;
  CLI::App* audit_cmd = app.add_subcommand(
      "oracle-audit", "bias/variance audit of the K-sample gradient estimator on a tiny space");
  add_common(audit_cmd, audit_opts);
  add_landscape(audit_cmd, audit_landscape, 1.0);
  audit_cmd->add_option("--dist", audit_dist_path, "distribution checkpoint (default: uniform)");
  audit_cmd->add_option("--K", audit_K, "samples per estimate")->capture_default_str();
  audit_cmd->add_option("--trials", audit_trials, "independent estimates")->capture_default_str();
  audit_cmd->callback([&] {
    RunConfig cfg = resolve_config(audit_opts, preset_run_config("toy-oracle"));
    const ArchDistribution dist = audit_dist_path.empty()
                                      ? ArchDistribution::uniform(cfg.space)
                                      : ArchDistribution::load(audit_dist_path);
    const Landscape landscape = make_landscape(dist.config(), audit_landscape);
    const AuditReport report =
        estimator_audit(landscape, dist, audit_K, audit_trials, cfg.seeds.front());
    if (!audit_opts.out.empty() || !cfg.output_dir.empty()) {
      const fs::path out(cfg.output_dir);
      fs::create_directories(out);
      write_run_config(cfg, (out / "config.json").string());
      write_text_file((out / "audit.json").string(), audit_report_json(report));
    }
    std::cout << "K=" << report.K << " trials=" << report.trials
              << " max |mean-exact|/SE over coordinates: " << report.max_abs_deviation_ses << "\n";
  });

  // --- planted --------------------------------------------------------
  CommonOpts planted_opts;
  LandscapeOpts planted_landscape;
  RecoveryConfig rec_cfg;
  CLI::App* planted_cmd = app.add_subcommand(
      "planted", "recover a planted optimum with the distribution-update loop, multi-seed");
  add_common(planted_cmd, planted_opts);
  add_landscape(planted_cmd, planted_landscape, 2.0);
  planted_cmd->add_option("--steps", rec_cfg.steps, "optimization steps")->capture_default_str();
  planted_cmd->add_option("--K", rec_cfg.K, "samples per step")->capture_default_str();
  planted_cmd->add_option("--lr", rec_cfg.lr, "logit learning rate")->capture_default_str();
  planted_cmd->callback([&] {
    RunConfig cfg = resolve_config(planted_opts, preset_run_config("toy-oracle"));
    if (!planted_landscape.table_path.empty())
      throw std::runtime_error("planted requires an analytic planted landscape, not --table");
    const ArchSample target = landscape_target(cfg.space, planted_landscape);
    const Landscape landscape =
        planted_hamming_landscape(cfg.space, target, planted_landscape.tau);
    const RecoveryResult result = planted_recovery(landscape, target, rec_cfg, cfg.seeds);
    nlohmann::ordered_json doc;
    doc["steps"] = rec_cfg.steps;
    doc["K"] = rec_cfg.K;
    doc["tau"] = planted_landscape.tau;
    doc["recovery_rate"] = result.recovery_rate;
    doc["initial_entropy"] = result.initial_entropy;
    doc["mean_final_entropy_recovered"] = result.mean_final_entropy_recovered;
    auto runs = nlohmann::ordered_json::array();
    for (const RecoveryRun& run : result.runs)
      runs.push_back({{"seed", run.seed},
                      {"recovered", run.recovered},
                      {"final_entropy", run.final_entropy}});
    doc["runs"] = std::move(runs);
    const fs::path out(cfg.output_dir);
    fs::create_directories(out);
    write_run_config(cfg, (out / "config.json").string());
    write_text_file((out / "recovery.json").string(), doc.dump(2) + "\n");
    std::cout << "recovered " << result.recovery_rate * static_cast<double>(result.runs.size())
              << "/" << result.runs.size() << " seeds; initial entropy "
              << result.initial_entropy << " nats, mean final entropy (recovered) "
              << result.mean_final_entropy_recovered << "\n";
  });

  // --- random-baseline ------------------------------------------------
  CommonOpts rb_opts;
  LandscapeOpts rb_landscape;
  std::uint64_t rb_budget = 0;
  CLI::App* rb_cmd =
      app.add_subcommand("random-baseline", "best-of-budget uniform random search on a landscape");
  add_common(rb_cmd, rb_opts);
  add_landscape(rb_cmd, rb_landscape, 2.0);
  rb_cmd->add_option("--budget", rb_budget, "architectures to evaluate")->required();
  rb_cmd->callback([&] {
    RunConfig cfg = resolve_config(rb_opts, preset_run_config("toy-oracle"));
    const Landscape landscape = make_landscape(cfg.space, rb_landscape);
    const BaselineResult result = random_baseline(landscape, rb_budget, cfg.seeds.front());
    nlohmann::ordered_json doc;
    doc["budget"] = rb_budget;
    doc["evaluated"] = result.evaluated;
    doc["best_score"] = result.best_score;
    const fs::path out(cfg.output_dir);
    fs::create_directories(out);
    write_run_config(cfg, (out / "config.json").string());
    write_text_file((out / "baseline.json").string(), doc.dump(2) + "\n");
    write_text_file((out / "genotype.txt").string(),
                    describe_genotype(cfg.space, result.best));
    std::cout << "best score " << result.best_score << " after " << result.evaluated
              << " evaluations\n"
              << describe_genotype(cfg.space, result.best);
  });

  // --- enumerate ------------------------------------------------------
  int enum_N = 4, enum_P = 7;
  std::string enum_op_set = "conv7";
  CLI::App* enum_cmd = app.add_subcommand("enumerate", "print search-space statistics");
  enum_cmd->add_option("--N", enum_N, "intermediate nodes per cell")->capture_default_str();
  enum_cmd->add_option("--P", enum_P, "operations per slot")->capture_default_str();
  enum_cmd->add_option("--op-set", enum_op_set, "operation registry id")->capture_default_str();
  enum_cmd->callback([&] {
    const SpaceConfig space{enum_N, enum_P, op_set_from_id(enum_op_set)};
    op_names(space);
    for (int n = 1; n <= space.num_nodes; ++n)
      std::cout << "node " << n << ": " << n + 1 << " inputs x " << space.num_ops << " ops = "
                << slot_cardinality(space, n) << " choices per slot\n";
    std::cout << "per-cell architectures: " << grouped_digits(cell_space_size(space)) << "\n";
    std::cout << "joint (normal + reduction): " << grouped_digits(space_size(space)) << "\n";
  });

  CLI11_PARSE(app, argc, argv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return main_impl(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

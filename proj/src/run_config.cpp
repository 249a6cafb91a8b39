#include "parsec/run_config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace parsec {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Strict reader over one JSON object level: every key must be consumed.
class StrictObject {
 public:
  StrictObject(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object())
      throw std::invalid_argument("config: '" + path_ + "' must be a JSON object");
  }

  bool has(const std::string& key) {
    const bool present = node_.contains(key);
    if (present) consumed_.insert(key);
    return present;
  }

  const json& at(const std::string& key) {
    consumed_.insert(key);
    return node_.at(key);
  }

  template <typename T>
  void read(const std::string& key, T& target) {
    if (!node_.contains(key)) return;
    consumed_.insert(key);
    try {
      target = node_.at(key).get<T>();
    } catch (const json::exception&) {
      throw std::invalid_argument("config: '" + join(key) + "' has the wrong type");
    }
  }

  void finish() {
    for (auto it = node_.begin(); it != node_.end(); ++it)
      if (!consumed_.count(it.key()))
        throw std::invalid_argument("config: unknown key '" + join(it.key()) + "'");
  }

  std::string join(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> consumed_;
};

void apply_space(const json& node, SpaceConfig& cfg) {
  StrictObject obj(node, "space");
  obj.read("num_nodes", cfg.num_nodes);
  obj.read("num_ops", cfg.num_ops);
  if (obj.has("op_set")) {
    const std::string id = obj.at("op_set").get<std::string>();
    cfg.op_set = op_set_from_id(id);
  }
  obj.finish();
}

void apply_network(const json& node, NetworkConfig& cfg) {
  StrictObject obj(node, "network");
  obj.read("num_cells", cfg.num_cells);
  obj.read("init_channels", cfg.init_channels);
  obj.read("num_classes", cfg.num_classes);
  obj.read("input_channels", cfg.input_channels);
  obj.read("input_height", cfg.input_height);
  obj.read("input_width", cfg.input_width);
  obj.read("reduction_period", cfg.reduction_period);
  obj.finish();
}

void apply_trainer(const json& node, TrainerConfig& cfg) {
  StrictObject obj(node, "trainer");
  obj.read("K", cfg.K);
  obj.read("epochs", cfg.epochs);
  obj.read("batch_size", cfg.batch_size);
  obj.read("search_batch_size", cfg.search_batch_size);
  obj.read("pi_lr", cfg.pi_lr);
  obj.read("pi_beta1", cfg.pi_beta1);
  obj.read("pi_beta2", cfg.pi_beta2);
  obj.read("v_lr", cfg.v_lr);
  obj.read("v_momentum", cfg.v_momentum);
  obj.read("v_weight_decay", cfg.v_weight_decay);
  obj.read("split_fraction", cfg.split_fraction);
  obj.read("weight_temperature", cfg.weight_temperature);
  obj.read("augment", cfg.augment);
  obj.read("parallel_children", cfg.parallel_children);
  obj.read("finetune", cfg.finetune);
  obj.finish();
}

void apply_final(const json& node, FinalTrainConfig& cfg) {
  StrictObject obj(node, "final");
  obj.read("epochs", cfg.epochs);
  obj.read("batch_size", cfg.batch_size);
  obj.read("lr", cfg.lr);
  obj.read("momentum", cfg.momentum);
  obj.read("weight_decay", cfg.weight_decay);
  obj.read("augment", cfg.augment);
  obj.read("num_seeds", cfg.num_seeds);
  obj.read("seed", cfg.seed);
  obj.finish();
}

void apply_synthetic(const json& node, SyntheticSpec& cfg) {
  StrictObject obj(node, "dataset.synthetic");
  obj.read("kind", cfg.kind);
  obj.read("num_classes", cfg.num_classes);
  obj.read("num_train", cfg.num_train);
  obj.read("num_test", cfg.num_test);
  obj.read("channels", cfg.channels);
  obj.read("height", cfg.height);
  obj.read("width", cfg.width);
  obj.read("separation", cfg.separation);
  obj.finish();
}

void apply_dataset(const json& node, DatasetConfig& cfg) {
  StrictObject obj(node, "dataset");
  obj.read("kind", cfg.kind);
  obj.read("dir", cfg.dir);
  obj.read("train_subset", cfg.train_subset);
  obj.read("test_subset", cfg.test_subset);
  obj.read("seed", cfg.seed);
  if (obj.has("synthetic")) apply_synthetic(obj.at("synthetic"), cfg.synthetic);
  obj.finish();
  if (cfg.kind != "synthetic" && cfg.kind != "cifar10-binary")
    throw std::invalid_argument("config: dataset.kind must be 'synthetic' or 'cifar10-binary', got '" +
                                cfg.kind + "'");
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

std::vector<std::string> preset_names() { return {"toy-oracle", "mini-cifar"}; }

RunConfig preset_run_config(const std::string& name) {
  RunConfig cfg;
  if (name == "toy-oracle") {
    cfg.space = SpaceConfig{1, 2, OpSet::kToy};
    cfg.network.num_cells = 2;
    cfg.network.init_channels = 4;
    cfg.network.num_classes = 4;
    cfg.network.input_height = 16;
    cfg.network.input_width = 16;
    cfg.network.reduction_period = 0;
    cfg.trainer.K = 16;
    cfg.trainer.epochs = 2;
    cfg.trainer.batch_size = 32;
    cfg.trainer.search_batch_size = 32;
    cfg.final_train.epochs = 4;
    cfg.final_train.batch_size = 32;
    cfg.final_train.augment = false;
    cfg.dataset.kind = "synthetic";
    cfg.dataset.synthetic.num_classes = 4;
    cfg.dataset.synthetic.num_train = 256;
    cfg.dataset.synthetic.num_test = 128;
    cfg.dataset.synthetic.height = 16;
    cfg.dataset.synthetic.width = 16;
    cfg.output_dir = "runs/toy-oracle";
    return cfg;
  }
  if (name == "mini-cifar") {
    cfg.space = SpaceConfig{2, 7, OpSet::kConv7};
    cfg.network.num_cells = 4;
    cfg.network.init_channels = 8;
    cfg.network.reduction_period = 3;
    cfg.trainer.K = 8;
    cfg.trainer.epochs = 10;
    cfg.trainer.batch_size = 64;
    cfg.trainer.search_batch_size = 64;
    // Temperature equal to the search batch size makes the weights a softmax
    // over mean per-example log-likelihood. At temperature 1 the summed
    // log-likelihoods differ by tens of nats, one child takes nearly all the
    // weight every step, and the convolutional paths never get trained.
    cfg.trainer.weight_temperature = 64.0;
    cfg.final_train.epochs = 4;
    cfg.final_train.batch_size = 96;
    cfg.final_train.num_seeds = 1;
    cfg.dataset.kind = "cifar10-binary";
    cfg.dataset.train_subset = 2000;
    cfg.dataset.test_subset = 1000;
    cfg.output_dir = "runs/mini-cifar";
    return cfg;
  }
  throw std::invalid_argument("unknown preset '" + name + "' (known: toy-oracle, mini-cifar)");
}

std::string run_config_json(const RunConfig& cfg) {
  ordered_json doc;
  doc["space"] = {{"num_nodes", cfg.space.num_nodes},
                  {"num_ops", cfg.space.num_ops},
                  {"op_set", op_set_id(cfg.space.op_set)}};
  doc["network"] = {{"num_cells", cfg.network.num_cells},
                    {"init_channels", cfg.network.init_channels},
                    {"num_classes", cfg.network.num_classes},
                    {"input_channels", cfg.network.input_channels},
                    {"input_height", cfg.network.input_height},
                    {"input_width", cfg.network.input_width},
                    {"reduction_period", cfg.network.reduction_period}};
  doc["trainer"] = {{"K", cfg.trainer.K},
                    {"epochs", cfg.trainer.epochs},
                    {"batch_size", cfg.trainer.batch_size},
                    {"search_batch_size", cfg.trainer.search_batch_size},
                    {"pi_lr", cfg.trainer.pi_lr},
                    {"pi_beta1", cfg.trainer.pi_beta1},
                    {"pi_beta2", cfg.trainer.pi_beta2},
                    {"v_lr", cfg.trainer.v_lr},
                    {"v_momentum", cfg.trainer.v_momentum},
                    {"v_weight_decay", cfg.trainer.v_weight_decay},
                    {"split_fraction", cfg.trainer.split_fraction},
                    {"weight_temperature", cfg.trainer.weight_temperature},
                    {"augment", cfg.trainer.augment},
                    {"parallel_children", cfg.trainer.parallel_children},
                    {"finetune", cfg.trainer.finetune}};
  doc["final"] = {{"epochs", cfg.final_train.epochs},
                  {"batch_size", cfg.final_train.batch_size},
                  {"lr", cfg.final_train.lr},
                  {"momentum", cfg.final_train.momentum},
                  {"weight_decay", cfg.final_train.weight_decay},
                  {"augment", cfg.final_train.augment},
                  {"num_seeds", cfg.final_train.num_seeds},
                  {"seed", cfg.final_train.seed}};
  doc["dataset"] = {{"kind", cfg.dataset.kind},
                    {"dir", cfg.dataset.dir},
                    {"train_subset", cfg.dataset.train_subset},
                    {"test_subset", cfg.dataset.test_subset},
                    {"seed", cfg.dataset.seed},
                    {"synthetic",
                     {{"kind", cfg.dataset.synthetic.kind},
                      {"num_classes", cfg.dataset.synthetic.num_classes},
                      {"num_train", cfg.dataset.synthetic.num_train},
                      {"num_test", cfg.dataset.synthetic.num_test},
                      {"channels", cfg.dataset.synthetic.channels},
                      {"height", cfg.dataset.synthetic.height},
                      {"width", cfg.dataset.synthetic.width},
                      {"separation", cfg.dataset.synthetic.separation}}}};
  doc["output_dir"] = cfg.output_dir;
  doc["seeds"] = cfg.seeds;
  return doc.dump(2) + "\n";
}

void write_run_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << run_config_json(cfg);
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

RunConfig run_config_from_json_text(const std::string& text, const RunConfig& base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig cfg = base;
  StrictObject obj(doc, "");
  if (obj.has("space")) apply_space(obj.at("space"), cfg.space);
  if (obj.has("network")) apply_network(obj.at("network"), cfg.network);
  if (obj.has("trainer")) apply_trainer(obj.at("trainer"), cfg.trainer);
  if (obj.has("final")) apply_final(obj.at("final"), cfg.final_train);
  if (obj.has("dataset")) apply_dataset(obj.at("dataset"), cfg.dataset);
  obj.read("output_dir", cfg.output_dir);
  obj.read("seeds", cfg.seeds);
  obj.finish();
  if (cfg.seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  op_names(cfg.space);  // validates num_ops against the op set
  return cfg;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return run_config_from_json_text(text, base);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

DatasetHandle resolve_dataset(const DatasetConfig& cfg, const std::string& run_dir) {
  if (cfg.kind == "synthetic") {
    DatasetHandle data = gen_synthetic(cfg.synthetic, cfg.seed);
    if (cfg.train_subset > 0 || cfg.test_subset > 0)
      throw std::invalid_argument(
          "dataset subsets apply to cifar10-binary; size synthetic data via "
          "dataset.synthetic.num_train/num_test");
    return data;
  }
  std::string dir = cfg.dir;
  if (dir.empty()) {
    const char* env = std::getenv("PARSEC_CIFAR10_DIR");
    if (env != nullptr && env[0] != '\0') dir = env;
  }
  if (dir.empty()) {
    dir = (std::filesystem::path(run_dir) / "standin-cifar10").string();
    const bool complete = std::filesystem::exists(std::filesystem::path(dir) / "test_batch.bin");
    if (!complete) {
      std::filesystem::create_directories(dir);
      write_standin_cifar10(dir, cfg.seed);
    }
  }
  return load_cifar10(dir, cfg.train_subset, cfg.test_subset, cfg.seed);
}

void require_network_matches_dataset(const NetworkConfig& net, const DatasetHandle& data) {
  if (net.num_classes != data.num_classes)
    throw std::invalid_argument("network expects " + std::to_string(net.num_classes) +
                                " classes but the dataset has " + std::to_string(data.num_classes));
  if (net.input_channels != data.channels || net.input_height != data.height ||
      net.input_width != data.width)
    throw std::invalid_argument(
        "network input " + std::to_string(net.input_channels) + "x" +
        std::to_string(net.input_height) + "x" + std::to_string(net.input_width) +
        " does not match dataset images " + std::to_string(data.channels) + "x" +
        std::to_string(data.height) + "x" + std::to_string(data.width));
}

}  // namespace parsec

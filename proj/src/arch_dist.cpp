#include "parsec/arch_dist.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace parsec {
namespace {

Eigen::VectorXd stable_softmax(const Eigen::VectorXd& x) {
  const double mx = x.maxCoeff();
  Eigen::VectorXd p = (x.array() - mx).exp();
  p /= p.sum();
  return p;
}

}  // namespace

ArchDistribution::ArchDistribution(SpaceConfig cfg) : cfg_(std::move(cfg)) {
  op_names(cfg_);  // validates the config
  slots_.reserve(static_cast<std::size_t>(4 * cfg_.num_nodes));
  for (int cell = 0; cell < 2; ++cell)
    for (int node = 1; node <= cfg_.num_nodes; ++node)
      for (int slot = 0; slot < 2; ++slot)
        slots_.push_back(Eigen::VectorXd::Zero(slot_cardinality(cfg_, node)));
}

ArchDistribution ArchDistribution::uniform(SpaceConfig cfg) { return ArchDistribution(std::move(cfg)); }

int ArchDistribution::slot_index(int cell, int node, int slot) const {
  if (cell < 0 || cell > 1 || node < 1 || node > cfg_.num_nodes || slot < 0 || slot > 1)
    throw std::invalid_argument("slot_index: (cell=" + std::to_string(cell) + ", node=" +
                                std::to_string(node) + ", slot=" + std::to_string(slot) +
                                ") outside the distribution's structure");
  return (cell * cfg_.num_nodes + (node - 1)) * 2 + slot;
}

Eigen::VectorXd& ArchDistribution::logits(int cell, int node, int slot) {
  return slots_[static_cast<std::size_t>(slot_index(cell, node, slot))];
}

const Eigen::VectorXd& ArchDistribution::logits(int cell, int node, int slot) const {
  return slots_[static_cast<std::size_t>(slot_index(cell, node, slot))];
}

std::int64_t ArchDistribution::packed_size() const {
  std::int64_t n = 0;
  for (const auto& v : slots_) n += v.size();
  return n;
}

Eigen::ArrayXd ArchDistribution::packed() const {
  Eigen::ArrayXd flat(packed_size());
  std::int64_t off = 0;
  for (const auto& v : slots_) {
    flat.segment(off, v.size()) = v.array();
    off += v.size();
  }
  return flat;
}

void ArchDistribution::set_packed(const Eigen::ArrayXd& flat) {
  if (flat.size() != packed_size())
    throw std::invalid_argument("set_packed: expected " + std::to_string(packed_size()) +
                                " values, got " + std::to_string(flat.size()));
  std::int64_t off = 0;
  for (auto& v : slots_) {
    v = flat.segment(off, v.size()).matrix();
    off += v.size();
  }
  require_finite();
}

void ArchDistribution::require_finite() const {
  for (const auto& v : slots_)
    if (!v.array().isFinite().all())
      throw std::runtime_error("architecture distribution logits contain non-finite values");
}

ArchSample ArchDistribution::sample(Rng& rng) const {
  ArchSample out;
  for (int cell = 0; cell < 2; ++cell) {
    CellSample& cs = cell == 0 ? out.normal : out.reduction;
    cs.pairs.resize(static_cast<std::size_t>(2 * cfg_.num_nodes));
    for (int node = 1; node <= cfg_.num_nodes; ++node) {
      for (int slot = 0; slot < 2; ++slot) {
        const Eigen::VectorXd p = stable_softmax(logits(cell, node, slot));
        const double u = rng.uniform();
        double cdf = 0.0;
        int chosen = static_cast<int>(p.size()) - 1;
        for (int c = 0; c < p.size(); ++c) {
          cdf += p(c);
          if (u < cdf) {
            chosen = c;
            break;
          }
        }
        cs.pairs[static_cast<std::size_t>((node - 1) * 2 + slot)] = category_pair(cfg_, node, chosen);
      }
    }
  }
  return out;
}

double ArchDistribution::log_prob(const ArchSample& sample) const {
  require_valid_sample(cfg_, sample);
  double total = 0.0;
  for (int cell = 0; cell < 2; ++cell) {
    const CellSample& cs = cell == 0 ? sample.normal : sample.reduction;
    for (int node = 1; node <= cfg_.num_nodes; ++node) {
      for (int slot = 0; slot < 2; ++slot) {
        const Eigen::VectorXd& x = logits(cell, node, slot);
        const double mx = x.maxCoeff();
        const double lse = mx + std::log((x.array() - mx).exp().sum());
        const int cat =
            pair_category(cfg_, node, cs.pairs[static_cast<std::size_t>((node - 1) * 2 + slot)]);
        total += x(cat) - lse;
      }
    }
  }
  return total;
}

Eigen::ArrayXd ArchDistribution::grad_log_prob(const ArchSample& sample) const {
  require_valid_sample(cfg_, sample);
  Eigen::ArrayXd grad(packed_size());
  std::int64_t off = 0;
  for (int cell = 0; cell < 2; ++cell) {
    const CellSample& cs = cell == 0 ? sample.normal : sample.reduction;
    for (int node = 1; node <= cfg_.num_nodes; ++node) {
      for (int slot = 0; slot < 2; ++slot) {
        const Eigen::VectorXd& x = logits(cell, node, slot);
        const int cat =
            pair_category(cfg_, node, cs.pairs[static_cast<std::size_t>((node - 1) * 2 + slot)]);
        Eigen::VectorXd g = -stable_softmax(x);
        g(cat) += 1.0;
        grad.segment(off, x.size()) = g.array();
        off += x.size();
      }
    }
  }
  return grad;
}

double ArchDistribution::entropy() const {
  double total = 0.0;
  for (const auto& x : slots_) {
    const double mx = x.maxCoeff();
    const Eigen::ArrayXd y = x.array() - mx;
    const Eigen::ArrayXd e = y.exp();
    const double z = e.sum();
    total += std::log(z) - (e * y).sum() / z;
  }
  return total;
}

ArchSample ArchDistribution::mode() const {
  ArchSample out;
  for (int cell = 0; cell < 2; ++cell) {
    CellSample& cs = cell == 0 ? out.normal : out.reduction;
    cs.pairs.resize(static_cast<std::size_t>(2 * cfg_.num_nodes));
    for (int node = 1; node <= cfg_.num_nodes; ++node) {
      for (int slot = 0; slot < 2; ++slot) {
        const Eigen::VectorXd& x = logits(cell, node, slot);
        int arg = 0;
        for (int c = 1; c < x.size(); ++c)
          if (x(c) > x(arg)) arg = c;  // strict: ties keep the lowest index
        cs.pairs[static_cast<std::size_t>((node - 1) * 2 + slot)] = category_pair(cfg_, node, arg);
      }
    }
  }
  return out;
}

std::string ArchDistribution::to_json() const {
  require_finite();
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["config"] = {{"N", cfg_.num_nodes}, {"P", cfg_.num_ops}, {"op_set", op_set_id(cfg_.op_set)}};
  for (int cell = 0; cell < 2; ++cell) {
    const char* name = cell == 0 ? "normal" : "reduction";
    nlohmann::json nodes = nlohmann::json::array();
    for (int node = 1; node <= cfg_.num_nodes; ++node) {
      nlohmann::json slots = nlohmann::json::array();
      for (int slot = 0; slot < 2; ++slot) {
        const Eigen::VectorXd& x = logits(cell, node, slot);
        slots.push_back(std::vector<double>(x.data(), x.data() + x.size()));
      }
      nodes.push_back(std::move(slots));
    }
    doc["logits"][name] = std::move(nodes);
  }
  return doc.dump(2) + "\n";
}

ArchDistribution ArchDistribution::from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error(std::string("distribution checkpoint is not valid JSON: ") + e.what());
  }
  for (const char* key : {"format_version", "config", "logits"})
    if (!doc.contains(key))
      throw std::runtime_error(std::string("distribution checkpoint missing field '") + key + "'");
  if (doc["format_version"].get<int>() != 1)
    throw std::runtime_error("distribution checkpoint format_version " +
                             doc["format_version"].dump() + " is not supported (expected 1)");
  const auto& jc = doc["config"];
  for (const char* key : {"N", "P", "op_set"})
    if (!jc.contains(key))
      throw std::runtime_error(std::string("distribution checkpoint config missing '") + key + "'");
  SpaceConfig cfg;
  cfg.num_nodes = jc["N"].get<int>();
  cfg.num_ops = jc["P"].get<int>();
  cfg.op_set = op_set_from_id(jc["op_set"].get<std::string>());

  ArchDistribution dist(cfg);
  for (int cell = 0; cell < 2; ++cell) {
    const char* name = cell == 0 ? "normal" : "reduction";
    if (!doc["logits"].contains(name))
      throw std::runtime_error(std::string("distribution checkpoint missing logits for cell '") +
                               name + "'");
    const auto& nodes = doc["logits"][name];
    if (static_cast<int>(nodes.size()) != cfg.num_nodes)
      throw std::runtime_error(std::string("distribution checkpoint: cell '") + name + "' lists " +
                               std::to_string(nodes.size()) + " nodes, config says " +
                               std::to_string(cfg.num_nodes));
    for (int node = 1; node <= cfg.num_nodes; ++node) {
      const auto& slots = nodes[static_cast<std::size_t>(node - 1)];
      if (slots.size() != 2)
        throw std::runtime_error("distribution checkpoint: node " + std::to_string(node) +
                                 " must list exactly 2 slots");
      for (int slot = 0; slot < 2; ++slot) {
        const auto vals = slots[static_cast<std::size_t>(slot)].get<std::vector<double>>();
        const int card = slot_cardinality(cfg, node);
        if (static_cast<int>(vals.size()) != card)
          throw std::runtime_error("distribution checkpoint: cell '" + std::string(name) +
                                   "' node " + std::to_string(node) + " slot " +
                                   std::to_string(slot) + " has " + std::to_string(vals.size()) +
                                   " logits, expected " + std::to_string(card));
        dist.logits(cell, node, slot) =
            Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
      }
    }
  }
  dist.require_finite();
  return dist;
}

void ArchDistribution::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << to_json();
  if (!out) throw std::runtime_error("failed writing distribution checkpoint to '" + path + "'");
}

ArchDistribution ArchDistribution::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open distribution checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

}  // namespace parsec

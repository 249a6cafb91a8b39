#include "parsec/search_space.hpp"

#include <algorithm>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace parsec {
namespace {

void require_node(const SpaceConfig& cfg, int node, const char* what) {
  if (node < 1 || node > cfg.num_nodes)
    throw std::invalid_argument(std::string(what) + ": node " + std::to_string(node) +
                                " outside [1," + std::to_string(cfg.num_nodes) + "]");
}

BigCount checked_mul(BigCount a, BigCount b, const char* what) {
  if (a != 0 && b > std::numeric_limits<BigCount>::max() / a)
    throw std::overflow_error(std::string(what) + ": cardinality exceeds 128 bits");
  return a * b;
}

void require_config(const SpaceConfig& cfg) {
  if (cfg.num_nodes < 1)
    throw std::invalid_argument("space config: need at least 1 node, got " +
                                std::to_string(cfg.num_nodes));
  op_names(cfg);  // validates num_ops against the registry
}

}  // namespace

std::string big_to_string(BigCount v) {
  if (v == 0) return "0";
  std::string digits;
  while (v != 0) {
    digits.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  std::reverse(digits.begin(), digits.end());
  return digits;
}

std::string op_set_id(OpSet set) { return set == OpSet::kConv7 ? "conv7" : "toy"; }

OpSet op_set_from_id(const std::string& id) {
  if (id == "conv7") return OpSet::kConv7;
  if (id == "toy") return OpSet::kToy;
  throw std::invalid_argument("unknown op set '" + id + "' (expected \"conv7\" or \"toy\")");
}

const std::vector<std::string>& op_set_names(OpSet set) {
  static const std::vector<std::string> conv7 = {
      "identity",     "avg_pool_3x3", "max_pool_3x3", "sep_conv_3x3",
      "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5"};
  static const std::vector<std::string> toy = {"identity", "negate", "scale2"};
  return set == OpSet::kConv7 ? conv7 : toy;
}

std::vector<std::string> op_names(const SpaceConfig& cfg) {
  const auto& all = op_set_names(cfg.op_set);
  if (cfg.num_ops < 1 || cfg.num_ops > static_cast<int>(all.size()))
    throw std::invalid_argument("space config: num_ops " + std::to_string(cfg.num_ops) +
                                " outside [1," + std::to_string(all.size()) + "] for op set " +
                                op_set_id(cfg.op_set));
  return {all.begin(), all.begin() + cfg.num_ops};
}

int slot_cardinality(const SpaceConfig& cfg, int node) {
  require_config(cfg);
  require_node(cfg, node, "slot_cardinality");
  return (node + 1) * cfg.num_ops;
}

int slots_per_cell(const SpaceConfig& cfg) { return 2 * cfg.num_nodes; }

int pair_category(const SpaceConfig& cfg, int node, const PairChoice& pair) {
  require_node(cfg, node, "pair_category");
  if (pair.input_index < 0 || pair.input_index >= node + 1)
    throw std::invalid_argument("pair_category: input " + std::to_string(pair.input_index) +
                                " outside [0," + std::to_string(node + 1) + ") for node " +
                                std::to_string(node));
  if (pair.op_index < 0 || pair.op_index >= cfg.num_ops)
    throw std::invalid_argument("pair_category: op " + std::to_string(pair.op_index) +
                                " outside [0," + std::to_string(cfg.num_ops) + ")");
  return pair.input_index * cfg.num_ops + pair.op_index;
}

PairChoice category_pair(const SpaceConfig& cfg, int node, int category) {
  require_node(cfg, node, "category_pair");
  const int card = slot_cardinality(cfg, node);
  if (category < 0 || category >= card)
    throw std::invalid_argument("category_pair: category " + std::to_string(category) +
                                " outside [0," + std::to_string(card) + ") for node " +
                                std::to_string(node));
  return {category / cfg.num_ops, category % cfg.num_ops};
}

BigCount cell_space_size(const SpaceConfig& cfg) {
  require_config(cfg);
  BigCount total = 1;
  for (int node = 1; node <= cfg.num_nodes; ++node) {
    const BigCount card = static_cast<BigCount>(slot_cardinality(cfg, node));
    total = checked_mul(total, checked_mul(card, card, "cell_space_size"), "cell_space_size");
  }
  return total;
}

BigCount space_size(const SpaceConfig& cfg) {
  const BigCount per_cell = cell_space_size(cfg);
  return checked_mul(per_cell, per_cell, "space_size");
}

std::vector<std::string> validate_sample(const SpaceConfig& cfg, const ArchSample& sample) {
  require_config(cfg);
  std::vector<std::string> violations;
  const char* cell_names[2] = {"normal", "reduction"};
  const CellSample* cells[2] = {&sample.normal, &sample.reduction};
  for (int c = 0; c < 2; ++c) {
    const auto& pairs = cells[c]->pairs;
    if (static_cast<int>(pairs.size()) != 2 * cfg.num_nodes) {
      violations.push_back(std::string("cell ") + cell_names[c] + ": expected " +
                           std::to_string(2 * cfg.num_nodes) + " pair choices, got " +
                           std::to_string(pairs.size()));
      continue;
    }
    for (int node = 1; node <= cfg.num_nodes; ++node) {
      for (int slot = 0; slot < 2; ++slot) {
        const PairChoice& p = pairs[static_cast<std::size_t>((node - 1) * 2 + slot)];
        const std::string where = std::string("(") + cell_names[c] + ", node " +
                                  std::to_string(node) + ", slot " + std::to_string(slot) + ")";
        if (p.input_index < 0 || p.input_index >= node + 1)
          violations.push_back("input_index " + std::to_string(p.input_index) + " outside [0," +
                               std::to_string(node + 1) + ") at " + where);
        if (p.op_index < 0 || p.op_index >= cfg.num_ops)
          violations.push_back("op_index " + std::to_string(p.op_index) + " outside [0," +
                               std::to_string(cfg.num_ops) + ") at " + where);
      }
    }
  }
  return violations;
}

void require_valid_sample(const SpaceConfig& cfg, const ArchSample& sample) {
  const auto violations = validate_sample(cfg, sample);
  if (!violations.empty()) {
    std::string msg = "invalid architecture sample:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw std::invalid_argument(msg);
  }
}

BigCount flat_index(const SpaceConfig& cfg, const ArchSample& sample) {
  require_valid_sample(cfg, sample);
  BigCount index = 0;
  for (const CellSample* cell : {&sample.normal, &sample.reduction}) {
    for (int node = 1; node <= cfg.num_nodes; ++node) {
      const BigCount card = static_cast<BigCount>(slot_cardinality(cfg, node));
      for (int slot = 0; slot < 2; ++slot) {
        const PairChoice& p = cell->pairs[static_cast<std::size_t>((node - 1) * 2 + slot)];
        index = checked_mul(index, card, "flat_index") +
                static_cast<BigCount>(pair_category(cfg, node, p));
      }
    }
  }
  return index;
}

ArchSample sample_from_flat_index(const SpaceConfig& cfg, BigCount index) {
  require_config(cfg);
  if (index >= space_size(cfg))
    throw std::invalid_argument("sample_from_flat_index: index " + big_to_string(index) +
                                " outside space of size " + big_to_string(space_size(cfg)));
  ArchSample sample;
  sample.normal.pairs.resize(static_cast<std::size_t>(2 * cfg.num_nodes));
  sample.reduction.pairs.resize(static_cast<std::size_t>(2 * cfg.num_nodes));
  for (CellSample* cell : {&sample.reduction, &sample.normal}) {
    for (int node = cfg.num_nodes; node >= 1; --node) {
      const BigCount card = static_cast<BigCount>(slot_cardinality(cfg, node));
      for (int slot = 1; slot >= 0; --slot) {
        const int cat = static_cast<int>(index % card);
        index /= card;
        cell->pairs[static_cast<std::size_t>((node - 1) * 2 + slot)] =
            category_pair(cfg, node, cat);
      }
    }
  }
  return sample;
}

std::vector<ArchSample> enumerate_space(const SpaceConfig& cfg, std::uint64_t cap) {
  const BigCount total = space_size(cfg);
  if (total > static_cast<BigCount>(cap))
    throw std::runtime_error("enumerate_space: space holds " + big_to_string(total) +
                             " architectures, above the cap of " + std::to_string(cap));
  std::vector<ArchSample> all;
  all.reserve(static_cast<std::size_t>(total));
  for (BigCount i = 0; i < total; ++i) all.push_back(sample_from_flat_index(cfg, i));
  return all;
}

std::string describe_genotype(const SpaceConfig& cfg, const ArchSample& sample) {
  require_valid_sample(cfg, sample);
  const auto names = op_names(cfg);
  std::ostringstream out;
  const char* cell_names[2] = {"normal", "reduction"};
  const CellSample* cells[2] = {&sample.normal, &sample.reduction};
  for (int c = 0; c < 2; ++c) {
    for (int node = 1; node <= cfg.num_nodes; ++node) {
      for (int slot = 0; slot < 2; ++slot) {
        const PairChoice& p = cells[c]->pairs[static_cast<std::size_t>((node - 1) * 2 + slot)];
        out << "cell=" << cell_names[c] << " node=" << node << " slot=" << slot
            << " input=" << p.input_index << " op=" << names[static_cast<std::size_t>(p.op_index)]
            << "\n";
      }
    }
  }
  return out.str();
}

ArchSample parse_genotype(const SpaceConfig& cfg, const std::string& text) {
  require_config(cfg);
  const auto names = op_names(cfg);
  ArchSample sample;
  sample.normal.pairs.assign(static_cast<std::size_t>(2 * cfg.num_nodes), PairChoice{-1, -1});
  sample.reduction.pairs.assign(static_cast<std::size_t>(2 * cfg.num_nodes), PairChoice{-1, -1});
  std::vector<std::vector<bool>> seen(2, std::vector<bool>(static_cast<std::size_t>(2 * cfg.num_nodes), false));

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string tok;
    std::string cell_s, op_s;
    int node = -1, slot = -1, input = -1;
    bool have_cell = false, have_node = false, have_slot = false, have_input = false, have_op = false;
    while (fields >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("genotype line " + std::to_string(line_no) +
                                    ": malformed token '" + tok + "'");
      const std::string key = tok.substr(0, eq);
      const std::string val = tok.substr(eq + 1);
      try {
        if (key == "cell") { cell_s = val; have_cell = true; }
        else if (key == "node") { node = std::stoi(val); have_node = true; }
        else if (key == "slot") { slot = std::stoi(val); have_slot = true; }
        else if (key == "input") { input = std::stoi(val); have_input = true; }
        else if (key == "op") { op_s = val; have_op = true; }
        else throw std::invalid_argument("unknown key '" + key + "'");
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("genotype line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (!(have_cell && have_node && have_slot && have_input && have_op))
      throw std::invalid_argument("genotype line " + std::to_string(line_no) +
                                  ": needs cell=, node=, slot=, input=, op=");
    int cell_idx;
    if (cell_s == "normal") cell_idx = 0;
    else if (cell_s == "reduction") cell_idx = 1;
    else throw std::invalid_argument("genotype line " + std::to_string(line_no) +
                                     ": unknown cell '" + cell_s + "'");
    if (node < 1 || node > cfg.num_nodes)
      throw std::invalid_argument("genotype line " + std::to_string(line_no) + ": node " +
                                  std::to_string(node) + " outside [1," +
                                  std::to_string(cfg.num_nodes) + "]");
    if (slot < 0 || slot > 1)
      throw std::invalid_argument("genotype line " + std::to_string(line_no) + ": slot must be 0 or 1");
    const auto op_it = std::find(names.begin(), names.end(), op_s);
    if (op_it == names.end())
      throw std::invalid_argument("genotype line " + std::to_string(line_no) + ": unknown op '" +
                                  op_s + "'");
    const std::size_t pos = static_cast<std::size_t>((node - 1) * 2 + slot);
    if (seen[static_cast<std::size_t>(cell_idx)][pos])
      throw std::invalid_argument("genotype line " + std::to_string(line_no) + ": duplicate entry for cell=" +
                                  cell_s + " node=" + std::to_string(node) + " slot=" + std::to_string(slot));
    seen[static_cast<std::size_t>(cell_idx)][pos] = true;
    PairChoice choice{input, static_cast<int>(op_it - names.begin())};
    (cell_idx == 0 ? sample.normal : sample.reduction).pairs[pos] = choice;
  }
  for (int c = 0; c < 2; ++c)
    for (std::size_t pos = 0; pos < seen[static_cast<std::size_t>(c)].size(); ++pos)
      if (!seen[static_cast<std::size_t>(c)][pos])
        throw std::invalid_argument(std::string("genotype: missing entry for cell=") +
                                    (c == 0 ? "normal" : "reduction") + " node=" +
                                    std::to_string(static_cast<int>(pos) / 2 + 1) + " slot=" +
                                    std::to_string(static_cast<int>(pos) % 2));
  require_valid_sample(cfg, sample);
  return sample;
}

}  // namespace parsec

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace parsec {

/// Candidate operation vocabularies. The convolutional set is the full search
/// vocabulary; the toy set is a tiny stride-1 arithmetic vocabulary that keeps
/// enumeration spaces small and likelihoods analytic.
enum class OpSet { kConv7, kToy };

/// Serialized registry names ("conv7", "toy").
std::string op_set_id(OpSet set);
OpSet op_set_from_id(const std::string& id);

/// Unsigned 128-bit counter for architecture-space cardinalities that overflow
/// 64 bits.
using BigCount = unsigned __int128;

std::string big_to_string(BigCount v);

struct SpaceConfig {
  int num_nodes = 4;  // intermediate nodes per cell
  int num_ops = 7;    // operations drawn from the front of the op set
  OpSet op_set = OpSet::kConv7;
  bool operator==(const SpaceConfig&) const = default;
};

/// All names in an op set, in category order.
const std::vector<std::string>& op_set_names(OpSet set);

/// The first `num_ops` names of the configured set; throws if out of range.
std::vector<std::string> op_names(const SpaceConfig& cfg);

/// One edge choice: which feed (cell input 0/1 or an earlier node) and which op.
struct PairChoice {
  int input_index = 0;
  int op_index = 0;
  bool operator==(const PairChoice&) const = default;
};

/// Both slot choices for every node of one cell, node-major then slot.
struct CellSample {
  std::vector<PairChoice> pairs;
  bool operator==(const CellSample&) const = default;
};

struct ArchSample {
  CellSample normal;
  CellSample reduction;
  bool operator==(const ArchSample&) const = default;
};

/// Choices available to one slot of `node` (1-based): (node+1) feeds x ops.
int slot_cardinality(const SpaceConfig& cfg, int node);

int slots_per_cell(const SpaceConfig& cfg);

/// Flat category of a pair choice within its slot: input_index * num_ops + op_index.
int pair_category(const SpaceConfig& cfg, int node, const PairChoice& pair);
PairChoice category_pair(const SpaceConfig& cfg, int node, int category);

BigCount cell_space_size(const SpaceConfig& cfg);
BigCount space_size(const SpaceConfig& cfg);

/// Empty when the sample is well-formed; otherwise one message per defect.
std::vector<std::string> validate_sample(const SpaceConfig& cfg, const ArchSample& sample);
void require_valid_sample(const SpaceConfig& cfg, const ArchSample& sample);

/// Mixed-radix rank of a sample; the normal cell's first slot is the most
/// significant digit, the reduction cell's last slot the least.
BigCount flat_index(const SpaceConfig& cfg, const ArchSample& sample);
ArchSample sample_from_flat_index(const SpaceConfig& cfg, BigCount index);

/// Every architecture in rank order; throws (with the exact cardinality) when
/// the space exceeds `cap`.
std::vector<ArchSample> enumerate_space(const SpaceConfig& cfg, std::uint64_t cap = 1000000);

/// Text form, one line per slot:
///   cell=<normal|reduction> node=<n> slot=<0|1> input=<idx> op=<name>
std::string describe_genotype(const SpaceConfig& cfg, const ArchSample& sample);
ArchSample parse_genotype(const SpaceConfig& cfg, const std::string& text);

}  // namespace parsec

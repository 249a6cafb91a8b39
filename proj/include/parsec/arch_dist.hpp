#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "parsec/rng.hpp"
#include "parsec/search_space.hpp"

namespace parsec {

/// Factorized categorical distribution over architectures: one independent
/// categorical per (cell, node, slot), parameterized by unconstrained logits.
/// Optimization acts on the logits; probabilities are softmax per slot.
class ArchDistribution {
 public:
  /// Zero logits: every slot exactly uniform.
  static ArchDistribution uniform(SpaceConfig cfg);

  const SpaceConfig& config() const { return cfg_; }

  /// cell: 0 = normal, 1 = reduction; node is 1-based; slot is 0 or 1.
  Eigen::VectorXd& logits(int cell, int node, int slot);
  const Eigen::VectorXd& logits(int cell, int node, int slot) const;
  int slot_index(int cell, int node, int slot) const;
  int num_slots() const { return static_cast<int>(slots_.size()); }

  /// Flat view over all slot logits (cells, nodes, slots in canonical order)
  /// for optimizers that treat the parameters as one vector.
  Eigen::ArrayXd packed() const;
  void set_packed(const Eigen::ArrayXd& flat);
  std::int64_t packed_size() const;

  ArchSample sample(Rng& rng) const;
  double log_prob(const ArchSample& sample) const;
  /// d log_prob / d logits, packed; per slot it is onehot(chosen) - softmax.
  Eigen::ArrayXd grad_log_prob(const ArchSample& sample) const;
  double entropy() const;
  /// Per-slot argmax; ties resolved to the lowest category index.
  ArchSample mode() const;

  std::string to_json() const;
  static ArchDistribution from_json(const std::string& text);
  void save(const std::string& path) const;
  static ArchDistribution load(const std::string& path);

 private:
  explicit ArchDistribution(SpaceConfig cfg);
  void require_finite() const;

  SpaceConfig cfg_;
  std::vector<Eigen::VectorXd> slots_;  // ((cell*N)+(node-1))*2 + slot
};

}  // namespace parsec

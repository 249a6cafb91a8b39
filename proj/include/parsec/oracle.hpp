#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "parsec/arch_dist.hpp"
#include "parsec/rng.hpp"
#include "parsec/search_space.hpp"

namespace parsec {

// A frozen scoring function over an enumerable architecture space: every
// sample maps to a finite log-likelihood.
struct Landscape {
  SpaceConfig config;
  std::function<double(const ArchSample&)> log_lik;
};

Landscape constant_landscape(const SpaceConfig& cfg, double value);

// Score = -tau * (number of slot choices differing from `target`).
Landscape planted_hamming_landscape(const SpaceConfig& cfg, const ArchSample& target,
                                    double tau = 1.0);

int hamming_slots(const SpaceConfig& cfg, const ArchSample& a, const ArchSample& b);

// Explicit table keyed by flat sample index. Must cover the whole space.
Landscape table_landscape(const SpaceConfig& cfg, const std::vector<double>& values);

// Text table: one line per architecture, genotype entries joined by "; ",
// then " -> " and the value. Lines starting with '#' are ignored on load.
void save_landscape_table(const Landscape& landscape, const std::string& path,
                          std::size_t cap = 1000000);
Landscape load_landscape_table(const SpaceConfig& cfg, const std::string& path,
                               std::size_t cap = 1000000);

// log sum_a exp(log_lik(a) + log_prob(a)) over the full enumeration.
double exact_log_marginal(const Landscape& landscape, const ArchDistribution& dist,
                          std::size_t cap = 1000000);

// Posterior-weighted score-function gradient of the log marginal w.r.t. the
// packed logits: sum_a posterior(a) * grad_log_prob(a).
Eigen::ArrayXd exact_grad_pi(const Landscape& landscape, const ArchDistribution& dist,
                             std::size_t cap = 1000000);

struct AuditReport {
  int K = 0;
  int trials = 0;
  Eigen::ArrayXd mean;           // per-coordinate mean of the trial estimates
  Eigen::ArrayXd std_error;      // per-coordinate standard error of the mean
  Eigen::ArrayXd exact;          // exact gradient
  Eigen::ArrayXd deviation;      // mean - exact
  Eigen::ArrayXd deviation_ses;  // deviation / std_error (0 where std_error is 0)
  double max_abs_deviation_ses = 0.0;
  double mean_square_estimate = 0.0;  // average squared norm of a single estimate
};

// Repeatedly forms the K-sample self-normalized gradient estimate and compares
// its empirical mean against the exact gradient. Trials use independently
// derived seeds and are reduced in trial order.
AuditReport estimator_audit(const Landscape& landscape, const ArchDistribution& dist, int K,
                            int trials, std::uint64_t seed);

std::string audit_report_json(const AuditReport& report);

struct RecoveryConfig {
  int steps = 200;
  int K = 16;
  double lr = 0.02;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double temperature = 1.0;
};

struct RecoveryRun {
  std::uint64_t seed = 0;
  bool recovered = false;
  double final_entropy = 0.0;
  ArchSample final_mode;
};

struct RecoveryResult {
  std::vector<RecoveryRun> runs;
  double recovery_rate = 0.0;
  double initial_entropy = 0.0;
  // Mean final entropy over the recovered runs (0 when none recovered).
  double mean_final_entropy_recovered = 0.0;
};

// Distribution-only optimization loop against a frozen landscape: per step,
// sample K architectures, weight them by softmax of their scores, and ascend
// the weighted score-function gradient with Adam.
RecoveryResult planted_recovery(const Landscape& landscape, const ArchSample& target,
                                const RecoveryConfig& cfg,
                                const std::vector<std::uint64_t>& seeds);

// Final distribution of a single recovery-style run (for callers that need
// the distribution itself rather than summary statistics).
ArchDistribution recovery_run_distribution(const Landscape& landscape, const RecoveryConfig& cfg,
                                           std::uint64_t seed);

struct BaselineResult {
  ArchSample best;
  double best_score = 0.0;
  std::uint64_t evaluated = 0;
};

// Best-of-budget uniform random search; switches to exhaustive enumeration
// when the budget covers the whole space.
BaselineResult random_baseline(const Landscape& landscape, std::uint64_t budget,
                               std::uint64_t seed);

// Exact one-sided sign test: probability of >= `wins` successes in
// wins + losses fair coin flips. Ties must be dropped by the caller.
double sign_test_p_value(int wins, int losses);

}  // namespace parsec

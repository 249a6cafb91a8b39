#include "parsec/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "parsec/optim.hpp"
#include "parsec/trainer.hpp"

namespace parsec {
namespace {

std::uint64_t small_space_size(const SpaceConfig& cfg, std::size_t cap) {
  const BigCount size = space_size(cfg);
  if (size > static_cast<BigCount>(cap))
    throw std::invalid_argument("space of " + big_to_string(size) +
                                " architectures exceeds the enumeration cap of " +
                                std::to_string(cap));
  return static_cast<std::uint64_t>(size);
}

std::string one_line_genotype(const SpaceConfig& cfg, const ArchSample& sample) {
  std::istringstream lines(describe_genotype(cfg, sample));
  std::string line, out;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    if (!out.empty()) out += "; ";
    out += line;
  }
  return out;
}

}  // namespace

Landscape constant_landscape(const SpaceConfig& cfg, double value) {
  if (!std::isfinite(value)) throw std::invalid_argument("landscape value must be finite");
  return {cfg, [value](const ArchSample&) { return value; }};
}

int hamming_slots(const SpaceConfig& cfg, const ArchSample& a, const ArchSample& b) {
  require_valid_sample(cfg, a);
  require_valid_sample(cfg, b);
  int differing = 0;
  for (int cell = 0; cell < 2; ++cell) {
    const CellSample& ca = cell == 0 ? a.normal : a.reduction;
    const CellSample& cb = cell == 0 ? b.normal : b.reduction;
    for (std::size_t i = 0; i < ca.pairs.size(); ++i)
      if (!(ca.pairs[i] == cb.pairs[i])) ++differing;
  }
  return differing;
}

Landscape planted_hamming_landscape(const SpaceConfig& cfg, const ArchSample& target, double tau) {
  require_valid_sample(cfg, target);
  if (!(tau >= 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("hamming landscape temperature must be finite and >= 0");
  return {cfg, [cfg, target, tau](const ArchSample& sample) {
            return -tau * static_cast<double>(hamming_slots(cfg, target, sample));
          }};
}

Landscape table_landscape(const SpaceConfig& cfg, const std::vector<double>& values) {
  const std::uint64_t size = small_space_size(cfg, 1000000);
  if (values.size() != size)
    throw std::invalid_argument("landscape table has " + std::to_string(values.size()) +
                                " entries but the space holds " + std::to_string(size));
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("landscape table contains a non-finite value");
  auto table = std::make_shared<std::vector<double>>(values);
  return {cfg, [cfg, table](const ArchSample& sample) {
            return (*table)[static_cast<std::size_t>(
                static_cast<std::uint64_t>(flat_index(cfg, sample)))];
          }};
}

void save_landscape_table(const Landscape& landscape, const std::string& path, std::size_t cap) {
  const std::vector<ArchSample> samples = enumerate_space(landscape.config, cap);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  char buf[64];
  for (const ArchSample& sample : samples) {
    const double v = landscape.log_lik(sample);
    if (!std::isfinite(v))
      throw std::runtime_error("refusing to save non-finite landscape value for " +
                               one_line_genotype(landscape.config, sample));
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << one_line_genotype(landscape.config, sample) << " -> " << buf << "\n";
  }
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

Landscape load_landscape_table(const SpaceConfig& cfg, const std::string& path, std::size_t cap) {
  const std::uint64_t size = small_space_size(cfg, cap);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open landscape table " + path);
  std::vector<double> values(static_cast<std::size_t>(size));
  std::vector<bool> seen(static_cast<std::size_t>(size), false);
  std::string line;
  int line_no = 0;
  std::uint64_t filled = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::size_t arrow = line.rfind(" -> ");
    if (arrow == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected '<genotype> -> <value>'");
    std::string genotype = line.substr(0, arrow);
    for (std::size_t p = genotype.find("; "); p != std::string::npos; p = genotype.find("; "))
      genotype.replace(p, 2, "\n");
    ArchSample sample;
    try {
      sample = parse_genotype(cfg, genotype);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const std::string value_text = line.substr(arrow + 4);
    char* end = nullptr;
    const double value = std::strtod(value_text.c_str(), &end);
    if (end == value_text.c_str() || *end != '\0' || !std::isfinite(value))
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad value '" +
                               value_text + "'");
    const std::size_t idx =
        static_cast<std::size_t>(static_cast<std::uint64_t>(flat_index(cfg, sample)));
    if (seen[idx])
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": duplicate entry for this architecture");
    seen[idx] = true;
    values[idx] = value;
    ++filled;
  }
  if (filled != size)
    throw std::runtime_error("landscape table " + path + " covers " + std::to_string(filled) +
                             " of " + std::to_string(size) + " architectures");
  return table_landscape(cfg, values);
}

double exact_log_marginal(const Landscape& landscape, const ArchDistribution& dist,
                          std::size_t cap) {
  if (!(landscape.config == dist.config()))
    throw std::invalid_argument("landscape and distribution describe different spaces");
  const std::vector<ArchSample> samples = enumerate_space(landscape.config, cap);
  Eigen::ArrayXd terms(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double ll = landscape.log_lik(samples[i]);
    if (!std::isfinite(ll))
      throw std::runtime_error("landscape produced a non-finite value for " +
                               one_line_genotype(landscape.config, samples[i]));
    terms(static_cast<Eigen::Index>(i)) = ll + dist.log_prob(samples[i]);
  }
  const double mx = terms.maxCoeff();
  return mx + std::log((terms - mx).exp().sum());
}

Eigen::ArrayXd exact_grad_pi(const Landscape& landscape, const ArchDistribution& dist,
                             std::size_t cap) {
  if (!(landscape.config == dist.config()))
    throw std::invalid_argument("landscape and distribution describe different spaces");
  const std::vector<ArchSample> samples = enumerate_space(landscape.config, cap);
  Eigen::ArrayXd terms(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i)
    terms(static_cast<Eigen::Index>(i)) =
        landscape.log_lik(samples[i]) + dist.log_prob(samples[i]);
  const double mx = terms.maxCoeff();
  const Eigen::ArrayXd unnorm = (terms - mx).exp();
  const Eigen::ArrayXd posterior = unnorm / unnorm.sum();
  Eigen::ArrayXd grad = Eigen::ArrayXd::Zero(dist.packed_size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    grad += posterior(static_cast<Eigen::Index>(i)) * dist.grad_log_prob(samples[i]);
  return grad;
}

AuditReport estimator_audit(const Landscape& landscape, const ArchDistribution& dist, int K,
                            int trials, std::uint64_t seed) {
  if (K < 1) throw std::invalid_argument("estimator audit needs K >= 1");
  if (trials < 2) throw std::invalid_argument("estimator audit needs at least 2 trials");
  const Eigen::Index dim = dist.packed_size();
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(dim);
  Eigen::ArrayXd sum_sq = Eigen::ArrayXd::Zero(dim);
  double sum_norm_sq = 0.0;
  for (int t = 0; t < trials; ++t) {
    Rng rng = derive_rng(seed, "audit.trial." + std::to_string(t));
    Eigen::ArrayXd log_liks(K);
    std::vector<ArchSample> archs;
    archs.reserve(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      archs.push_back(dist.sample(rng));
      log_liks(k) = landscape.log_lik(archs.back());
    }
    const ImportanceWeights iw = importance_weights(log_liks);
    Eigen::ArrayXd estimate = Eigen::ArrayXd::Zero(dim);
    for (int k = 0; k < K; ++k)
      estimate += iw.weights(k) * dist.grad_log_prob(archs[static_cast<std::size_t>(k)]);
    sum += estimate;
    sum_sq += estimate.square();
    sum_norm_sq += estimate.square().sum();
  }
  AuditReport report;
  report.K = K;
  report.trials = trials;
  report.mean = sum / trials;
  const Eigen::ArrayXd var =
      (sum_sq - trials * report.mean.square()).max(0.0) / (trials - 1);
  report.std_error = (var / trials).sqrt();
  report.exact = exact_grad_pi(landscape, dist);
  report.deviation = report.mean - report.exact;
  report.deviation_ses = Eigen::ArrayXd::Zero(dim);
  for (Eigen::Index i = 0; i < dim; ++i)
    if (report.std_error(i) > 0.0)
      report.deviation_ses(i) = report.deviation(i) / report.std_error(i);
  report.max_abs_deviation_ses = report.deviation_ses.abs().maxCoeff();
  report.mean_square_estimate = sum_norm_sq / trials;
  return report;
}

std::string audit_report_json(const AuditReport& report) {
  nlohmann::ordered_json doc;
  doc["K"] = report.K;
  doc["trials"] = report.trials;
  doc["max_abs_deviation_ses"] = report.max_abs_deviation_ses;
  doc["mean_square_estimate"] = report.mean_square_estimate;
  auto coords = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < report.mean.size(); ++i) {
    nlohmann::ordered_json c;
    c["index"] = static_cast<int>(i);
    c["mean"] = report.mean(i);
    c["std_error"] = report.std_error(i);
    c["exact"] = report.exact(i);
    c["deviation"] = report.deviation(i);
    c["deviation_ses"] = report.deviation_ses(i);
    coords.push_back(std::move(c));
  }
  doc["coordinates"] = std::move(coords);
  return doc.dump(2) + "\n";
}

ArchDistribution recovery_run_distribution(const Landscape& landscape, const RecoveryConfig& cfg,
                                           std::uint64_t seed) {
  if (cfg.steps < 1 || cfg.K < 1)
    throw std::invalid_argument("recovery needs steps >= 1 and K >= 1");
  ArchDistribution dist = ArchDistribution::uniform(landscape.config);
  Optimizer opt = Optimizer::adam({cfg.lr, cfg.beta1, cfg.beta2, 1e-8, 0.0});
  Rng rng = derive_rng(seed, "recovery.arch");
  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::ArrayXd log_liks(cfg.K);
    std::vector<ArchSample> archs;
    archs.reserve(static_cast<std::size_t>(cfg.K));
    for (int k = 0; k < cfg.K; ++k) {
      archs.push_back(dist.sample(rng));
      log_liks(k) = landscape.log_lik(archs.back());
    }
    const ImportanceWeights iw = importance_weights(log_liks, cfg.temperature);
    Eigen::ArrayXd grad = Eigen::ArrayXd::Zero(dist.packed_size());
    for (int k = 0; k < cfg.K; ++k)
      grad += iw.weights(k) * dist.grad_log_prob(archs[static_cast<std::size_t>(k)]);
    Eigen::ArrayXd packed = dist.packed();
    Eigen::ArrayXd neg = -grad;
    opt.step("pi", packed, neg);
    dist.set_packed(packed);
  }
  return dist;
}

RecoveryResult planted_recovery(const Landscape& landscape, const ArchSample& target,
                                const RecoveryConfig& cfg,
                                const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw std::invalid_argument("planted recovery needs at least one seed");
  require_valid_sample(landscape.config, target);
  RecoveryResult result;
  result.initial_entropy = ArchDistribution::uniform(landscape.config).entropy();
  int recovered = 0;
  double recovered_entropy = 0.0;
  for (std::uint64_t seed : seeds) {
    const ArchDistribution dist = recovery_run_distribution(landscape, cfg, seed);
    RecoveryRun run;
    run.seed = seed;
    run.final_mode = dist.mode();
    run.final_entropy = dist.entropy();
    run.recovered = run.final_mode == target;
    if (run.recovered) {
      ++recovered;
      recovered_entropy += run.final_entropy;
    }
    result.runs.push_back(std::move(run));
  }
  result.recovery_rate = static_cast<double>(recovered) / static_cast<double>(seeds.size());
  result.mean_final_entropy_recovered = recovered > 0 ? recovered_entropy / recovered : 0.0;
  return result;
}

BaselineResult random_baseline(const Landscape& landscape, std::uint64_t budget,
                               std::uint64_t seed) {
  if (budget < 1) throw std::invalid_argument("random baseline needs a budget of at least 1");
  BaselineResult result;
  const BigCount size = space_size(landscape.config);
  if (static_cast<BigCount>(budget) >= size) {
    // Budget covers the whole space: return the exact optimum.
    const std::vector<ArchSample> samples =
        enumerate_space(landscape.config, static_cast<std::size_t>(static_cast<std::uint64_t>(size)));
    result.best = samples.front();
    result.best_score = landscape.log_lik(samples.front());
    for (const ArchSample& sample : samples) {
      const double score = landscape.log_lik(sample);
      if (score > result.best_score) {
        result.best_score = score;
        result.best = sample;
      }
    }
    result.evaluated = static_cast<std::uint64_t>(size);
    return result;
  }
  const ArchDistribution uniform = ArchDistribution::uniform(landscape.config);
  Rng rng = derive_rng(seed, "baseline.arch");
  for (std::uint64_t i = 0; i < budget; ++i) {
    ArchSample sample = uniform.sample(rng);
    const double score = landscape.log_lik(sample);
    if (i == 0 || score > result.best_score) {
      result.best_score = score;
      result.best = std::move(sample);
    }
  }
  result.evaluated = budget;
  return result;
}

double sign_test_p_value(int wins, int losses) {
  if (wins < 0 || losses < 0) throw std::invalid_argument("sign test counts must be non-negative");
  const int n = wins + losses;
  if (n == 0) return 1.0;
  // P[X >= wins] for X ~ Binomial(n, 1/2), summed small-to-large for accuracy.
  long double p = 0.0L;
  for (int i = n; i >= wins; --i) {
    long double log_term = -static_cast<long double>(n) * std::log(2.0L);
    log_term += std::lgammal(n + 1.0L) - std::lgammal(i + 1.0L) - std::lgammal(n - i + 1.0L);
    p += expl(log_term);
  }
  return static_cast<double>(std::min(p, 1.0L));
}

}  // namespace parsec

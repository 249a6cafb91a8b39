#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>

namespace parsec {

struct SgdMomentumConfig {
  double lr = 0.025;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Keyed first-order optimizer (minimization convention). State is held per
/// parameter key, so parameters touched only in some steps keep their own
/// momentum/moment history and step counts.
class Optimizer {
 public:
  static Optimizer sgd_momentum(SgdMomentumConfig cfg);
  static Optimizer adam(AdamConfig cfg);

  /// Applies one update in place. Throws if the gradient contains non-finite
  /// values (the parameter is left untouched in that case).
  void step(const std::string& key, Eigen::Ref<Eigen::ArrayXd> param,
            const Eigen::Ref<const Eigen::ArrayXd>& grad);

  std::int64_t step_count(const std::string& key) const;

 private:
  enum class Kind { kSgdMomentum, kAdam };
  struct Slot {
    Eigen::ArrayXd buf1;  // momentum / first moment
    Eigen::ArrayXd buf2;  // second moment (adam only)
    std::int64_t steps = 0;
  };

  Kind kind_ = Kind::kSgdMomentum;
  SgdMomentumConfig sgd_{};
  AdamConfig adam_{};
  std::map<std::string, Slot> slots_;
};

}  // namespace parsec

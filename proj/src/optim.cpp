#include "parsec/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace parsec {

Optimizer Optimizer::sgd_momentum(SgdMomentumConfig cfg) {
  Optimizer o;
  o.kind_ = Kind::kSgdMomentum;
  o.sgd_ = cfg;
  return o;
}

Optimizer Optimizer::adam(AdamConfig cfg) {
  Optimizer o;
  o.kind_ = Kind::kAdam;
  o.adam_ = cfg;
  return o;
}

void Optimizer::step(const std::string& key, Eigen::Ref<Eigen::ArrayXd> param,
                     const Eigen::Ref<const Eigen::ArrayXd>& grad) {
  if (param.size() != grad.size())
    throw std::invalid_argument("optimizer step for '" + key + "': parameter size " +
                                std::to_string(param.size()) + " vs gradient size " +
                                std::to_string(grad.size()));
  if (!grad.isFinite().all())
    throw std::runtime_error("optimizer step for '" + key + "': gradient has non-finite entries");

  Slot& slot = slots_[key];
  if (slot.buf1.size() == 0) {
    slot.buf1 = Eigen::ArrayXd::Zero(param.size());
    if (kind_ == Kind::kAdam) slot.buf2 = Eigen::ArrayXd::Zero(param.size());
  }
  slot.steps += 1;

  if (kind_ == Kind::kSgdMomentum) {
    Eigen::ArrayXd g = grad;
    if (sgd_.weight_decay != 0.0) g += sgd_.weight_decay * param;
    slot.buf1 = sgd_.momentum * slot.buf1 + g;
    param -= sgd_.lr * slot.buf1;
  } else {
    Eigen::ArrayXd g = grad;
    if (adam_.weight_decay != 0.0) g += adam_.weight_decay * param;
    slot.buf1 = adam_.beta1 * slot.buf1 + (1.0 - adam_.beta1) * g;
    slot.buf2 = adam_.beta2 * slot.buf2 + (1.0 - adam_.beta2) * g.square();
    const double bc1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(slot.steps));
    const double bc2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(slot.steps));
    param -= adam_.lr * (slot.buf1 / bc1) / ((slot.buf2 / bc2).sqrt() + adam_.eps);
  }
}

std::int64_t Optimizer::step_count(const std::string& key) const {
  auto it = slots_.find(key);
  return it == slots_.end() ? 0 : it->second.steps;
}

}  // namespace parsec

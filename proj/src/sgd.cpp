#include "isda/sgd.hpp"

#include <stdexcept>

namespace isda {

void SgdState::init(const std::vector<ParamRef>& params) {
  velocity.clear();
  for (const auto& p : params) velocity.emplace_back(p.n, 0.0);
}

double lr_at_epoch(const SgdConfig& config, int epoch) {
  double lr = config.lr;
  for (int m : config.milestones) {
    if (epoch >= m) lr *= config.gamma;
  }
  return lr;
}

void sgd_step(const SgdConfig& config, double lr, const std::vector<ParamRef>& params,
              SgdState& state) {
  if (!state.initialized()) state.init(params);
  if (state.velocity.size() != params.size()) {
    throw std::invalid_argument("sgd_step: velocity buffers do not match parameters");
  }
  const double mu = config.momentum;
  for (size_t t = 0; t < params.size(); ++t) {
    const ParamRef& p = params[t];
    Vec& v = state.velocity[t];
    if (v.size() != p.n) throw std::invalid_argument("sgd_step: velocity size mismatch");
    for (size_t k = 0; k < p.n; ++k) {
      double g = p.grad[k];
      if (p.decay) g += config.weight_decay * p.value[k];
      v[k] = mu * v[k] - lr * g;
      p.value[k] += mu * v[k] - lr * g;
    }
  }
}

}  // namespace isda

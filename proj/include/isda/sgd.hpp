#pragma once

// SGD with Nesterov momentum over a flat list of parameter tensors.
// Update rule (pinned by the quadratic-bowl test):
//   g <- g + wd * theta          (weights only, never biases)
//   v <- mu * v - lr * g
//   theta <- theta + mu * v - lr * g
// The learning rate follows multiplicative milestones on epoch boundaries.

#include <cstdint>
#include <vector>

#include "isda/numeric.hpp"

namespace isda {

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> milestones;  // epochs at which lr is multiplied by gamma
  double gamma = 0.1;
};

// One parameter tensor paired with its gradient and decay policy.
struct ParamRef {
  double* value = nullptr;
  const double* grad = nullptr;
  size_t n = 0;
  bool decay = false;
};

struct SgdState {
  std::vector<Vec> velocity;  // one buffer per parameter tensor

  void init(const std::vector<ParamRef>& params);
  bool initialized() const { return !velocity.empty(); }
};

double lr_at_epoch(const SgdConfig& config, int epoch);

void sgd_step(const SgdConfig& config, double lr, const std::vector<ParamRef>& params,
              SgdState& state);

}  // namespace isda

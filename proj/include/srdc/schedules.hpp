#pragma once

// Training schedules: the penalty ramp lambda_i = 2/(1+exp(-gamma i)) - 1 and
// the inverse-decay learning rate eta_i = eta0 (1 + alpha i)^(-gamma), both
// over the epoch index normalized to [0, 1].

#include <cmath>

#include "srdc/errors.hpp"

namespace srdc {

inline double lambda_schedule(double i, double gamma = 10.0) {
  detail::require(i >= 0.0 && i <= 1.0, "lambda_schedule: index must be in [0,1]");
  return 2.0 / (1.0 + std::exp(-gamma * i)) - 1.0;
}

inline double lr_schedule(double i, double eta0 = 0.01, double alpha = 10.0,
                          double gamma = 0.75) {
  detail::require(i >= 0.0 && i <= 1.0, "lr_schedule: index must be in [0,1]");
  detail::require(eta0 > 0.0, "lr_schedule: eta0 must be positive");
  return eta0 * std::pow(1.0 + alpha * i, -gamma);
}

// Epoch index normalized so that the first epoch maps to 0 and the last to 1.
inline double normalized_epoch(int epoch, int total_epochs) {
  detail::require(epoch >= 1 && epoch <= total_epochs, "normalized_epoch: epoch out of range");
  if (total_epochs <= 1) return 0.0;
  return static_cast<double>(epoch - 1) / static_cast<double>(total_epochs - 1);
}

}  // namespace srdc

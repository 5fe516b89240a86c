#pragma once

#include <cstddef>
#include <stdexcept>

#include "relclust/encoder.hpp"

namespace relclust {

struct AdamWConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  EncoderParams first_moment;
  EncoderParams second_moment;
  std::size_t step = 0;

  static AdamWState zeros_like(const EncoderParams& params);
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bias-corrected adaptive-moment step with decoupled weight decay:
/// p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p). Leaves everything
/// untouched and throws NonFiniteGradient if any gradient is not finite.
void adamw_step(EncoderParams& params, const EncoderParams& grads, AdamWState& state,
                const AdamWConfig& config);

/// theta <- m * theta + (1 - m) * theta_prime, tensor by tensor.
void momentum_update(EncoderParams& theta, const EncoderParams& theta_prime, double m);

}  // namespace relclust

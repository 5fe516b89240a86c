#include "relclust/optimizer.hpp"

#include <cmath>
#include <string>

namespace relclust {

AdamWState AdamWState::zeros_like(const EncoderParams& params) {
  AdamWState s;
  s.first_moment = EncoderParams::zeros(params.dims);
  s.second_moment = EncoderParams::zeros(params.dims);
  return s;
}

void adamw_step(EncoderParams& params, const EncoderParams& grads, AdamWState& state,
                const AdamWConfig& config) {
  if (!params.same_shape(grads) || !params.same_shape(state.first_moment) ||
      !params.same_shape(state.second_moment)) {
    throw std::invalid_argument("optimizer tensors do not match parameter shapes");
  }
  for (std::size_t t = 0; t < EncoderParams::kTensorCount; ++t) {
    if (!grads.tensor(t).allFinite()) {
      throw NonFiniteGradient(std::string("non-finite gradient in ") + EncoderParams::names()[t] +
                              " at optimizer step " + std::to_string(state.step + 1));
    }
  }

  ++state.step;
  const double step = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(config.beta1, step);
  const double correction2 = 1.0 - std::pow(config.beta2, step);
  for (std::size_t t = 0; t < EncoderParams::kTensorCount; ++t) {
    auto p = params.tensor(t).array();
    auto g = grads.tensor(t).array();
    auto m = state.first_moment.tensor(t).array();
    auto v = state.second_moment.tensor(t).array();
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.square();
    const auto m_hat = m / correction1;
    const auto v_hat = v / correction2;
    p -= config.learning_rate * (m_hat / (v_hat.sqrt() + config.epsilon) + config.weight_decay * p);
  }
}

void momentum_update(EncoderParams& theta, const EncoderParams& theta_prime, double m) {
  if (!theta.same_shape(theta_prime)) {
    throw std::invalid_argument("momentum update between encoders of different shapes");
  }
  if (!(m >= 0.0 && m < 1.0)) throw std::invalid_argument("momentum must lie in [0,1)");
  for (std::size_t t = 0; t < EncoderParams::kTensorCount; ++t) {
    if (m == 0.0) {
      theta.tensor(t) = theta_prime.tensor(t);
    } else {
      // Written as an increment so identical encoders stay bit-identical.
      theta.tensor(t) += (1.0 - m) * (theta_prime.tensor(t) - theta.tensor(t));
    }
  }
}

}  // namespace relclust

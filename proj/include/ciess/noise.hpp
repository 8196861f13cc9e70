#pragma once

#include <cmath>
#include <string>

#include "ciess/common.hpp"

namespace ciess {

enum class NoiseKind { gaussian, ou, uniform };

NoiseKind parse_noise(const std::string& name);
const char* noise_name(NoiseKind kind);

/// Exploration noise in action units. Gaussian and uniform draws are
/// independent; the Ornstein-Uhlenbeck variant keeps one persistent state
/// that every sample advances. The uniform range is widened so its standard
/// deviation matches sigma across all three kinds.
class NoiseProcess {
 public:
  NoiseProcess(NoiseKind kind, double sigma, double ou_theta = 0.15, double ou_dt = 1.0)
      : kind_(kind), sigma_(sigma), ou_theta_(ou_theta), ou_dt_(ou_dt) {
    if (!(sigma > 0.0)) throw InputError("noise sigma must be positive");
  }

  double sample(Rng& rng) {
    switch (kind_) {
      case NoiseKind::gaussian:
        return rng.normal(0.0, sigma_);
      case NoiseKind::uniform: {
        const double half = sigma_ * 1.7320508075688772;  // sqrt(3)
        return rng.uniform(-half, half);
      }
      case NoiseKind::ou:
      default:
        ou_state_ += ou_theta_ * (0.0 - ou_state_) * ou_dt_ +
                     sigma_ * std::sqrt(ou_dt_) * rng.normal(0.0, 1.0);
        return ou_state_;
    }
  }

  void reset() { ou_state_ = 0.0; }
  NoiseKind kind() const { return kind_; }
  double sigma() const { return sigma_; }

 private:
  NoiseKind kind_;
  double sigma_;
  double ou_theta_;
  double ou_dt_;
  double ou_state_ = 0.0;
};

}  // namespace ciess

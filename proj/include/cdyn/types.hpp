#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdyn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Array = Eigen::ArrayXd;

// Normalizer underflow: a KState with N_A or N_B below the collapse
// threshold cannot be normalized.
struct CollapseError : std::runtime_error {
  explicit CollapseError(const std::string& what) : std::runtime_error(what) {}
};

// Exact enumeration would exceed the strategy's evaluation budget.
struct BudgetError : std::runtime_error {
  explicit BudgetError(const std::string& what) : std::runtime_error(what) {}
};

// Zero column, zero kappa norm, or similar degenerate state.
struct DegenerateError : std::runtime_error {
  explicit DegenerateError(const std::string& what) : std::runtime_error(what) {}
};

// Training loss became non-finite.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr double kCollapseEps = 1e-12;

// Immutable ground truth of one experiment.
struct ModelConfig {
  int d = 0;                    // ambient dimension
  int r = 0;                    // latent dimension, r <= d
  int m = 0;                    // network width
  Vector sigma_sq;              // length-r signal spectrum, entries > 0
  double sigma_xi_sq = 1.0;     // noise scale
  double K = 1.0;               // negative-sample strength
  std::int64_t seed = 0;
  bool tie_modalities = false;  // B = A (single-modal ablation)

  int noise_dim() const { return d - r; }

  void validate() const {
    if (d <= 0 || r <= 0 || m <= 0) throw std::invalid_argument("d, r, m must be positive");
    if (r > d) throw std::invalid_argument("r must satisfy r <= d");
    if (sigma_sq.size() != r) throw std::invalid_argument("sigma_sq must have length r");
    if ((sigma_sq.array() <= 0.0).any()) throw std::invalid_argument("sigma_sq entries must be positive");
    if (sigma_xi_sq <= 0.0) throw std::invalid_argument("sigma_xi_sq must be positive");
    if (K < 0.0) throw std::invalid_argument("K must be non-negative");
  }

  // Spectrum-spread assumption check (warn-only): returns the measured
  // ratio (sigma_max^2/sigma_min^2) * max{1, (d-r) sigma_xi^2 / (r sigma_min^2)}
  // to be compared against c * log d by the caller.
  double assumption_ratio() const {
    double smax = sigma_sq.maxCoeff();
    double smin = sigma_sq.minCoeff();
    if (d > r) {
      smax = std::max(smax, sigma_xi_sq);
      smin = std::min(smin, sigma_xi_sq);
    }
    double noise_factor = 1.0;
    if (d > r) noise_factor = std::max(1.0, (d - r) * sigma_xi_sq / (r * smin));
    return smax / smin * noise_factor;
  }
  bool assumption_holds(double c = 1.0) const {
    return assumption_ratio() <= c * std::log(static_cast<double>(d)) + 1e-12;
  }
};

}  // namespace cdyn

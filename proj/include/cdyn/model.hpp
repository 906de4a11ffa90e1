#pragma once

#include <random>

#include "cdyn/types.hpp"

namespace cdyn {

enum class Side { A, B };

// Ground-truth encoding matrices. Columns of A (resp. A_xi) are pairwise
// orthogonal with norms sigma_p (resp. sigma_xi), and A_xi^T A = 0; same
// for the B side.
struct EncoderSet {
  Matrix A;      // d x r
  Matrix B;      // d x r
  Matrix A_xi;   // d x (d-r)
  Matrix B_xi;   // d x (d-r)

  const Matrix& signal(Side s) const { return s == Side::A ? A : B; }
  const Matrix& noise(Side s) const { return s == Side::A ? A_xi : B_xi; }
};

struct WeightState {
  Matrix W_A;  // d x m
  Matrix W_B;  // d x m
};

// Derived maps from latent space to embedding space plus normalizers;
// the state all dynamics are expressed in.
struct KState {
  Matrix K_A;      // m x r
  Matrix K_B;      // m x r
  Matrix K_A_xi;   // m x (d-r)
  Matrix K_B_xi;   // m x (d-r)
  double N_A = 0.0;
  double N_B = 0.0;

  int m() const { return static_cast<int>(K_A.rows()); }
  int r() const { return static_cast<int>(K_A.cols()); }
  int noise_dim() const { return static_cast<int>(K_A_xi.cols()); }
  int d() const { return r() + noise_dim(); }

  const Matrix& signal(Side s) const { return s == Side::A ? K_A : K_B; }
  const Matrix& noise(Side s) const { return s == Side::A ? K_A_xi : K_B_xi; }
  double normalizer(Side s) const { return s == Side::A ? N_A : N_B; }
};

// One draw of (z^+, z^-, xi_A^+, xi_B^+, xi_A^-, xi_B^-). Entries are
// stored as +-1 signs; value() applies the global 1/sqrt(d) scale so that
// sign arithmetic stays exact.
struct SampleQuad {
  Eigen::VectorXi z_plus, z_minus;          // length r, entries +-1
  Eigen::VectorXi xi_A_plus, xi_B_plus;     // length d-r
  Eigen::VectorXi xi_A_minus, xi_B_minus;   // length d-r
  double scale = 0.0;                       // 1/sqrt(d)

  Vector value(const Eigen::VectorXi& signs) const {
    return signs.cast<double>() * scale;
  }
};

// Build the encoders from one orthonormalized Gaussian d x d matrix per
// side, split into signal and noise blocks. Deterministic given the seed.
EncoderSet build_encoders(const ModelConfig& config, std::mt19937_64& rng);

// iid N(0, 1/m) entries. Deterministic given the seed.
WeightState init_weights(const ModelConfig& config, std::mt19937_64& rng);

SampleQuad sample_quad(const ModelConfig& config, std::mt19937_64& rng);

// x = A z + A_xi xi (or the B-side analogue).
Vector encode(const EncoderSet& encoders, Side side, const Vector& z, const Vector& xi);

// K_A = W_A^T A, K_{A,xi} = W_A^T A_xi, N_A^2 = (|K_A|_F^2 + |K_{A,xi}|_F^2)/d;
// throws CollapseError if a normalizer is below the collapse threshold.
KState compute_kstate(const WeightState& weights, const EncoderSet& encoders);

// f = (K z + K_xi xi) / N for the requested side.
Vector feature_map(const KState& kstate, Side side, const Vector& z, const Vector& xi);

}  // namespace cdyn

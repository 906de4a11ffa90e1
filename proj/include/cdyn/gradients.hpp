#pragma once

#include "cdyn/expectation.hpp"
#include "cdyn/model.hpp"

namespace cdyn {

enum class LossKind { Contrastive, NonContrastive };

// Expectation coefficients of the exact K-matrix dynamics decomposition.
struct QSet {
  double Q0 = 0.0;
  Matrix Q1;       // r x r
  Matrix Q1_xiA;   // (d-r) x r
  Matrix Q1_xiB;   // (d-r) x r
  Matrix Q2;       // (d-r) x (d-r)
};

// Time derivatives of the K matrices under the tau^-2-rescaled flow.
struct KRates {
  Matrix dK_A, dK_B;        // m x r
  Matrix dK_A_xi, dK_B_xi;  // m x (d-r)
};

// Per-column radial/tangent decomposition of the K dynamics.
struct RadialTangentRates {
  Vector d_norm_sq_K_A, d_norm_sq_K_B;        // length r
  Vector d_norm_sq_K_A_xi, d_norm_sq_K_B_xi;  // length d-r
  Matrix d_unit_K_A, d_unit_K_B;              // m x r
  Matrix d_unit_K_A_xi, d_unit_K_B_xi;        // m x (d-r)
};

struct GradientPair {
  Matrix grad_W_A;  // d x m
  Matrix grad_W_B;  // d x m
};

// Closed-form gradient of the contrastive loss (positive-pair term plus the
// two negative-pair terms, each with its normalization correction).
GradientPair grad_contrastive(const WeightState& weights, const EncoderSet& encoders,
                              double tau_sq, double K, const ExpectationStrategy& strategy);

GradientPair grad_non_contrastive(const WeightState& weights, const EncoderSet& encoders,
                                  const ExpectationStrategy& strategy);

QSet compute_qset(const KState& ks, double tau_sq, double K, const ExpectationStrategy& strategy);

// Rescaled K dynamics assembled from a QSet.
KRates krates_from_qset(const KState& ks, const QSet& q, const Vector& sigma_sq,
                        double sigma_xi_sq);

// Same rates evaluated from the expectation form directly (independent of
// the QSet assembly path).
KRates krates_direct(const WeightState& weights, const EncoderSet& encoders, double tau_sq,
                     double K, const ExpectationStrategy& strategy);

RadialTangentRates radial_tangent_rates(const KState& ks, const QSet& q, const Vector& sigma_sq,
                                        double sigma_xi_sq);

// The rescaled-flow weight direction M D^-1 [dK | dK_xi]^T per side, where
// M = [A | A_xi] and D = diag(sigma^2, sigma_xi^2 I). One GD step is
// W += eta * direction. Equals -tau^-2 grad because M has orthogonal columns.
GradientPair weight_step_from_krates(const EncoderSet& encoders, const Vector& sigma_sq,
                                     double sigma_xi_sq, const KRates& rates);

struct FiniteDifferenceReport {
  LossKind kind = LossKind::Contrastive;
  std::vector<double> steps;
  std::vector<double> errors;  // relative Frobenius error per step
  double best_error = 0.0;
  double best_step = 0.0;
};

// Central differences of the loss against the closed-form gradient at each
// step size; reports the min-over-steps relative error. Exact strategy only.
FiniteDifferenceReport finite_difference_audit(const WeightState& weights,
                                               const EncoderSet& encoders, double tau_sq,
                                               double K, std::span<const double> steps,
                                               LossKind kind = LossKind::Contrastive);

}  // namespace cdyn

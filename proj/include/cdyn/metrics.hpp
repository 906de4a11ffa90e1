#pragma once

#include "cdyn/expectation.hpp"
#include "cdyn/model.hpp"

namespace cdyn {

struct MetricsRecord {
  double gamma_align = 0.0;    // positive-pair classification accuracy, in [0,1]
  double gamma_balance = 0.0;  // stable rank of Sigma_f
  double kappa0 = 1.0;         // max/min column norm ratio of K_A
  double kappa_spectral = 1.0; // sigma_max/sigma_min of K_A
  double rho_minus = 0.0;      // max_p 1 - <unit[K_A]_p, unit[K_B]_p>
  double rho_ns = 0.0;         // max noise-column norm over min signal-column norm
  double rho_hat_ns = 0.0;     // |K_{A,xi}|_F / |K_A + K_B|_F
  Vector sigma_f_top;          // leading singular values of Sigma_f, length min(m, r+4)
};

// Column-geometry deviations from the infinite-width ideal.
struct DiagnosticsRecord {
  double delta_AB = 0.0;       // max relative column norm-squared mismatch, A vs B
  double delta_xi_kappa0 = 0.0;// max |1 - noise-column norm ratio|
  double delta_AB_perp = 0.0;  // max off-diagonal |<unit col_p, unit col_q>| across {K_A,K_B}
  double delta_xi_perp = 0.0;  // max signal-noise and cross-modal noise-noise alignments
};

// (1/2) E[ 1{|f_A+ - f_B+| < |f_A+ - f_B-|} + 1{|f_A+ - f_B+| < |f_A- - f_B+|} ],
// strict inequalities.
double alignment_score(const KState& ks, const ExpectationStrategy& strategy);

// Stable rank |Sigma_f|_F^2 / |Sigma_f|_2^2 of the exact population output
// covariance Sigma_f = (K_A K_A^T + K_{A,xi} K_{A,xi}^T) / (N_A^2 d).
double balance_score(const KState& ks);

// Leading eigenvalues of Sigma_f (top min(m, r+4)), computed from the d x d
// latent Gram factor so the m x m covariance is never materialized.
Vector sigma_f_spectrum(const KState& ks, int count);

struct ConditionNumbers {
  double kappa0 = 1.0;
  double spectral = 1.0;
};
ConditionNumbers condition_numbers(const KState& ks);

struct Ratios {
  double rho_minus = 0.0;
  double rho_ns = 0.0;
  double rho_hat_ns = 0.0;
};
Ratios ratios(const KState& ks);

DiagnosticsRecord diagnostics(const KState& ks);

MetricsRecord metrics_record(const KState& ks, const ExpectationStrategy& strategy);

}  // namespace cdyn

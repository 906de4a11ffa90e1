#pragma once

#include <vector>

#include "cdyn/types.hpp"

namespace cdyn {

// Reduced state of the noiseless infinite-width dynamics: column norms
// kappa_p^2 = |[K_A]_p|^2 and cross inner products
// hat_kappa_p^2 = <[K_A]_p, [K_B]_p>.
struct InfiniteWidthState {
  Vector kappa_sq;      // length r, entries > 0
  Vector hat_kappa_sq;  // length r, |hat_kappa_p^2| <= kappa_p^2
};

struct ClosedForms {
  double Z_c = 1.0;      // prod_k cosh(tau^2 hat_kappa_k^2 / |kappa|^2)
  Vector T;              // tanh(tau^2 hat_kappa_p^2 / |kappa|^2)
  double E_tilde = 1.0;  // exp(tau^2 sum_k hat_kappa_k^2 / |kappa|^2)
  double S_tilde = 0.0;  // E_tilde / (E_tilde + K Z_c)
  double T_tilde = 0.0;  // sum_k (hat_kappa_k^2/|kappa|^2) T_k
};

ClosedForms closed_forms(const InfiniteWidthState& state, double tau_sq, double K);

struct IwRates {
  Vector d_kappa_sq;
  Vector d_hat_kappa_sq;
};

IwRates iw_rates(const InfiniteWidthState& state, const Vector& sigma_sq, double tau_sq,
                 double K);

// Two-phase inverse temperature for the reduced flow.
struct IwSchedule {
  double tau0_sq = 1.0;      // before the switch
  double switch_time = 0.0;  // tau^2 = 1 from here on
  double K = 1.0;
  double tau_sq_at(double t) const { return t < switch_time ? tau0_sq : 1.0; }
};

struct IwTrajectoryPoint {
  double t = 0.0;
  InfiniteWidthState state;
  ClosedForms forms;
};

// Classical fixed-step RK4 over iw_rates; steps never straddle the schedule
// switch, and positivity of kappa^2 is enforced by step halving (up to 20
// halvings, then a stiffness error).
std::vector<IwTrajectoryPoint> integrate_iw(const InfiniteWidthState& state0,
                                            const Vector& sigma_sq, const IwSchedule& schedule,
                                            double h, double T);

// Witness traces for the comparison Gronwall bound: dX <= -A X,
// dY <= beta A X Y imply Y_T <= Y_0 exp(beta X_0).
struct GronwallWitness {
  double X0 = 0.0, Y0 = 0.0, beta = 0.0;
  std::vector<double> t_trace;
  std::vector<double> A_trace;
  std::vector<double> X_trace;
  std::vector<double> Y_trace;
  double slope_slack = 1e-6;  // relative slack for the discrete slope checks
};

struct GronwallResult {
  bool applicable = false;  // discrete slopes satisfy the differential inequalities
  bool pass = false;        // Y_T <= Y_0 exp(beta X_0) (1 + tol)
  double bound = 0.0;
  double y_final = 0.0;
  double margin = 0.0;      // bound / Y_T
};

GronwallResult gronwall_verify(const GronwallWitness& witness, double tol = 1e-6);

}  // namespace cdyn

#include "cdyn/infinite_width.hpp"

#include <cmath>

namespace cdyn {

ClosedForms closed_forms(const InfiniteWidthState& state, double tau_sq, double K) {
  const double nk = state.kappa_sq.sum();
  if (!(nk > 0.0)) throw DegenerateError("closed_forms: |kappa|^2 must be positive");
  const int r = static_cast<int>(state.kappa_sq.size());
  ClosedForms cf;
  cf.T.resize(r);
  double log_zc = 0.0;
  double hat_sum = 0.0;
  for (int p = 0; p < r; ++p) {
    const double arg = tau_sq * state.hat_kappa_sq(p) / nk;
    cf.T(p) = std::tanh(arg);
    const double a = std::abs(arg);
    log_zc += a + std::log1p(std::exp(-2.0 * a)) - 0.6931471805599453;
    hat_sum += state.hat_kappa_sq(p);
    cf.T_tilde += state.hat_kappa_sq(p) / nk * cf.T(p);
  }
  cf.Z_c = std::exp(log_zc);
  cf.E_tilde = std::exp(tau_sq * hat_sum / nk);
  cf.S_tilde = cf.E_tilde / (cf.E_tilde + K * cf.Z_c);
  return cf;
}

IwRates iw_rates(const InfiniteWidthState& state, const Vector& sigma_sq, double tau_sq,
                 double K) {
  const int r = static_cast<int>(state.kappa_sq.size());
  if (sigma_sq.size() != r) throw std::invalid_argument("iw_rates: sigma_sq shape");
  const double nk = state.kappa_sq.sum();
  if (!(nk > 0.0)) throw DegenerateError("iw_rates: |kappa|^2 must be positive");
  const ClosedForms cf = closed_forms(state, tau_sq, K);
  const double hat_frac = state.hat_kappa_sq.sum() / nk;
  const double gain = 4.0 * (1.0 - cf.S_tilde);

  IwRates rates;
  rates.d_kappa_sq.resize(r);
  rates.d_hat_kappa_sq.resize(r);
  for (int p = 0; p < r; ++p) {
    const double x = state.hat_kappa_sq(p) / nk;
    const double y = state.kappa_sq(p) / nk;
    rates.d_kappa_sq(p) =
        gain * (x - hat_frac * y) * sigma_sq(p) - gain * (x * cf.T(p) - y * cf.T_tilde) * sigma_sq(p);
    rates.d_hat_kappa_sq(p) =
        gain * (y - hat_frac * x) * sigma_sq(p) - gain * (y * cf.T(p) - x * cf.T_tilde) * sigma_sq(p);
  }
  return rates;
}

namespace {

InfiniteWidthState rk4_step(const InfiniteWidthState& s, const Vector& sigma_sq, double tau_sq,
                            double K, double h) {
  auto add = [](const InfiniteWidthState& a, const Vector& dk, const Vector& dh, double c) {
    InfiniteWidthState out;
    out.kappa_sq = a.kappa_sq + c * dk;
    out.hat_kappa_sq = a.hat_kappa_sq + c * dh;
    return out;
  };
  const IwRates k1 = iw_rates(s, sigma_sq, tau_sq, K);
  const IwRates k2 = iw_rates(add(s, k1.d_kappa_sq, k1.d_hat_kappa_sq, h / 2), sigma_sq, tau_sq, K);
  const IwRates k3 = iw_rates(add(s, k2.d_kappa_sq, k2.d_hat_kappa_sq, h / 2), sigma_sq, tau_sq, K);
  const IwRates k4 = iw_rates(add(s, k3.d_kappa_sq, k3.d_hat_kappa_sq, h), sigma_sq, tau_sq, K);
  InfiniteWidthState out;
  out.kappa_sq = s.kappa_sq + (h / 6.0) * (k1.d_kappa_sq + 2 * k2.d_kappa_sq +
                                           2 * k3.d_kappa_sq + k4.d_kappa_sq);
  out.hat_kappa_sq = s.hat_kappa_sq + (h / 6.0) * (k1.d_hat_kappa_sq + 2 * k2.d_hat_kappa_sq +
                                                   2 * k3.d_hat_kappa_sq + k4.d_hat_kappa_sq);
  return out;
}

}  // namespace

std::vector<IwTrajectoryPoint> integrate_iw(const InfiniteWidthState& state0,
                                            const Vector& sigma_sq, const IwSchedule& schedule,
                                            double h, double T) {
  if (!(h > 0.0)) throw std::invalid_argument("integrate_iw: step must be positive");
  std::vector<IwTrajectoryPoint> traj;
  InfiniteWidthState s = state0;
  double t = 0.0;
  traj.push_back({t, s, closed_forms(s, schedule.tau_sq_at(t), schedule.K)});
  const double eps = 1e-12 * h;
  while (t < T - eps) {
    double step = std::min(h, T - t);
    // keep the tau switch on a step boundary
    if (t < schedule.switch_time && t + step > schedule.switch_time + eps)
      step = schedule.switch_time - t;
    const double tau_sq = schedule.tau_sq_at(t);
    InfiniteWidthState next;
    double remaining = step;
    double sub = step;
    int halvings = 0;
    while (remaining > eps) {
      next = rk4_step(s, sigma_sq, tau_sq, schedule.K, sub);
      if ((next.kappa_sq.array() > 0.0).all()) {
        s = next;
        t += sub;
        remaining -= sub;
        continue;
      }
      if (++halvings > 20)
        throw DegenerateError("integrate_iw: positivity violated after 20 halvings");
      sub /= 2.0;
    }
    traj.push_back({t, s, closed_forms(s, schedule.tau_sq_at(t), schedule.K)});
  }
  return traj;
}

GronwallResult gronwall_verify(const GronwallWitness& w, double tol) {
  const std::size_t n = w.t_trace.size();
  if (n < 2 || w.A_trace.size() != n || w.X_trace.size() != n || w.Y_trace.size() != n)
    throw std::invalid_argument("gronwall_verify: inconsistent traces");
  if (!(w.X0 > 0.0) || !(w.Y0 > 0.0) || w.beta < 0.0)
    throw std::invalid_argument("gronwall_verify: X0, Y0 must be positive and beta >= 0");

  GronwallResult res;
  res.applicable = true;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double dt = w.t_trace[i + 1] - w.t_trace[i];
    if (!(dt > 0.0)) throw std::invalid_argument("gronwall_verify: times must increase");
    if (w.A_trace[i] <= 0.0 || w.X_trace[i] <= 0.0 || w.Y_trace[i] <= 0.0) {
      res.applicable = false;
      break;
    }
    const double dx = (w.X_trace[i + 1] - w.X_trace[i]) / dt;
    const double dy = (w.Y_trace[i + 1] - w.Y_trace[i]) / dt;
    const double x_bound = -w.A_trace[i] * w.X_trace[i];
    const double y_bound = w.beta * w.A_trace[i] * w.X_trace[i] * w.Y_trace[i];
    const double x_slack = w.slope_slack * w.A_trace[i] * w.X_trace[i];
    const double y_slack = w.slope_slack * std::max(y_bound, w.A_trace[i] * w.Y_trace[i]);
    if (dx > x_bound + x_slack || dy > y_bound + y_slack) {
      res.applicable = false;
      break;
    }
  }
  res.y_final = w.Y_trace.back();
  res.bound = w.Y0 * std::exp(w.beta * w.X0) * (1.0 + tol);
  res.margin = res.bound / res.y_final;
  res.pass = res.applicable && res.y_final <= res.bound;
  return res;
}

}  // namespace cdyn

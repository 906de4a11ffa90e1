#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdyn/infinite_width.hpp"
#include "cdyn/lemma_checks.hpp"
#include "helpers.hpp"

using namespace cdyn;
using testutil::direct_kstate;

namespace {

InfiniteWidthState state_of(std::initializer_list<double> kappa,
                            std::initializer_list<double> hat) {
  InfiniteWidthState s;
  s.kappa_sq = Vector::Zero(static_cast<int>(kappa.size()));
  s.hat_kappa_sq = Vector::Zero(static_cast<int>(hat.size()));
  int i = 0;
  for (double v : kappa) s.kappa_sq(i++) = v;
  i = 0;
  for (double v : hat) s.hat_kappa_sq(i++) = v;
  return s;
}

// independent re-implementation of the reduced dynamics, written directly
// from the scalar formulas with no shared helpers
IwRates naive_rates(const InfiniteWidthState& s, const Vector& sigma_sq, double tau_sq,
                    double K) {
  const int r = static_cast<int>(s.kappa_sq.size());
  const double nk = s.kappa_sq.sum();
  double zc = 1.0, hat_sum = 0.0;
  std::vector<double> T(r);
  for (int k = 0; k < r; ++k) {
    T[k] = std::tanh(tau_sq * s.hat_kappa_sq(k) / nk);
    zc *= std::cosh(tau_sq * s.hat_kappa_sq(k) / nk);
    hat_sum += s.hat_kappa_sq(k);
  }
  const double e = std::exp(tau_sq * hat_sum / nk);
  const double st = e / (e + K * zc);
  double tt = 0.0;
  for (int k = 0; k < r; ++k) tt += s.hat_kappa_sq(k) / nk * T[k];
  IwRates out;
  out.d_kappa_sq.resize(r);
  out.d_hat_kappa_sq.resize(r);
  for (int p = 0; p < r; ++p) {
    const double x = s.hat_kappa_sq(p) / nk, y = s.kappa_sq(p) / nk;
    out.d_kappa_sq(p) = 4 * (1 - st) * (x - (hat_sum / nk) * y) * sigma_sq(p) -
                        4 * (1 - st) * (x * T[p] - y * tt) * sigma_sq(p);
    out.d_hat_kappa_sq(p) = 4 * (1 - st) * (y - (hat_sum / nk) * x) * sigma_sq(p) -
                            4 * (1 - st) * (y * T[p] - x * tt) * sigma_sq(p);
  }
  return out;
}

}  // namespace

TEST_CASE("closed forms") {
  SUBCASE("r=1 fully aligned at tau^2=1 gives T = tanh(1)") {
    const auto s = state_of({2.0}, {2.0});
    const ClosedForms cf = closed_forms(s, 1.0, 1.0);
    CHECK(cf.T(0) == doctest::Approx(0.7615941559).epsilon(1e-9));
  }
  SUBCASE("zero hat-kappa degenerates to cosh(0) forms") {
    const auto s = state_of({1.0, 2.0}, {0.0, 0.0});
    const ClosedForms cf = closed_forms(s, 1.0, 3.0);
    CHECK(cf.Z_c == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cf.T.cwiseAbs().maxCoeff() == 0.0);
    CHECK(cf.T_tilde == 0.0);
    CHECK(cf.S_tilde == doctest::Approx(1.0 / 4.0).epsilon(1e-15));
  }
  SUBCASE("Z_c equals the enumerated inner partition on a diagonal state") {
    // diagonal K_A = K_B with column norms kappa and no noise
    const int r = 5;
    Matrix D = Matrix::Zero(r, r);
    for (int p = 0; p < r; ++p) D(p, p) = 0.5 + 0.25 * p;
    const KState ks = direct_kstate(D, D, Matrix::Zero(r, 0), Matrix::Zero(r, 0));
    const InfiniteWidthState s = measure_iw_state(ks);
    const double tau_sq = 1.0;
    const ClosedForms cf = closed_forms(s, tau_sq, 1.0);
    // enumerate E_z- exp(tau^2 <z+, z->_{hat kappa^2} / (N_A N_B)); z+ fixed
    const double nn = ks.N_A * ks.N_B;
    double acc = 0.0;
    const auto grid = oracle::sign_grid(r);
    const Vector zp = Vector::Ones(r) / std::sqrt(static_cast<double>(r));
    for (const Vector& zm : grid) {
      double dot = 0.0;
      for (int k = 0; k < r; ++k)
        dot += s.hat_kappa_sq(k) * zp(k) * (zm(k) / std::sqrt(static_cast<double>(r)));
      acc += std::exp(tau_sq * dot / nn);
    }
    acc /= static_cast<double>(grid.size());
    CHECK(cf.Z_c == doctest::Approx(acc).epsilon(1e-10));
  }
  SUBCASE("tanh/cosh identity per entry") {
    const auto s = state_of({2.0, 1.0, 0.7}, {1.5, 0.6, -0.2});
    const ClosedForms cf = closed_forms(s, 0.9, 2.0);
    const double nk = s.kappa_sq.sum();
    for (int p = 0; p < 3; ++p) {
      const double arg = 0.9 * s.hat_kappa_sq(p) / nk;
      CHECK(cf.T(p) * cf.T(p) + 1.0 / std::pow(std::cosh(arg), 2) ==
            doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  SUBCASE("degenerate norm raises") {
    auto s = state_of({0.0, 0.0}, {0.0, 0.0});
    CHECK_THROWS_AS(closed_forms(s, 1.0, 1.0), DegenerateError);
  }
}

TEST_CASE("iw_rates") {
  SUBCASE("balanced aligned state is a fixed point") {
    const auto s = state_of({1.5, 1.5, 1.5}, {1.5, 1.5, 1.5});
    const IwRates r = iw_rates(s, Vector::Ones(3), 1.0, 1.0);
    CHECK(r.d_kappa_sq.cwiseAbs().maxCoeff() < 1e-15);
    CHECK(r.d_hat_kappa_sq.cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("aligned unequal state shrinks the largest and grows the smallest") {
    const auto s = state_of({2.0, 1.0, 0.5}, {2.0, 1.0, 0.5});
    const IwRates r = iw_rates(s, Vector::Ones(3), 1.0, 1.0);
    const ClosedForms cf = closed_forms(s, 1.0, 1.0);
    for (int p = 0; p < 3; ++p) {
      if (cf.T(p) > cf.T_tilde) CHECK(r.d_kappa_sq(p) < 0.0);
      if (cf.T(p) < cf.T_tilde) CHECK(r.d_kappa_sq(p) > 0.0);
    }
  }
  SUBCASE("matches an independent re-implementation at 1e-12") {
    std::mt19937_64 rng = make_rng(90);
    std::uniform_real_distribution<double> unif(0.2, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
      InfiniteWidthState s;
      s.kappa_sq = Vector::Zero(2);
      s.hat_kappa_sq = Vector::Zero(2);
      for (int p = 0; p < 2; ++p) {
        s.kappa_sq(p) = unif(rng);
        s.hat_kappa_sq(p) = s.kappa_sq(p) * (2.0 * unif(rng) / 2.0 - 0.9);
      }
      const Vector sigma_sq = (Vector(2) << unif(rng), unif(rng)).finished();
      const IwRates a = iw_rates(s, sigma_sq, 0.7, 1.3);
      const IwRates b = naive_rates(s, sigma_sq, 0.7, 1.3);
      CHECK((a.d_kappa_sq - b.d_kappa_sq).cwiseAbs().maxCoeff() < 1e-12);
      CHECK((a.d_hat_kappa_sq - b.d_hat_kappa_sq).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("integrate_iw") {
  SUBCASE("fixed point stays constant") {
    const auto s0 = state_of({1.0, 1.0}, {1.0, 1.0});
    IwSchedule sched;
    const auto traj = integrate_iw(s0, Vector::Ones(2), sched, 0.05, 3.0);
    for (const auto& pt : traj) {
      CHECK((pt.state.kappa_sq.array() - 1.0).abs().maxCoeff() < 1e-12);
      CHECK((pt.state.hat_kappa_sq.array() - 1.0).abs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("RK4 order: halving the step shrinks the error ~16x") {
    const auto s0 = state_of({2.0, 1.0, 0.5}, {1.0, 0.5, 0.25});
    const Vector sigma_sq = (Vector(3) << 2.0, 1.0, 1.0).finished();
    IwSchedule sched;
    auto final_k = [&](double h) {
      return integrate_iw(s0, sigma_sq, sched, h, 2.0).back().state.kappa_sq;
    };
    const Vector ref = final_k(0.003125);
    const double e1 = (final_k(0.1) - ref).norm();
    const double e2 = (final_k(0.05) - ref).norm();
    CHECK(e1 / e2 > 12.0);
    CHECK(e1 / e2 < 20.0);
  }
  SUBCASE("alignment ratio converges monotonically to 1") {
    const auto s0 = state_of({1.0, 0.8}, {0.6, 0.5});
    IwSchedule sched;
    const auto traj = integrate_iw(s0, Vector::Ones(2), sched, 0.01, 20.0);
    double prev0 = 0.0, prev1 = 0.0;
    for (const auto& pt : traj) {
      const double r0 = pt.state.hat_kappa_sq(0) / pt.state.kappa_sq(0);
      const double r1 = pt.state.hat_kappa_sq(1) / pt.state.kappa_sq(1);
      CHECK(r0 >= prev0 - 1e-12);
      CHECK(r1 >= prev1 - 1e-12);
      prev0 = r0;
      prev1 = r1;
    }
    CHECK(prev0 > 0.999);
    CHECK(prev1 > 0.999);
  }
  SUBCASE("total mass stays within [1/d, d] of its initial value") {
    const auto s0 = state_of({2.0, 1.0, 0.5, 0.25}, {1.0, 0.5, 0.25, 0.1});
    IwSchedule sched;
    const auto traj = integrate_iw(s0, Vector::Ones(4), sched, 0.01, 30.0);
    const double init = s0.kappa_sq.sum();
    const double d = 4.0;
    for (const auto& pt : traj) {
      CHECK(pt.state.kappa_sq.sum() >= init / d);
      CHECK(pt.state.kappa_sq.sum() <= init * d);
    }
  }
  SUBCASE("tau switch lands on a step boundary") {
    const auto s0 = state_of({1.0, 0.5}, {0.3, 0.2});
    IwSchedule sched;
    sched.tau0_sq = 1e-4;
    sched.switch_time = 0.25;
    const auto traj = integrate_iw(s0, Vector::Ones(2), sched, 0.1, 1.0);
    bool hit = false;
    for (const auto& pt : traj) hit = hit || std::abs(pt.t - 0.25) < 1e-12;
    CHECK(hit);
  }
}

TEST_CASE("gronwall verification") {
  SUBCASE("analytic witness passes with margin") {
    const AuditReport rep = audit_gronwall_analytic();
    CHECK(rep.pass);
  }
  SUBCASE("beta = 0 reduces to monotone decay") {
    GronwallWitness w;
    w.X0 = 1.0;
    w.Y0 = 2.0;
    w.beta = 0.0;
    w.slope_slack = 0.02;
    for (double t = 0.0; t <= 5.0; t += 0.01) {
      w.t_trace.push_back(t);
      w.A_trace.push_back(1.0);
      w.X_trace.push_back(std::exp(-t));
      w.Y_trace.push_back(2.0 * std::exp(-0.1 * t));  // decreasing satisfies dY <= 0
    }
    const GronwallResult res = gronwall_verify(w);
    CHECK(res.applicable);
    CHECK(res.pass);
    CHECK(res.y_final <= w.Y0 * (1.0 + 1e-6));
  }
  SUBCASE("violated X slope makes the witness inapplicable") {
    GronwallWitness w;
    w.X0 = 1.0;
    w.Y0 = 1.0;
    w.beta = 1.0;
    for (double t = 0.0; t <= 1.0; t += 0.1) {
      w.t_trace.push_back(t);
      w.A_trace.push_back(1.0);
      w.X_trace.push_back(1.0 + t);  // growing X violates dX <= -A X
      w.Y_trace.push_back(1.0);
    }
    const GronwallResult res = gronwall_verify(w);
    CHECK_FALSE(res.applicable);
    CHECK_FALSE(res.pass);
  }
}

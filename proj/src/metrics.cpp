#include "cdyn/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>

namespace cdyn {

namespace {

Vector column_norms(const Matrix& M) { return M.colwise().norm(); }

void require_nonzero(const Vector& norms, const char* what) {
  if (norms.size() > 0 && norms.minCoeff() <= kCollapseEps)
    throw DegenerateError(std::string("zero column in ") + what);
}

Matrix unit_columns(const Matrix& M) {
  Matrix U = M;
  for (Eigen::Index j = 0; j < U.cols(); ++j) U.col(j).normalize();
  return U;
}

double max_abs_off_diagonal(const Matrix& M) {
  double best = 0.0;
  for (Eigen::Index j = 0; j < M.cols(); ++j)
    for (Eigen::Index i = 0; i < M.rows(); ++i)
      if (i != j) best = std::max(best, std::abs(M(i, j)));
  return best;
}

}  // namespace

double alignment_score(const KState& ks, const ExpectationStrategy& strategy) {
  if (ks.N_A <= kCollapseEps || ks.N_B <= kCollapseEps)
    throw CollapseError("alignment_score: collapsed normalizer");
  const int r = ks.r(), nu = ks.noise_dim(), d = ks.d();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Matrix P_A(ks.m(), d), P_B(ks.m(), d);
  P_A << ks.K_A, ks.K_A_xi;
  P_B << ks.K_B, ks.K_B_xi;
  const Matrix G_AA = P_A.transpose() * P_A / (ks.N_A * ks.N_A);
  const Matrix G_BB = P_B.transpose() * P_B / (ks.N_B * ks.N_B);
  const Matrix G_AB = P_A.transpose() * P_B / (ks.N_A * ks.N_B);

  KahanScalar acc;
  std::int64_t total = 0;
  // cube order: z+, z-, xi_A+, xi_B+, xi_A-, xi_B-
  const int dims[6] = {r, r, nu, nu, nu, nu};
  auto on_chunk = [&](std::span<const Matrix> cubes, std::int64_t) {
    const int n = static_cast<int>(cubes[0].cols());
    Matrix U_Ap(d, n), U_Bp(d, n), U_Am(d, n), U_Bm(d, n);
    U_Ap.topRows(r) = cubes[0] * scale;
    U_Bp.topRows(r) = cubes[0] * scale;
    U_Am.topRows(r) = cubes[1] * scale;
    U_Bm.topRows(r) = cubes[1] * scale;
    if (nu > 0) {
      U_Ap.bottomRows(nu) = cubes[2] * scale;
      U_Bp.bottomRows(nu) = cubes[3] * scale;
      U_Am.bottomRows(nu) = cubes[4] * scale;
      U_Bm.bottomRows(nu) = cubes[5] * scale;
    }
    const Matrix HBp = G_BB * U_Bp, HBm = G_BB * U_Bm;
    const Matrix HAp = G_AA * U_Ap, HAm = G_AA * U_Am;
    const Matrix XBp = G_AB * U_Bp, XBm = G_AB * U_Bm;
    Array nBp = (U_Bp.array() * HBp.array()).colwise().sum().transpose();
    Array nBm = (U_Bm.array() * HBm.array()).colwise().sum().transpose();
    Array nAp = (U_Ap.array() * HAp.array()).colwise().sum().transpose();
    Array nAm = (U_Am.array() * HAm.array()).colwise().sum().transpose();
    Array p_pp = (U_Ap.array() * XBp.array()).colwise().sum().transpose();
    Array p_pm = (U_Ap.array() * XBm.array()).colwise().sum().transpose();
    Array p_mp = (U_Am.array() * XBp.array()).colwise().sum().transpose();

    KahanScalar chunk;
    for (int i = 0; i < n; ++i) {
      const double pos = nBp(i) - 2.0 * p_pp(i);
      double hits = 0.0;
      if (pos < nBm(i) - 2.0 * p_pm(i)) hits += 1.0;                       // vs x_B-
      if (nAp(i) - 2.0 * p_pp(i) < nAm(i) - 2.0 * p_mp(i)) hits += 1.0;    // vs x_A-
      chunk.add(0.5 * hits);
    }
    acc.add(chunk.value());
  };
  if (strategy.mode == ExpectationStrategy::Mode::Exact) {
    enumerate_sign_cubes(dims, strategy.exact_budget, on_chunk);
    total = sign_cube_total(dims);
  } else {
    mc_sign_cubes(dims, strategy.mc_samples, strategy.mc_seed, on_chunk);
    total = strategy.mc_samples;
  }
  return acc.value() / static_cast<double>(total);
}

Vector sigma_f_spectrum(const KState& ks, int count) {
  const int d = ks.d();
  Matrix P_A(ks.m(), d);
  P_A << ks.K_A, ks.K_A_xi;
  const Matrix gram = P_A.transpose() * P_A / (ks.N_A * ks.N_A * static_cast<double>(d));
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  Vector lambda = eig.eigenvalues().reverse();  // descending
  Vector out = Vector::Zero(count);
  for (int i = 0; i < count && i < lambda.size(); ++i) out(i) = std::max(lambda(i), 0.0);
  return out;
}

double balance_score(const KState& ks) {
  if (ks.N_A <= kCollapseEps) throw CollapseError("balance_score: collapsed normalizer");
  Vector lambda = sigma_f_spectrum(ks, ks.d());
  const double top = lambda.maxCoeff();
  if (top <= 0.0) throw CollapseError("balance_score: zero covariance");
  return lambda.squaredNorm() / (top * top);
}

ConditionNumbers condition_numbers(const KState& ks) {
  const Vector norms = column_norms(ks.K_A);
  require_nonzero(norms, "K_A");
  ConditionNumbers out;
  out.kappa0 = norms.maxCoeff() / norms.minCoeff();
  Eigen::JacobiSVD<Matrix> svd(ks.K_A);
  const Vector sv = svd.singularValues();
  out.spectral = sv(sv.size() - 1) > 0.0
                     ? sv(0) / (sv(sv.size() - 1))
                     : std::numeric_limits<double>::infinity();
  return out;
}

Ratios ratios(const KState& ks) {
  Ratios out;
  const Vector nA = column_norms(ks.K_A);
  const Vector nB = column_norms(ks.K_B);
  require_nonzero(nA, "K_A");
  require_nonzero(nB, "K_B");
  double worst = 1.0;
  for (int p = 0; p < ks.r(); ++p)
    worst = std::min(worst, ks.K_A.col(p).dot(ks.K_B.col(p)) / (nA(p) * nB(p)));
  out.rho_minus = 1.0 - worst;
  if (ks.noise_dim() > 0) {
    const Vector nAxi = column_norms(ks.K_A_xi);
    out.rho_ns = nAxi.maxCoeff() / nA.minCoeff();
    const double denom = (ks.K_A + ks.K_B).norm();
    out.rho_hat_ns = denom > kCollapseEps ? ks.K_A_xi.norm() / denom
                                          : std::numeric_limits<double>::infinity();
  }
  return out;
}

DiagnosticsRecord diagnostics(const KState& ks) {
  DiagnosticsRecord out;
  const Vector nA = column_norms(ks.K_A);
  const Vector nB = column_norms(ks.K_B);
  require_nonzero(nA, "K_A");
  require_nonzero(nB, "K_B");
  for (int p = 0; p < ks.r(); ++p)
    out.delta_AB = std::max(out.delta_AB, std::abs(nA(p) * nA(p) / (nB(p) * nB(p)) - 1.0));

  const Matrix UA = unit_columns(ks.K_A);
  const Matrix UB = unit_columns(ks.K_B);
  out.delta_AB_perp = std::max({max_abs_off_diagonal(UA.transpose() * UA),
                                max_abs_off_diagonal(UB.transpose() * UB),
                                max_abs_off_diagonal(UA.transpose() * UB)});

  if (ks.noise_dim() > 0) {
    const Vector nAxi = column_norms(ks.K_A_xi);
    const Vector nBxi = column_norms(ks.K_B_xi);
    require_nonzero(nAxi, "K_A_xi");
    require_nonzero(nBxi, "K_B_xi");
    for (int q = 0; q < ks.noise_dim(); ++q)
      out.delta_AB = std::max(out.delta_AB,
                              std::abs(nAxi(q) * nAxi(q) / (nBxi(q) * nBxi(q)) - 1.0));
    for (int p = 0; p < ks.noise_dim(); ++p)
      for (int q = 0; q < ks.noise_dim(); ++q)
        out.delta_xi_kappa0 = std::max(out.delta_xi_kappa0, std::abs(1.0 - nAxi(p) / nAxi(q)));

    const Matrix UAxi = unit_columns(ks.K_A_xi);
    const Matrix UBxi = unit_columns(ks.K_B_xi);
    const double signal_noise =
        std::max({(UA.transpose() * UAxi).cwiseAbs().maxCoeff(),
                  (UA.transpose() * UBxi).cwiseAbs().maxCoeff(),
                  (UB.transpose() * UAxi).cwiseAbs().maxCoeff(),
                  (UB.transpose() * UBxi).cwiseAbs().maxCoeff()});
    const double noise_noise = (UAxi.transpose() * UBxi).cwiseAbs().maxCoeff();
    out.delta_xi_perp = std::max(signal_noise, noise_noise);
  }
  return out;
}

MetricsRecord metrics_record(const KState& ks, const ExpectationStrategy& strategy) {
  MetricsRecord rec;
  rec.gamma_align = alignment_score(ks, strategy);
  rec.gamma_balance = balance_score(ks);
  const ConditionNumbers cond = condition_numbers(ks);
  rec.kappa0 = cond.kappa0;
  rec.kappa_spectral = cond.spectral;
  const Ratios rho = ratios(ks);
  rec.rho_minus = rho.rho_minus;
  rec.rho_ns = rho.rho_ns;
  rec.rho_hat_ns = rho.rho_hat_ns;
  rec.sigma_f_top = sigma_f_spectrum(ks, std::min(ks.m(), ks.r() + 4));
  return rec;
}

}  // namespace cdyn

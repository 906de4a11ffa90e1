#include "cdyn/gradients.hpp"

#include <cmath>

namespace cdyn {

namespace {

// L * diag(w) * R^T
Matrix wprod(const Matrix& L, const Vector& w, const Matrix& R) {
  return L * w.asDiagonal() * R.transpose();
}

}  // namespace

namespace {

// Fused QSet accumulation. All four Q matrices are blocks of one combined
// d x d chunk matrix:
//   C = (U_B w0) U_A^T - K (TB' gB) U_A^T - K (U_B gA) TA'^T
// with TB' = TB/sqrt(d): Q1 = C[z,z], Q1_xiB = C[xiB,z], Q1_xiA = C[z,xiA]^T,
// Q2 = C[xiB,xiA] (each times d). The Monte Carlo path runs in single
// precision: the sampling error of the outer average dominates fp32
// rounding by several orders; chunk partials are reduced in double.
template <typename Scalar>
struct QsetCore {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  int r, nu, d;
  Scalar NN, tau_sq, K, arg_scale, ip_scale, lat_scale, inv_sqrt_d;
  Mat G;
  KahanMatrix accC;
  KahanScalar accQ0;

  QsetCore(const KState& ks, double tau, double kk)
      : r(ks.r()), nu(ks.noise_dim()), d(ks.d()), accC(ks.d(), ks.d()) {
    if (ks.N_A <= kCollapseEps || ks.N_B <= kCollapseEps)
      throw CollapseError("compute_qset: collapsed normalizer");
    NN = static_cast<Scalar>(ks.N_A * ks.N_B);
    tau_sq = static_cast<Scalar>(tau);
    K = static_cast<Scalar>(kk);
    const double sqrt_d = std::sqrt(static_cast<double>(d));
    arg_scale = static_cast<Scalar>(tau / (ks.N_A * ks.N_B * sqrt_d));
    ip_scale = static_cast<Scalar>(1.0 / (ks.N_A * ks.N_B * sqrt_d));
    lat_scale = static_cast<Scalar>(1.0 / sqrt_d);
    inv_sqrt_d = lat_scale;
    Matrix P_A(ks.m(), d), P_B(ks.m(), d);
    P_A << ks.K_A, ks.K_A_xi;
    P_B << ks.K_B, ks.K_B_xi;
    G = (P_A.transpose() * P_B).template cast<Scalar>();
  }

  void process(std::span<const Mat> cubes) {
    const int n = static_cast<int>(cubes[0].cols());
    Mat U_A(d, n), U_B(d, n);
    U_A.topRows(r) = cubes[0] * lat_scale;
    U_B.topRows(r) = cubes[0] * lat_scale;
    if (nu > 0) {
      U_A.bottomRows(nu) = cubes[1] * lat_scale;
      U_B.bottomRows(nu) = cubes[2] * lat_scale;
    }
    Mat H = G * U_B;
    Mat CB = G.transpose() * U_A;
    Arr p = (U_A.array() * H.array()).colwise().sum().transpose() / NN;

    Mat TB = (CB.array() * arg_scale).tanh().matrix();
    Mat TA = (H.array() * arg_scale).tanh().matrix();
    // log cosh x = -0.5 log(1 - tanh^2 x); tanh saturation falls back to |x| - ln 2
    const Scalar ln2 = static_cast<Scalar>(0.6931471805599453);
    auto logcosh_cols = [&](const Mat& T, const Mat& A) -> Arr {
      Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> t2 = T.array().square();
      return (t2 < Scalar(1))
          .select((-t2).log1p() * Scalar(-0.5), (A.array() * arg_scale).abs() - ln2)
          .colwise()
          .sum()
          .transpose();
    };
    Arr logZB = logcosh_cols(TB, CB);
    Arr logZA = logcosh_cols(TA, H);

    Arr ratioB = (logZB - tau_sq * p).exp();
    Arr ratioA = (logZA - tau_sq * p).exp();
    Arr S_A = 1 / (1 + K * ratioB);
    Arr S_B = 1 / (1 + K * ratioA);
    Arr w0 = 2 - S_A - S_B;
    Arr gB = S_A * ratioB;
    Arr gA = S_B * ratioA;
    Arr ipB = (CB.array() * TB.array()).colwise().sum().transpose() * ip_scale;
    Arr ipA = (H.array() * TA.array()).colwise().sum().transpose() * ip_scale;

    accQ0.add(static_cast<double>((-w0 * p + K * gB * ipB + K * gA * ipA).sum()));

    Mat C = (U_B.array().rowwise() * w0.transpose()).matrix() * U_A.transpose();
    C.noalias() -= K * (TB.array().rowwise() * (gB * inv_sqrt_d).transpose()).matrix() *
                   U_A.transpose();
    C.noalias() -= K * (U_B.array().rowwise() * (gA * inv_sqrt_d).transpose()).matrix() *
                   TA.transpose();
    if constexpr (std::is_same_v<Scalar, double>) {
      accC.add(C);
    } else {
      accC.add(C.template cast<double>());
    }
  }

  QSet finish(std::int64_t total) const {
    const double scale = static_cast<double>(d) / static_cast<double>(total);
    const Matrix C = accC.value() * scale;
    QSet q;
    q.Q0 = accQ0.value() / static_cast<double>(total);
    q.Q1 = C.topLeftCorner(r, r);
    q.Q1_xiB = C.bottomLeftCorner(nu, r);
    q.Q1_xiA = C.topRightCorner(r, nu).transpose();
    q.Q2 = C.bottomRightCorner(nu, nu);
    return q;
  }
};

}  // namespace

QSet compute_qset(const KState& ks, double tau_sq, double K,
                  const ExpectationStrategy& strategy) {
  const int dims[3] = {ks.r(), ks.noise_dim(), ks.noise_dim()};
  if (strategy.mode == ExpectationStrategy::Mode::Exact) {
    QsetCore<double> core(ks, tau_sq, K);
    enumerate_sign_cubes(dims, strategy.exact_budget,
                         [&](std::span<const Matrix> cubes, std::int64_t) { core.process(cubes); });
    return core.finish(sign_cube_total(dims));
  }
  QsetCore<float> core(ks, tau_sq, K);
  using MatF = Eigen::MatrixXf;
  detail::mc_sign_cubes_t<MatF>(dims, strategy.mc_samples, strategy.mc_seed,
                                [&](std::span<const MatF> cubes, std::int64_t) {
                                  core.process(cubes);
                                });
  return core.finish(strategy.mc_samples);
}

KRates krates_from_qset(const KState& ks, const QSet& q, const Vector& sigma_sq,
                        double sigma_xi_sq) {
  if (sigma_sq.size() != ks.r()) throw std::invalid_argument("krates_from_qset: sigma_sq shape");
  if (q.Q1.rows() != ks.r() || q.Q1_xiA.rows() != ks.noise_dim())
    throw std::invalid_argument("krates_from_qset: QSet shape");
  const double d = static_cast<double>(ks.d());
  const double nn = ks.N_A * ks.N_B * d;
  const double na2 = ks.N_A * ks.N_A * d;
  const double nb2 = ks.N_B * ks.N_B * d;

  KRates out;
  out.dK_A = ((ks.K_B * q.Q1 + ks.K_B_xi * q.Q1_xiB) / nn + ks.K_A * (q.Q0 / na2)) *
             sigma_sq.asDiagonal();
  out.dK_B = ((ks.K_A * q.Q1.transpose() + ks.K_A_xi * q.Q1_xiA) / nn + ks.K_B * (q.Q0 / nb2)) *
             sigma_sq.asDiagonal();
  out.dK_A_xi = ((ks.K_B * q.Q1_xiA.transpose() + ks.K_B_xi * q.Q2) / nn +
                 ks.K_A_xi * (q.Q0 / na2)) *
                sigma_xi_sq;
  out.dK_B_xi = ((ks.K_A * q.Q1_xiB.transpose() + ks.K_A_xi * q.Q2.transpose()) / nn +
                 ks.K_B_xi * (q.Q0 / nb2)) *
                sigma_xi_sq;
  return out;
}

KRates krates_direct(const WeightState& weights, const EncoderSet& encoders, double tau_sq,
                     double K, const ExpectationStrategy& strategy) {
  const KState ks = compute_kstate(weights, encoders);
  const int r = ks.r(), nu = ks.noise_dim(), m = ks.m();
  const double d = static_cast<double>(ks.d());
  const double inv_sqrt_d = 1.0 / std::sqrt(d);
  const double na2d = ks.N_A * ks.N_A * d;
  const double nb2d = ks.N_B * ks.N_B * d;

  Matrix P_A(m, ks.d()), P_B(m, ks.d());
  P_A << ks.K_A, ks.K_A_xi;
  P_B << ks.K_B, ks.K_B_xi;

  KahanMatrix accA(m, r), accB(m, r), accAxi(m, nu), accBxi(m, nu);

  std::int64_t total = for_each_positive_chunk(ks, tau_sq, K, strategy, [&](const ScoreBatch& sb) {
    const auto Z = sb.U_A.topRows(r);
    const auto XiA = sb.U_A.bottomRows(nu);
    const auto XiB = sb.U_B.bottomRows(nu);
    const Matrix F_A = P_A * sb.U_A / ks.N_A;  // m x n positives
    const Matrix F_B = P_B * sb.U_B / ks.N_B;
    const Matrix MB = P_B * sb.TB * (inv_sqrt_d / ks.N_B);  // B-negative feature moments
    const Matrix MA = P_A * sb.TA * (inv_sqrt_d / ks.N_A);  // A-negative feature moments
    const Matrix TBz = sb.TB.topRows(r) * inv_sqrt_d;
    const Matrix TBxi = sb.TB.bottomRows(nu) * inv_sqrt_d;
    const Matrix TAz = sb.TA.topRows(r) * inv_sqrt_d;
    const Matrix TAxi = sb.TA.bottomRows(nu) * inv_sqrt_d;

    double s_w0p = 0, s_gB_ipB = 0, s_gA_ipA = 0;
    for (int i = 0; i < sb.n(); ++i) {
      s_w0p += sb.w0(i) * sb.p(i);
      s_gB_ipB += sb.gB(i) * sb.ipB(i);
      s_gA_ipA += sb.gA(i) * sb.ipA(i);
    }
    const double radial = -s_w0p + K * s_gB_ipB + K * s_gA_ipA;

    accA.add(wprod(F_B, sb.w0, Z) / ks.N_A - K * wprod(MB, sb.gB, Z) / ks.N_A -
             K * wprod(F_B, sb.gA, TAz) / ks.N_A + (radial / na2d) * ks.K_A);
    accB.add(wprod(F_A, sb.w0, Z) / ks.N_B - K * wprod(F_A, sb.gB, TBz) / ks.N_B -
             K * wprod(MA, sb.gA, Z) / ks.N_B + (radial / nb2d) * ks.K_B);
    if (nu > 0) {
      accAxi.add(wprod(F_B, sb.w0, XiA) / ks.N_A - K * wprod(MB, sb.gB, XiA) / ks.N_A -
                 K * wprod(F_B, sb.gA, TAxi) / ks.N_A + (radial / na2d) * ks.K_A_xi);
      accBxi.add(wprod(F_A, sb.w0, XiB) / ks.N_B - K * wprod(F_A, sb.gB, TBxi) / ks.N_B -
                 K * wprod(MA, sb.gA, XiB) / ks.N_B + (radial / nb2d) * ks.K_B_xi);
    }
  });

  const double inv_total = 1.0 / static_cast<double>(total);
  const Vector sigma_sq = encoders.A.colwise().squaredNorm();
  const double sigma_xi_sq = nu > 0 ? encoders.A_xi.col(0).squaredNorm() : 0.0;

  KRates out;
  out.dK_A = accA.value() * inv_total * sigma_sq.asDiagonal();
  out.dK_B = accB.value() * inv_total * sigma_sq.asDiagonal();
  out.dK_A_xi = accAxi.value() * (inv_total * sigma_xi_sq);
  out.dK_B_xi = accBxi.value() * (inv_total * sigma_xi_sq);
  return out;
}

GradientPair grad_contrastive(const WeightState& weights, const EncoderSet& encoders,
                              double tau_sq, double K, const ExpectationStrategy& strategy) {
  const KState ks = compute_kstate(weights, encoders);
  const int r = ks.r(), nu = ks.noise_dim(), m = ks.m();
  const int d = ks.d();
  const double dd = static_cast<double>(d);
  const double inv_sqrt_d = 1.0 / std::sqrt(dd);

  Matrix M_A(d, d), M_B(d, d);
  M_A << encoders.A, encoders.A_xi;
  M_B << encoders.B, encoders.B_xi;
  Matrix P_A(m, d), P_B(m, d);
  P_A << ks.K_A, ks.K_A_xi;
  P_B << ks.K_B, ks.K_B_xi;
  const Matrix R_A = M_A * P_A.transpose();  // A K_A^T + A_xi K_{A,xi}^T
  const Matrix R_B = M_B * P_B.transpose();

  KahanMatrix accA(d, m), accB(d, m);

  std::int64_t total = for_each_positive_chunk(ks, tau_sq, K, strategy, [&](const ScoreBatch& sb) {
    const Matrix X_A = M_A * sb.U_A;  // ambient positives
    const Matrix X_B = M_B * sb.U_B;
    const Matrix F_A = P_A * sb.U_A / ks.N_A;
    const Matrix F_B = P_B * sb.U_B / ks.N_B;
    const Matrix MB = P_B * sb.TB * (inv_sqrt_d / ks.N_B);
    const Matrix MA = P_A * sb.TA * (inv_sqrt_d / ks.N_A);
    const Matrix XB_neg = M_B * sb.TB * inv_sqrt_d;  // ambient B-negative moments
    const Matrix XA_neg = M_A * sb.TA * inv_sqrt_d;

    double s_w0p = 0, s_gB_ipB = 0, s_gA_ipA = 0;
    for (int i = 0; i < sb.n(); ++i) {
      s_w0p += sb.w0(i) * sb.p(i);
      s_gB_ipB += sb.gB(i) * sb.ipB(i);
      s_gA_ipA += sb.gA(i) * sb.ipA(i);
    }

    accA.add(-tau_sq * (wprod(X_A, sb.w0, F_B) / ks.N_A - s_w0p * R_A / (ks.N_A * ks.N_A * dd)) +
             K * tau_sq / ks.N_A *
                 (wprod(X_A, sb.gB, MB) - s_gB_ipB * R_A / (ks.N_A * dd)) +
             K * tau_sq / ks.N_A *
                 (wprod(XA_neg, sb.gA, F_B) - s_gA_ipA * R_A / (ks.N_A * dd)));
    accB.add(-tau_sq * (wprod(X_B, sb.w0, F_A) / ks.N_B - s_w0p * R_B / (ks.N_B * ks.N_B * dd)) +
             K * tau_sq / ks.N_B *
                 (wprod(XB_neg, sb.gB, F_A) - s_gB_ipB * R_B / (ks.N_B * dd)) +
             K * tau_sq / ks.N_B *
                 (wprod(X_B, sb.gA, MA) - s_gA_ipA * R_B / (ks.N_B * dd)));
  });

  const double inv_total = 1.0 / static_cast<double>(total);
  GradientPair g;
  g.grad_W_A = accA.value() * inv_total;
  g.grad_W_B = accB.value() * inv_total;
  return g;
}

GradientPair grad_non_contrastive(const WeightState& weights, const EncoderSet& encoders,
                                  const ExpectationStrategy& strategy) {
  const KState ks = compute_kstate(weights, encoders);
  const int m = ks.m(), d = ks.d();
  const double dd = static_cast<double>(d);

  Matrix M_A(d, d), M_B(d, d);
  M_A << encoders.A, encoders.A_xi;
  M_B << encoders.B, encoders.B_xi;
  Matrix P_A(m, d), P_B(m, d);
  P_A << ks.K_A, ks.K_A_xi;
  P_B << ks.K_B, ks.K_B_xi;
  const Matrix R_A = M_A * P_A.transpose();
  const Matrix R_B = M_B * P_B.transpose();

  KahanMatrix accA(d, m), accB(d, m);
  std::int64_t total = for_each_positive_chunk(ks, 0.0, 0.0, strategy, [&](const ScoreBatch& sb) {
    const Matrix X_A = M_A * sb.U_A;
    const Matrix X_B = M_B * sb.U_B;
    const Matrix F_A = P_A * sb.U_A / ks.N_A;
    const Matrix F_B = P_B * sb.U_B / ks.N_B;
    const double s_p = sb.p.sum();
    const Vector ones = Vector::Ones(sb.n());
    accA.add(wprod(X_A, ones, F_B) / ks.N_A - s_p * R_A / (ks.N_A * ks.N_A * dd));
    accB.add(wprod(X_B, ones, F_A) / ks.N_B - s_p * R_B / (ks.N_B * ks.N_B * dd));
  });

  // The loss is -E<f_A, f_B>, so the gradient is the negated expectation.
  const double inv_total = 1.0 / static_cast<double>(total);
  GradientPair g;
  g.grad_W_A = -accA.value() * inv_total;
  g.grad_W_B = -accB.value() * inv_total;
  return g;
}

RadialTangentRates radial_tangent_rates(const KState& ks, const QSet& q, const Vector& sigma_sq,
                                        double sigma_xi_sq) {
  const int r = ks.r(), nu = ks.noise_dim(), m = ks.m();
  const double d = static_cast<double>(ks.d());
  const double nn = ks.N_A * ks.N_B * d;
  const double na2 = ks.N_A * ks.N_A * d;
  const double nb2 = ks.N_B * ks.N_B * d;

  RadialTangentRates out;
  out.d_norm_sq_K_A.resize(r);
  out.d_norm_sq_K_B.resize(r);
  out.d_norm_sq_K_A_xi.resize(nu);
  out.d_norm_sq_K_B_xi.resize(nu);
  out.d_unit_K_A.resize(m, r);
  out.d_unit_K_B.resize(m, r);
  out.d_unit_K_A_xi.resize(m, nu);
  out.d_unit_K_B_xi.resize(m, nu);

  const Matrix VA = ks.K_B * q.Q1 + ks.K_B_xi * q.Q1_xiB;              // tangent drivers, A side
  const Matrix VB = ks.K_A * q.Q1.transpose() + ks.K_A_xi * q.Q1_xiA;
  const Matrix WA = ks.K_B * q.Q1_xiA.transpose() + ks.K_B_xi * q.Q2;
  const Matrix WB = ks.K_A * q.Q1_xiB.transpose() + ks.K_A_xi * q.Q2.transpose();

  auto column_rates = [&](const Matrix& Kmat, const Matrix& V, double coeff, double radial_den,
                          Vector& d_norm, Matrix& d_unit, int j) {
    const Vector col = Kmat.col(j);
    const double norm = col.norm();
    if (norm <= kCollapseEps)
      throw DegenerateError("radial_tangent_rates: zero column");
    d_norm(j) = 2.0 * col.dot(V.col(j)) * coeff / nn + 2.0 * norm * norm * q.Q0 * coeff / radial_den;
    const Vector unit = col / norm;
    const Vector drive = V.col(j) / norm * (coeff / nn);
    d_unit.col(j) = drive - unit * unit.dot(drive);
  };

  for (int p = 0; p < r; ++p) {
    column_rates(ks.K_A, VA, sigma_sq(p), na2, out.d_norm_sq_K_A, out.d_unit_K_A, p);
    column_rates(ks.K_B, VB, sigma_sq(p), nb2, out.d_norm_sq_K_B, out.d_unit_K_B, p);
  }
  for (int s = 0; s < nu; ++s) {
    column_rates(ks.K_A_xi, WA, sigma_xi_sq, na2, out.d_norm_sq_K_A_xi, out.d_unit_K_A_xi, s);
    column_rates(ks.K_B_xi, WB, sigma_xi_sq, nb2, out.d_norm_sq_K_B_xi, out.d_unit_K_B_xi, s);
  }
  return out;
}

GradientPair weight_step_from_krates(const EncoderSet& encoders, const Vector& sigma_sq,
                                     double sigma_xi_sq, const KRates& rates) {
  const int d = static_cast<int>(encoders.A.rows());
  const int r = static_cast<int>(encoders.A.cols());
  const int nu = d - r;
  Matrix M_A(d, d), M_B(d, d);
  M_A << encoders.A, encoders.A_xi;
  M_B << encoders.B, encoders.B_xi;
  Vector dinv(d);
  dinv.head(r) = sigma_sq.cwiseInverse();
  if (nu > 0) dinv.tail(nu).setConstant(1.0 / sigma_xi_sq);

  const int m = static_cast<int>(rates.dK_A.rows());
  Matrix dK_A_full(m, d), dK_B_full(m, d);
  dK_A_full << rates.dK_A, rates.dK_A_xi;
  dK_B_full << rates.dK_B, rates.dK_B_xi;

  GradientPair step;
  step.grad_W_A = M_A * dinv.asDiagonal() * dK_A_full.transpose();
  step.grad_W_B = M_B * dinv.asDiagonal() * dK_B_full.transpose();
  return step;
}

FiniteDifferenceReport finite_difference_audit(const WeightState& weights,
                                               const EncoderSet& encoders, double tau_sq,
                                               double K, std::span<const double> steps,
                                               LossKind kind) {
  const ExpectationStrategy strategy = ExpectationStrategy::exact();
  auto loss_at = [&](const WeightState& w) {
    const KState ks = compute_kstate(w, encoders);
    return kind == LossKind::Contrastive ? contrastive_loss(ks, tau_sq, K, strategy)
                                         : non_contrastive_loss_closed_form(ks);
  };
  const GradientPair g = kind == LossKind::Contrastive
                             ? grad_contrastive(weights, encoders, tau_sq, K, strategy)
                             : grad_non_contrastive(weights, encoders, strategy);
  const double gnorm = std::sqrt(g.grad_W_A.squaredNorm() + g.grad_W_B.squaredNorm());

  FiniteDifferenceReport report;
  report.kind = kind;
  for (double h : steps) {
    WeightState w = weights;
    double err_sq = 0.0;
    auto probe = [&](Matrix& W, const Matrix& G) {
      for (Eigen::Index j = 0; j < W.cols(); ++j) {
        for (Eigen::Index i = 0; i < W.rows(); ++i) {
          const double orig = W(i, j);
          W(i, j) = orig + h;
          const double lp = loss_at(w);
          W(i, j) = orig - h;
          const double lm = loss_at(w);
          W(i, j) = orig;
          const double fd = (lp - lm) / (2.0 * h);
          err_sq += (fd - G(i, j)) * (fd - G(i, j));
        }
      }
    };
    probe(w.W_A, g.grad_W_A);
    probe(w.W_B, g.grad_W_B);
    report.steps.push_back(h);
    report.errors.push_back(std::sqrt(err_sq) / std::max(gnorm, 1e-300));
  }
  const auto best = std::min_element(report.errors.begin(), report.errors.end());
  report.best_error = *best;
  report.best_step = report.steps[best - report.errors.begin()];
  return report;
}

}  // namespace cdyn

#include "cdyn/expectation.hpp"

#include <cmath>
#include <vector>

#include "cdyn/rng.hpp"

namespace cdyn {

namespace {

constexpr int kLanes = 64;
constexpr std::int64_t kChunk = 4096;
constexpr double kLn2 = 0.6931471805599453;

}  // namespace

ExpectationStrategy ExpectationStrategy::substream(std::uint64_t tag) const {
  ExpectationStrategy s = *this;
  if (s.mode == Mode::MonteCarlo) s.mc_seed = derive_seed(s.mc_seed, tag);
  return s;
}

void KahanMatrix::add(const Matrix& x) {
  for (Eigen::Index j = 0; j < sum.cols(); ++j) {
    for (Eigen::Index i = 0; i < sum.rows(); ++i) {
      double& s = sum(i, j);
      double v = x(i, j);
      double t = s + v;
      comp(i, j) += (std::abs(s) >= std::abs(v)) ? (s - t) + v : (v - t) + s;
      s = t;
    }
  }
}

std::int64_t sign_cube_total(std::span<const int> dims) {
  int bits = 0;
  for (int d : dims) bits += d;
  if (bits >= 62) return std::int64_t(1) << 62;  // saturate
  return std::int64_t(1) << bits;
}

void enumerate_sign_cubes(std::span<const int> dims, std::int64_t budget, const SignChunkFn& visit) {
  const std::int64_t total = sign_cube_total(dims);
  if (total > budget)
    throw BudgetError("exact enumeration of " + std::to_string(total) +
                      " points exceeds budget " + std::to_string(budget));
  std::vector<Matrix> cubes(dims.size());
  for (std::int64_t base = 0; base < total; base += kChunk) {
    const std::int64_t n = std::min(kChunk, total - base);
    for (std::size_t c = 0; c < dims.size(); ++c) cubes[c].resize(dims[c], n);
    for (std::int64_t col = 0; col < n; ++col) {
      std::uint64_t code = static_cast<std::uint64_t>(base + col);
      for (std::size_t c = 0; c < dims.size(); ++c) {
        for (int bit = 0; bit < dims[c]; ++bit) {
          cubes[c](bit, col) = (code & 1u) ? 1.0 : -1.0;
          code >>= 1;
        }
      }
    }
    visit(cubes, base);
  }
}

void mc_sign_cubes(std::span<const int> dims, std::int64_t n, std::uint64_t seed,
                   const SignChunkFn& visit) {
  // Samples are assigned to a fixed number of lanes by contiguous index
  // ranges, each lane with its own substream, so the stream is independent
  // of how chunks or threads slice the work.
  detail::mc_sign_cubes_t<Matrix>(dims, n, seed, visit);
}

namespace {

// Per-evaluation constants shared across chunks.
struct ScoreContext {
  double tau_sq = 0.0, K = 0.0;
  double NN = 1.0, arg_scale = 0.0, ip_scale = 0.0;
  Matrix G;  // [K_A K_A_xi]^T [K_B K_B_xi]
};

ScoreContext make_score_context(const KState& ks, double tau_sq, double K) {
  if (ks.N_A <= kCollapseEps || ks.N_B <= kCollapseEps)
    throw CollapseError("score_batch: collapsed normalizer");
  ScoreContext ctx;
  ctx.tau_sq = tau_sq;
  ctx.K = K;
  ctx.NN = ks.N_A * ks.N_B;
  const double sqrt_d = std::sqrt(static_cast<double>(ks.d()));
  ctx.arg_scale = tau_sq / (ctx.NN * sqrt_d);
  ctx.ip_scale = 1.0 / (ctx.NN * sqrt_d);
  Matrix P_A(ks.m(), ks.d()), P_B(ks.m(), ks.d());
  P_A << ks.K_A, ks.K_A_xi;
  P_B << ks.K_B, ks.K_B_xi;
  ctx.G = P_A.transpose() * P_B;
  return ctx;
}

ScoreBatch score_batch_with(const ScoreContext& ctx, Matrix U_A, Matrix U_B) {
  ScoreBatch sb;
  sb.U_A = std::move(U_A);
  sb.U_B = std::move(U_B);

  sb.H = ctx.G * sb.U_B;               // coefficients of the A-negative latents
  sb.CB = ctx.G.transpose() * sb.U_A;  // coefficients of the B-negative latents
  sb.p = (sb.U_A.array() * sb.H.array()).colwise().sum().transpose() / ctx.NN;

  Eigen::ArrayXXd AB = sb.CB.array() * ctx.arg_scale;
  Eigen::ArrayXXd AA = sb.H.array() * ctx.arg_scale;
  sb.TB = AB.tanh().matrix();
  sb.TA = AA.tanh().matrix();
  // log cosh, overflow-safe
  AB = AB.abs();
  AA = AA.abs();
  sb.logZB = (AB + (AB * -2.0).exp().log1p() - kLn2).colwise().sum().transpose();
  sb.logZA = (AA + (AA * -2.0).exp().log1p() - kLn2).colwise().sum().transpose();

  Array ratioB = (sb.logZB.array() - ctx.tau_sq * sb.p.array()).exp();
  Array ratioA = (sb.logZA.array() - ctx.tau_sq * sb.p.array()).exp();
  sb.S_A = (1.0 / (1.0 + ctx.K * ratioB)).matrix();
  sb.S_B = (1.0 / (1.0 + ctx.K * ratioA)).matrix();
  sb.w0 = 2.0 - sb.S_A.array() - sb.S_B.array();
  sb.gB = (sb.S_A.array() * ratioB).matrix();
  sb.gA = (sb.S_B.array() * ratioA).matrix();

  sb.ipB = (sb.CB.array() * sb.TB.array()).colwise().sum().transpose() * ctx.ip_scale;
  sb.ipA = (sb.H.array() * sb.TA.array()).colwise().sum().transpose() * ctx.ip_scale;
  return sb;
}

}  // namespace

ScoreBatch score_batch(const KState& ks, double tau_sq, double K, Matrix U_A, Matrix U_B) {
  return score_batch_with(make_score_context(ks, tau_sq, K), std::move(U_A), std::move(U_B));
}

std::int64_t for_each_positive_chunk(const KState& ks, double tau_sq, double K,
                                     const ExpectationStrategy& strategy,
                                     const std::function<void(const ScoreBatch&)>& visit) {
  const int r = ks.r(), nu = ks.noise_dim(), d = ks.d();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const ScoreContext ctx = make_score_context(ks, tau_sq, K);
  auto on_chunk = [&](std::span<const Matrix> cubes, std::int64_t) {
    const Matrix& z = cubes[0];
    const Matrix& xa = cubes[1];
    const Matrix& xb = cubes[2];
    const int n = static_cast<int>(z.cols());
    Matrix U_A(d, n), U_B(d, n);
    U_A.topRows(r) = z * scale;
    U_B.topRows(r) = z * scale;
    if (nu > 0) {
      U_A.bottomRows(nu) = xa * scale;
      U_B.bottomRows(nu) = xb * scale;
    }
    visit(score_batch_with(ctx, std::move(U_A), std::move(U_B)));
  };
  const int dims[3] = {r, nu, nu};
  if (strategy.mode == ExpectationStrategy::Mode::Exact) {
    enumerate_sign_cubes(dims, strategy.exact_budget, on_chunk);
    return sign_cube_total(dims);
  }
  mc_sign_cubes(dims, strategy.mc_samples, strategy.mc_seed, on_chunk);
  return strategy.mc_samples;
}

double softmax_score(const KState& ks, double tau_sq, double K, const Vector& z_plus,
                     const Vector& xi_A_plus, const Vector& xi_B_plus, Side side,
                     const ExpectationStrategy& strategy) {
  if (tau_sq < 0.0) throw std::invalid_argument("softmax_score: tau_sq must be >= 0");
  const int r = ks.r(), nu = ks.noise_dim(), d = ks.d();
  const double NN = ks.N_A * ks.N_B;
  Vector f_A = feature_map(ks, Side::A, z_plus, xi_A_plus);
  Vector f_B = feature_map(ks, Side::B, z_plus, xi_B_plus);
  const double p = f_A.dot(f_B);

  // Coefficients of the negative latent stack [z-; xi-] in f+ . f-.
  const Vector& f_pos = (side == Side::A) ? f_A : f_B;
  const Matrix& Kz = (side == Side::A) ? ks.K_B : ks.K_A;
  const Matrix& Kxi = (side == Side::A) ? ks.K_B_xi : ks.K_A_xi;
  const double N_neg = (side == Side::A) ? ks.N_B : ks.N_A;
  Vector cz = Kz.transpose() * f_pos / N_neg;
  Vector cxi = Kxi.transpose() * f_pos / N_neg;

  double inner;  // E_neg exp(tau^2 f+ . f-)
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  if (strategy.mode == ExpectationStrategy::Mode::Exact) {
    // Coordinates of the negative are independent signs, so the sum over
    // the cube factorizes into a product of cosh terms.
    double log_z = 0.0;
    auto logcosh = [](double x) {
      double a = std::abs(x);
      return a + std::log1p(std::exp(-2.0 * a)) - kLn2;
    };
    for (int k = 0; k < r; ++k) log_z += logcosh(tau_sq * cz(k) * scale);
    for (int s = 0; s < nu; ++s) log_z += logcosh(tau_sq * cxi(s) * scale);
    // Budget gate on the marginal this replaces.
    const int dims[2] = {r, nu};
    if (sign_cube_total(dims) > strategy.exact_budget)
      throw BudgetError("softmax_score: negative cube exceeds exact budget");
    inner = std::exp(log_z);
  } else {
    KahanScalar acc;
    const int dims[2] = {r, nu};
    mc_sign_cubes(dims, strategy.mc_samples, strategy.mc_seed,
                  [&](std::span<const Matrix> cubes, std::int64_t) {
                    const Matrix& zc = cubes[0];
                    const Matrix& xc = cubes[1];
                    Vector dots = (zc.transpose() * cz) * scale;
                    if (nu > 0) dots += (xc.transpose() * cxi) * scale;
                    KahanScalar chunk;
                    for (Eigen::Index i = 0; i < dots.size(); ++i)
                      chunk.add(std::exp(tau_sq * dots(i)));
                    acc.add(chunk.value());
                  });
    inner = acc.value() / static_cast<double>(strategy.mc_samples);
  }
  (void)NN;
  const double e_pos = std::exp(tau_sq * p);
  return e_pos / (e_pos + K * inner);
}

double contrastive_loss(const KState& ks, double tau_sq, double K,
                        const ExpectationStrategy& strategy) {
  if (tau_sq < 0.0) throw std::invalid_argument("contrastive_loss: tau_sq must be >= 0");
  KahanScalar acc;
  std::int64_t total = for_each_positive_chunk(
      ks, tau_sq, K, strategy, [&](const ScoreBatch& sb) {
        KahanScalar chunk;
        for (int i = 0; i < sb.n(); ++i) {
          // -log S_A - log S_B = log(1 + K e^{logZB - tau^2 p}) + log(1 + K e^{logZA - tau^2 p})
          chunk.add(std::log1p(K * std::exp(sb.logZB(i) - tau_sq * sb.p(i))) +
                    std::log1p(K * std::exp(sb.logZA(i) - tau_sq * sb.p(i))));
        }
        acc.add(chunk.value());
      });
  return acc.value() / static_cast<double>(total);
}

double non_contrastive_loss(const KState& ks, const ExpectationStrategy& strategy) {
  KahanScalar acc;
  std::int64_t total = for_each_positive_chunk(
      ks, 0.0, 0.0, strategy, [&](const ScoreBatch& sb) {
        KahanScalar chunk;
        for (int i = 0; i < sb.n(); ++i) chunk.add(sb.p(i));
        acc.add(chunk.value());
      });
  return -acc.value() / static_cast<double>(total);
}

double non_contrastive_loss_closed_form(const KState& ks) {
  if (ks.N_A <= kCollapseEps || ks.N_B <= kCollapseEps)
    throw CollapseError("non_contrastive_loss: collapsed normalizer");
  const double d = static_cast<double>(ks.d());
  return -ks.K_A.cwiseProduct(ks.K_B).sum() / (ks.N_A * ks.N_B * d);
}

}  // namespace cdyn

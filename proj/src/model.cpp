#include "cdyn/model.hpp"

#include <Eigen/QR>
#include <cmath>

namespace cdyn {

namespace {

// Orthonormalize a Gaussian d x d draw. Columns are sign-fixed so the
// result is a deterministic function of the draw.
Matrix random_orthogonal(int d, std::mt19937_64& rng, int max_attempts = 8) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    Matrix G(d, d);
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d; ++i) G(i, j) = gauss(rng);
    Eigen::HouseholderQR<Matrix> qr(G);
    Matrix Q = qr.householderQ() * Matrix::Identity(d, d);
    Vector diag = qr.matrixQR().diagonal();
    if (diag.cwiseAbs().minCoeff() < 1e-10 * std::sqrt(static_cast<double>(d))) continue;
    for (int j = 0; j < d; ++j)
      if (diag(j) < 0.0) Q.col(j) = -Q.col(j);
    return Q;
  }
  throw DegenerateError("random_orthogonal: rank-deficient draw after max attempts");
}

void fill_signs(Eigen::VectorXi& v, int n, std::mt19937_64& rng) {
  v.resize(n);
  for (int i = 0; i < n; ++i) v(i) = (rng() >> 63) ? 1 : -1;
}

}  // namespace

EncoderSet build_encoders(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  const int d = config.d, r = config.r;
  const Vector sigma = config.sigma_sq.cwiseSqrt();
  const double sigma_xi = std::sqrt(config.sigma_xi_sq);

  auto split = [&](const Matrix& Q, Matrix& signal, Matrix& noise) {
    signal = Q.leftCols(r) * sigma.asDiagonal();
    noise = Q.rightCols(d - r) * sigma_xi;
  };

  EncoderSet enc;
  Matrix QA = random_orthogonal(d, rng);
  split(QA, enc.A, enc.A_xi);
  if (config.tie_modalities) {
    enc.B = enc.A;
    enc.B_xi = enc.A_xi;
  } else {
    Matrix QB = random_orthogonal(d, rng);
    split(QB, enc.B, enc.B_xi);
  }
  return enc;
}

WeightState init_weights(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(config.m)));
  WeightState w;
  w.W_A.resize(config.d, config.m);
  w.W_B.resize(config.d, config.m);
  for (int j = 0; j < config.m; ++j)
    for (int i = 0; i < config.d; ++i) w.W_A(i, j) = gauss(rng);
  for (int j = 0; j < config.m; ++j)
    for (int i = 0; i < config.d; ++i) w.W_B(i, j) = gauss(rng);
  return w;
}

SampleQuad sample_quad(const ModelConfig& config, std::mt19937_64& rng) {
  config.validate();
  SampleQuad q;
  q.scale = 1.0 / std::sqrt(static_cast<double>(config.d));
  const int noise = config.noise_dim();
  fill_signs(q.z_plus, config.r, rng);
  fill_signs(q.z_minus, config.r, rng);
  fill_signs(q.xi_A_plus, noise, rng);
  fill_signs(q.xi_B_plus, noise, rng);
  fill_signs(q.xi_A_minus, noise, rng);
  fill_signs(q.xi_B_minus, noise, rng);
  return q;
}

Vector encode(const EncoderSet& encoders, Side side, const Vector& z, const Vector& xi) {
  const Matrix& S = encoders.signal(side);
  const Matrix& N = encoders.noise(side);
  if (z.size() != S.cols() || xi.size() != N.cols())
    throw std::invalid_argument("encode: dimension mismatch");
  return S * z + N * xi;
}

KState compute_kstate(const WeightState& weights, const EncoderSet& encoders) {
  if (weights.W_A.rows() != encoders.A.rows() || weights.W_B.rows() != encoders.B.rows())
    throw std::invalid_argument("compute_kstate: dimension mismatch");
  KState ks;
  ks.K_A = weights.W_A.transpose() * encoders.A;
  ks.K_B = weights.W_B.transpose() * encoders.B;
  ks.K_A_xi = weights.W_A.transpose() * encoders.A_xi;
  ks.K_B_xi = weights.W_B.transpose() * encoders.B_xi;
  const double d = static_cast<double>(encoders.A.rows());
  ks.N_A = std::sqrt((ks.K_A.squaredNorm() + ks.K_A_xi.squaredNorm()) / d);
  ks.N_B = std::sqrt((ks.K_B.squaredNorm() + ks.K_B_xi.squaredNorm()) / d);
  if (ks.N_A <= kCollapseEps || ks.N_B <= kCollapseEps)
    throw CollapseError("compute_kstate: normalizer below collapse threshold");
  return ks;
}

Vector feature_map(const KState& kstate, Side side, const Vector& z, const Vector& xi) {
  const double N = kstate.normalizer(side);
  if (N <= kCollapseEps) throw CollapseError("feature_map: collapsed normalizer");
  const Matrix& K = kstate.signal(side);
  const Matrix& Kxi = kstate.noise(side);
  if (z.size() != K.cols() || xi.size() != Kxi.cols())
    throw std::invalid_argument("feature_map: dimension mismatch");
  return (K * z + Kxi * xi) / N;
}

}  // namespace cdyn

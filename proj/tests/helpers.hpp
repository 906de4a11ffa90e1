#pragma once

#include <random>

#include "cdyn/model.hpp"
#include "cdyn/rng.hpp"

namespace testutil {

using namespace cdyn;

inline ModelConfig small_config(int d = 4, int r = 2, int m = 3, std::int64_t seed = 42) {
  ModelConfig config;
  config.d = d;
  config.r = r;
  config.m = m;
  config.sigma_sq = Vector::LinSpaced(r, 2.0, 1.0);
  config.sigma_xi_sq = 0.7;
  config.K = 1.5;
  config.seed = seed;
  return config;
}

struct Instance {
  ModelConfig config;
  EncoderSet encoders;
  WeightState weights;
  KState kstate;
};

inline Instance make_instance(const ModelConfig& config) {
  Instance inst;
  inst.config = config;
  std::mt19937_64 rng = make_rng(static_cast<std::uint64_t>(config.seed));
  inst.encoders = build_encoders(config, rng);
  inst.weights = init_weights(config, rng);
  inst.kstate = compute_kstate(inst.weights, inst.encoders);
  return inst;
}

// KState with prescribed K matrices (no underlying weights), normalizers per
// the defining identity.
inline KState direct_kstate(Matrix K_A, Matrix K_B, Matrix K_A_xi, Matrix K_B_xi) {
  KState ks;
  ks.K_A = std::move(K_A);
  ks.K_B = std::move(K_B);
  ks.K_A_xi = std::move(K_A_xi);
  ks.K_B_xi = std::move(K_B_xi);
  const double d = static_cast<double>(ks.K_A.cols() + ks.K_A_xi.cols());
  ks.N_A = std::sqrt((ks.K_A.squaredNorm() + ks.K_A_xi.squaredNorm()) / d);
  ks.N_B = std::sqrt((ks.K_B.squaredNorm() + ks.K_B_xi.squaredNorm()) / d);
  return ks;
}

inline KState identity_kstate(int r) {
  return direct_kstate(Matrix::Identity(r, r), Matrix::Identity(r, r), Matrix::Zero(r, 0),
                       Matrix::Zero(r, 0));
}

// Mean and standard error of repeated evaluations (for MC tolerance checks).
struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
};

template <typename F>
MeanStderr repeated(F&& eval, int reps) {
  std::vector<double> vals;
  vals.reserve(reps);
  for (int i = 0; i < reps; ++i) vals.push_back(eval(i));
  double mean = 0.0;
  for (double v : vals) mean += v;
  mean /= reps;
  double var = 0.0;
  for (double v : vals) var += (v - mean) * (v - mean);
  var /= (reps - 1);
  return {mean, std::sqrt(var / reps)};
}

}  // namespace testutil

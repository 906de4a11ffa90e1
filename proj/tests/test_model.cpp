#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"
#include "oracle.hpp"

using namespace cdyn;
using testutil::make_instance;
using testutil::small_config;

TEST_CASE("encoder invariants hold at 1e-10") {
  for (std::int64_t seed : {1, 2, 3}) {
    ModelConfig config;
    config.d = 8;
    config.r = 3;
    config.m = 4;
    config.sigma_sq = (Vector(3) << 4.0, 2.0, 1.0).finished();
    config.sigma_xi_sq = 0.5;
    config.K = 1.0;
    config.seed = seed;
    std::mt19937_64 rng = make_rng(seed);
    const EncoderSet enc = build_encoders(config, rng);

    const Matrix D = config.sigma_sq.asDiagonal();
    CHECK(((enc.A.transpose() * enc.A) - D).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(((enc.B.transpose() * enc.B) - D).cwiseAbs().maxCoeff() < 1e-10);
    const Matrix Dxi = config.sigma_xi_sq * Matrix::Identity(5, 5);
    CHECK(((enc.A_xi.transpose() * enc.A_xi) - Dxi).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(((enc.B_xi.transpose() * enc.B_xi) - Dxi).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((enc.A_xi.transpose() * enc.A).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((enc.B_xi.transpose() * enc.B).cwiseAbs().maxCoeff() < 1e-10);

    // column norms are sigma_p
    CHECK(enc.A.col(0).norm() == doctest::Approx(2.0).epsilon(1e-10));
    CHECK(enc.A.col(1).norm() == doctest::Approx(std::sqrt(2.0)).epsilon(1e-10));
    CHECK(enc.A.col(2).norm() == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("d=2 r=1 unit spectrum encoder") {
  ModelConfig config;
  config.d = 2;
  config.r = 1;
  config.m = 2;
  config.sigma_sq = Vector::Ones(1);
  config.sigma_xi_sq = 1.0;
  config.seed = 5;
  std::mt19937_64 rng = make_rng(5);
  const EncoderSet enc = build_encoders(config, rng);
  CHECK((enc.A.transpose() * enc.A)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((enc.A_xi.transpose() * enc.A)(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK((enc.A_xi.transpose() * enc.A_xi)(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("encoders are bit-identical for the same seed") {
  const ModelConfig config = small_config();
  std::mt19937_64 rng1 = make_rng(9), rng2 = make_rng(9);
  const EncoderSet a = build_encoders(config, rng1);
  const EncoderSet b = build_encoders(config, rng2);
  CHECK(a.A == b.A);
  CHECK(a.B == b.B);
  CHECK(a.A_xi == b.A_xi);
  CHECK(a.B_xi == b.B_xi);
}

TEST_CASE("tie_modalities makes B identical to A") {
  ModelConfig config = small_config();
  config.tie_modalities = true;
  std::mt19937_64 rng = make_rng(1);
  const EncoderSet enc = build_encoders(config, rng);
  CHECK(enc.A == enc.B);
  CHECK(enc.A_xi == enc.B_xi);
}

TEST_CASE("init_weights variance and determinism") {
  SUBCASE("m=1 entries are standard normal draws") {
    ModelConfig config;
    config.d = 4096;
    config.r = 1;
    config.m = 1;
    config.sigma_sq = Vector::Ones(1);
    config.seed = 3;
    std::mt19937_64 rng = make_rng(3);
    const WeightState w = init_weights(config, rng);
    const double var = w.W_A.squaredNorm() / w.W_A.size();
    CHECK(var > 0.9);
    CHECK(var < 1.1);
  }
  SUBCASE("m=4096 d=16 sample variance within 10% of 1/m") {
    ModelConfig config;
    config.d = 16;
    config.r = 4;
    config.m = 4096;
    config.sigma_sq = Vector::Ones(4);
    config.seed = 3;
    std::mt19937_64 rng = make_rng(3);
    const WeightState w = init_weights(config, rng);
    const double var = w.W_A.squaredNorm() / w.W_A.size();
    CHECK(var > 0.9 / config.m);
    CHECK(var < 1.1 / config.m);
  }
  SUBCASE("same seed twice is bit-identical") {
    const ModelConfig config = small_config();
    std::mt19937_64 rng1 = make_rng(8), rng2 = make_rng(8);
    CHECK(init_weights(config, rng1).W_A == init_weights(config, rng2).W_A);
  }
}

TEST_CASE("sample_quad support and moments") {
  SUBCASE("r=1 d=4 support is +-1/2") {
    ModelConfig config;
    config.d = 4;
    config.r = 1;
    config.m = 2;
    config.sigma_sq = Vector::Ones(1);
    config.seed = 1;
    std::mt19937_64 rng = make_rng(1);
    for (int i = 0; i < 32; ++i) {
      const SampleQuad q = sample_quad(config, rng);
      const double v = q.value(q.z_plus)(0);
      CHECK(std::abs(std::abs(v) - 0.5) < 1e-15);
    }
  }
  SUBCASE("1e5 draws: coordinate means within 3 std-err, d E[zz^T] near I") {
    ModelConfig config;
    config.d = 8;
    config.r = 4;
    config.m = 2;
    config.sigma_sq = Vector::Ones(4);
    config.seed = 2;
    std::mt19937_64 rng = make_rng(2);
    const int n = 100000;
    Vector mean = Vector::Zero(4);
    Matrix cov = Matrix::Zero(4, 4);
    for (int i = 0; i < n; ++i) {
      const SampleQuad q = sample_quad(config, rng);
      const Vector z = q.value(q.z_plus);
      mean += z;
      cov += z * z.transpose();
    }
    mean /= n;
    cov /= n;
    const double stderr3 = 3.0 / std::sqrt(8.0 * n);  // sd of one coord = 1/sqrt(d)
    for (int i = 0; i < 4; ++i) CHECK(std::abs(mean(i)) < stderr3);
    const Matrix scaled = cov * config.d;
    CHECK((scaled - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 0.05);
  }
}

TEST_CASE("encode special cases and isometry") {
  ModelConfig config;
  config.d = 6;
  config.r = 2;
  config.m = 3;
  config.sigma_sq = Vector::Ones(2);
  config.sigma_xi_sq = 1.0;
  config.seed = 4;
  std::mt19937_64 rng = make_rng(4);
  const EncoderSet enc = build_encoders(config, rng);
  const Vector z = (Vector(2) << 0.5, -0.5).finished();
  const Vector xi = (Vector(4) << 0.5, 0.5, -0.5, 0.5).finished();

  CHECK((encode(enc, Side::A, z, Vector::Zero(4)) - enc.A * z).norm() < 1e-14);
  CHECK((encode(enc, Side::A, Vector::Zero(2), xi) - enc.A_xi * xi).norm() < 1e-14);

  const Vector x = encode(enc, Side::A, z, xi);
  CHECK(x.squaredNorm() ==
        doctest::Approx(z.squaredNorm() + xi.squaredNorm()).epsilon(1e-10));

  CHECK_THROWS_AS(encode(enc, Side::A, Vector::Zero(3), xi), std::invalid_argument);
}

TEST_CASE("compute_kstate identity weights and collapse") {
  ModelConfig config;
  config.d = 5;
  config.r = 2;
  config.m = 5;
  config.sigma_sq = Vector::Ones(2);
  config.sigma_xi_sq = 1.0;
  config.seed = 6;
  std::mt19937_64 rng = make_rng(6);
  const EncoderSet enc = build_encoders(config, rng);
  WeightState w;
  w.W_A = Matrix::Identity(5, 5);
  w.W_B = Matrix::Identity(5, 5);
  const KState ks = compute_kstate(w, enc);
  CHECK((ks.K_A - enc.A).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((ks.K_A_xi - enc.A_xi).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(ks.N_A == doctest::Approx(1.0).epsilon(1e-12));  // (r + (d-r))/d = 1
  CHECK(ks.N_A * ks.N_A ==
        doctest::Approx((ks.K_A.squaredNorm() + ks.K_A_xi.squaredNorm()) / 5.0).epsilon(1e-15));

  w.W_A.setZero();
  CHECK_THROWS_AS(compute_kstate(w, enc), CollapseError);
}

TEST_CASE("feature_map identity model, unit norm, scale invariance") {
  ModelConfig config;
  config.d = 5;
  config.r = 2;
  config.m = 5;
  config.sigma_sq = Vector::Ones(2);
  config.sigma_xi_sq = 1.0;
  config.seed = 7;
  std::mt19937_64 rng = make_rng(7);
  const EncoderSet enc = build_encoders(config, rng);
  WeightState w;
  w.W_A = Matrix::Identity(5, 5);
  w.W_B = Matrix::Identity(5, 5);
  const KState ks = compute_kstate(w, enc);

  const double sc = 1.0 / std::sqrt(5.0);
  const Vector z = (Vector(2) << sc, -sc).finished();
  const Vector xi = (Vector(3) << sc, sc, -sc).finished();

  SUBCASE("identity model reproduces the input") {
    const Vector x = encode(enc, Side::A, z, xi);
    CHECK((feature_map(ks, Side::A, z, xi) - x).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("exact E|f|^2 = 1 by enumeration") {
    const auto inst = make_instance(small_config(6, 3, 4, 11));
    CHECK(oracle::feature_norm_sq_expectation(inst.kstate, Side::A) ==
          doctest::Approx(1.0).epsilon(1e-10));
    CHECK(oracle::feature_norm_sq_expectation(inst.kstate, Side::B) ==
          doctest::Approx(1.0).epsilon(1e-10));
  }
  SUBCASE("scaling W leaves the feature map unchanged") {
    const auto inst = make_instance(small_config());
    const Vector z2 = (Vector(2) << 0.5, 0.5).finished();
    const Vector xi2 = (Vector(2) << -0.5, 0.5).finished();
    const Vector base = feature_map(inst.kstate, Side::A, z2, xi2);
    for (double c : {0.1, 10.0}) {
      WeightState ws = inst.weights;
      ws.W_A *= c;
      ws.W_B *= c;
      const KState scaled = compute_kstate(ws, inst.encoders);
      CHECK((feature_map(scaled, Side::A, z2, xi2) - base).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
}

TEST_CASE("sample streams are deterministic per seed") {
  const ModelConfig config = small_config();
  std::mt19937_64 rng1 = make_rng(13), rng2 = make_rng(13);
  for (int i = 0; i < 10; ++i) {
    const SampleQuad a = sample_quad(config, rng1);
    const SampleQuad b = sample_quad(config, rng2);
    CHECK(a.z_plus == b.z_plus);
    CHECK(a.xi_B_minus == b.xi_B_minus);
  }
}

TEST_CASE("config validation") {
  ModelConfig config = small_config();
  config.r = 10;  // > d
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config = small_config();
  config.sigma_sq(0) = -1.0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config = small_config();
  config.sigma_xi_sq = 0.0;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}

TEST_CASE("assumption check is a warning-style predicate") {
  ModelConfig config;
  config.d = 64;
  config.r = 64;
  config.m = 8;
  config.sigma_sq = Vector::Ones(64);
  config.sigma_sq(0) = std::log(64.0);
  config.sigma_xi_sq = 1.0;
  CHECK(config.assumption_holds(1.0));
  config.sigma_sq(0) = 10.0 * std::log(64.0);
  CHECK_FALSE(config.assumption_holds(1.0));
}

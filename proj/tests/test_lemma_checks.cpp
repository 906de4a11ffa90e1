#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cdyn/lemma_checks.hpp"
#include "helpers.hpp"

using namespace cdyn;
using testutil::direct_kstate;
using testutil::make_instance;
using testutil::small_config;

namespace {

KState ideal_diagonal_state(int r, const Vector& norms) {
  Matrix D = Matrix::Zero(2 * r, r);
  for (int p = 0; p < r; ++p) D(p, p) = norms(p);
  return direct_kstate(D, D, Matrix::Zero(2 * r, 0), Matrix::Zero(2 * r, 0));
}

}  // namespace

TEST_CASE("adversarial sigma construction") {
  const Vector s = adversarial_sigma(64, 1.0);
  CHECK(s.size() == 64);
  CHECK(s(0) == doctest::Approx(4.158883).epsilon(1e-6));
  for (int i = 1; i < 64; ++i) CHECK(s(i) == 1.0);
  const Vector flat = adversarial_sigma(16, 0.0);
  CHECK(flat.maxCoeff() == 1.0);
  CHECK(flat.minCoeff() == 1.0);

  ModelConfig config;
  config.d = 64;
  config.r = 64;
  config.m = 4;
  config.sigma_sq = s;
  config.sigma_xi_sq = 1.0;
  CHECK(config.assumption_holds(1.0));
}

TEST_CASE("stage-1 Q1 audit") {
  ModelConfig config = small_config(8, 3, 16, 110);
  config.sigma_sq = (Vector(3) << 4.0, 2.0, 1.0).finished();
  config.K = 1.0;
  const auto inst = make_instance(config);

  SUBCASE("tau^2 = 0 has zero error") {
    const AuditReport rep =
        audit_stage1_q1(inst.kstate, 0.0, 1.0, ExpectationStrategy::exact());
    CHECK(rep.error < 1e-13);
    CHECK(rep.pass);
  }
  SUBCASE("small tau^2 within the fitted envelope, linear scaling") {
    const AuditReport a = audit_stage1_q1(inst.kstate, 1e-4, 1.0, ExpectationStrategy::exact());
    CHECK(a.pass);
    CHECK(a.budget == doctest::Approx(AuditConstants{}.stage1_q1_C * 8 * 1e-4));
    const AuditReport b = audit_stage1_q1(inst.kstate, 2e-4, 1.0, ExpectationStrategy::exact());
    const double ratio = b.error / a.error;
    CHECK(ratio > 1.5);
    CHECK(ratio < 2.5);
  }
  SUBCASE("a corrupted fitted constant flips the audit to fail") {
    AuditConstants corrupted;
    corrupted.stage1_q1_C = 1e-9;
    const AuditReport rep =
        audit_stage1_q1(inst.kstate, 1e-4, 1.0, ExpectationStrategy::exact(), corrupted);
    CHECK_FALSE(rep.pass);
  }
}

TEST_CASE("stage-2 diagonal audits on the ideal state") {
  SUBCASE("equal norms") {
    const KState ks = ideal_diagonal_state(4, Vector::Ones(4));
    const AuditReport q1 = audit_stage2_q1_diag(ks, 1.0, ExpectationStrategy::exact());
    CHECK(q1.pass);
    CHECK(q1.error < 1e-6);
    const AuditReport q0 = audit_stage2_q0(ks, 1.0, ExpectationStrategy::exact());
    CHECK(q0.pass);
    CHECK(q0.error < 1e-6);
  }
  SUBCASE("unequal norms") {
    const KState ks = ideal_diagonal_state(4, (Vector(4) << 2.0, 1.5, 1.0, 0.5).finished());
    const AuditReport q1 = audit_stage2_q1_diag(ks, 1.0, ExpectationStrategy::exact());
    CHECK(q1.error < 1e-6);
    const AuditReport q0 = audit_stage2_q0(ks, 1.0, ExpectationStrategy::exact());
    CHECK(q0.error < 1e-6);
  }
  SUBCASE("large K limit: [Q1]_pp approaches 2 (1 - T_p)") {
    const KState ks = ideal_diagonal_state(3, (Vector(3) << 1.5, 1.0, 0.5).finished());
    const double K = 1000.0;
    const QSet q = compute_qset(ks, 1.0, K, ExpectationStrategy::exact());
    const ClosedForms cf = closed_forms(measure_iw_state(ks), 1.0, K);
    CHECK(cf.S_tilde < 2e-3);
    for (int p = 0; p < 3; ++p)
      CHECK(q.Q1(p, p) == doctest::Approx(2.0 * (1.0 - cf.T(p))).epsilon(0.01));
  }
  SUBCASE("tau^2 = 0 identity between Q0 and the weighted Q1 trace") {
    const KState ks = ideal_diagonal_state(3, (Vector(3) << 1.2, 1.0, 0.8).finished());
    const QSet q = compute_qset(ks, 0.0, 1.0, ExpectationStrategy::exact());
    const InfiniteWidthState iw = measure_iw_state(ks);
    double rhs = 0.0;
    for (int k = 0; k < 3; ++k) rhs -= iw.kappa_sq(k) / iw.kappa_sq.sum() * q.Q1(k, k);
    CHECK(q.Q0 == doctest::Approx(rhs).epsilon(1e-12));
  }
  SUBCASE("messy states are flagged inapplicable") {
    const auto inst = make_instance(small_config(4, 2, 3, 111));  // tiny width: large deltas
    const AuditReport rep = audit_stage2_q1_diag(inst.kstate, 1.0, ExpectationStrategy::exact());
    CHECK(rep.inconclusive);
  }
}

TEST_CASE("non-contrastive equivalence audit") {
  ModelConfig config = small_config(6, 2, 12, 112);
  config.sigma_sq = (Vector(2) << 2.0, 1.0).finished();
  config.K = 1.0;
  std::mt19937_64 rng = make_rng(static_cast<std::uint64_t>(config.seed));
  const EncoderSet enc = build_encoders(config, rng);
  const WeightState w = init_weights(config, rng);

  const AuditReport at0 =
      audit_noncontrastive_equivalence(w, enc, 0.0, 1.0, ExpectationStrategy::exact());
  CHECK(at0.measured == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(at0.pass);

  const AuditReport small =
      audit_noncontrastive_equivalence(w, enc, 1e-3, 1.0, ExpectationStrategy::exact());
  CHECK(small.measured >= 0.999);
  CHECK(small.pass);
  CHECK_FALSE(small.informational);

  const AuditReport big =
      audit_noncontrastive_equivalence(w, enc, 1.0, 1.0, ExpectationStrategy::exact());
  CHECK(big.informational);
  CHECK(big.measured < 0.999);  // the regimes genuinely differ
}

TEST_CASE("audits are deterministic") {
  ModelConfig config = small_config(8, 3, 16, 113);
  const auto inst = make_instance(config);
  const AuditReport a = audit_stage1_q1(inst.kstate, 1e-4, 1.0, ExpectationStrategy::exact());
  const AuditReport b = audit_stage1_q1(inst.kstate, 1e-4, 1.0, ExpectationStrategy::exact());
  CHECK(a.error == b.error);
  CHECK(a.measured == b.measured);
}

TEST_CASE("gronwall analytic audit") {
  const AuditReport rep = audit_gronwall_analytic();
  CHECK(rep.pass);
  // Y_T = exp(1 - e^-10) just below the bound e
  CHECK(rep.measured == doctest::Approx(std::exp(1.0 - std::exp(-10.0))).epsilon(1e-6));
  CHECK(rep.measured <= rep.predicted);
}

TEST_CASE("battery filter contract") {
  const auto reports = run_audit_battery("stage1-q1");
  REQUIRE(reports.size() >= 1);
  for (const auto& rep : reports) {
    CHECK(rep.lemma_id.find("stage1-q1") != std::string::npos);
    CHECK(rep.pass);
  }
}

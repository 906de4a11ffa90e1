#include "cdyn/training.hpp"

#include <cmath>

#include "cdyn/rng.hpp"

namespace cdyn {

double temperature(const Schedule& schedule, std::int64_t t, LossKind kind) {
  if (t < 0 || t >= schedule.T2) throw std::invalid_argument("temperature: step out of range");
  if (kind == LossKind::NonContrastive) return 1.0;
  return t < schedule.T1 ? schedule.tau0_sq : 1.0;
}

KRates krates_non_contrastive(const KState& ks, const Vector& sigma_sq, double sigma_xi_sq,
                              const ExpectationStrategy& strategy) {
  const double d = static_cast<double>(ks.d());
  const double nn = ks.N_A * ks.N_B * d;
  const double na2 = ks.N_A * ks.N_A * d;
  const double nb2 = ks.N_B * ks.N_B * d;
  KRates out;
  if (strategy.mode == ExpectationStrategy::Mode::Exact) {
    // Population expectations in closed form: E[f_B+ (z+)^T] = K_B/(N_B d),
    // noise cross-moments vanish, E<f_A+, f_B+> = <K_A,K_B>/(N_A N_B d).
    const double p_mean = ks.K_A.cwiseProduct(ks.K_B).sum() / nn;
    out.dK_A = (ks.K_B / nn - ks.K_A * (p_mean / na2)) * sigma_sq.asDiagonal();
    out.dK_B = (ks.K_A / nn - ks.K_B * (p_mean / nb2)) * sigma_sq.asDiagonal();
    out.dK_A_xi = -ks.K_A_xi * (p_mean * sigma_xi_sq / na2);
    out.dK_B_xi = -ks.K_B_xi * (p_mean * sigma_xi_sq / nb2);
    return out;
  }
  const int r = ks.r(), nu = ks.noise_dim(), m = ks.m();
  Matrix P_A(m, ks.d()), P_B(m, ks.d());
  P_A << ks.K_A, ks.K_A_xi;
  P_B << ks.K_B, ks.K_B_xi;
  KahanMatrix accA(m, r), accB(m, r), accAxi(m, nu), accBxi(m, nu);
  std::int64_t total = for_each_positive_chunk(ks, 0.0, 0.0, strategy, [&](const ScoreBatch& sb) {
    const auto Z = sb.U_A.topRows(r);
    const auto XiA = sb.U_A.bottomRows(nu);
    const auto XiB = sb.U_B.bottomRows(nu);
    const Matrix F_A = P_A * sb.U_A / ks.N_A;
    const Matrix F_B = P_B * sb.U_B / ks.N_B;
    const double s_p = sb.p.sum();
    accA.add(F_B * Z.transpose() / ks.N_A - ks.K_A * (s_p / na2));
    accB.add(F_A * Z.transpose() / ks.N_B - ks.K_B * (s_p / nb2));
    if (nu > 0) {
      accAxi.add(F_B * XiA.transpose() / ks.N_A - ks.K_A_xi * (s_p / na2));
      accBxi.add(F_A * XiB.transpose() / ks.N_B - ks.K_B_xi * (s_p / nb2));
    }
  });
  const double inv_total = 1.0 / static_cast<double>(total);
  out.dK_A = accA.value() * inv_total * sigma_sq.asDiagonal();
  out.dK_B = accB.value() * inv_total * sigma_sq.asDiagonal();
  out.dK_A_xi = accAxi.value() * (inv_total * sigma_xi_sq);
  out.dK_B_xi = accBxi.value() * (inv_total * sigma_xi_sq);
  return out;
}

namespace {

ExpectationStrategy step_strategy(const ExpectationStrategy& strategy, std::int64_t batch,
                                  std::int64_t t) {
  if (batch > 0)
    return ExpectationStrategy::monte_carlo(batch, derive_seed(strategy.mc_seed, static_cast<std::uint64_t>(t)));
  if (strategy.mode == ExpectationStrategy::Mode::MonteCarlo)
    return strategy.substream(static_cast<std::uint64_t>(t));
  return strategy;
}

ExpectationStrategy metrics_strategy(const KState& ks, const RecorderSpec& rec,
                                     std::uint64_t seed, std::int64_t t) {
  const int dims[2] = {2 * ks.r(), 4 * ks.noise_dim()};
  if (sign_cube_total(dims) <= rec.align_exact_budget)
    return ExpectationStrategy::exact(rec.align_exact_budget);
  return ExpectationStrategy::monte_carlo(rec.align_mc_samples,
                                          derive_seed(seed, 0xA11Cu ^ static_cast<std::uint64_t>(t)));
}

}  // namespace

RunResult run(const ModelConfig& config, const Schedule& schedule, LossKind loss_kind,
              const ExpectationStrategy& strategy, const RecorderSpec& recorder) {
  config.validate();
  schedule.validate();

  std::mt19937_64 rng = make_rng(static_cast<std::uint64_t>(config.seed));
  RunResult result;
  result.encoders = build_encoders(config, rng);
  result.final_weights = init_weights(config, rng);
  Trajectory& traj = result.trajectory;

  WeightState& w = result.final_weights;
  const Vector& sigma_sq = config.sigma_sq;

  auto record = [&](std::int64_t t, double tau_sq, const KState& ks,
                    const ExpectationStrategy& strat) {
    TrajectoryPoint pt;
    pt.step = t;
    pt.tau_sq = tau_sq;
    pt.loss = loss_kind == LossKind::Contrastive
                  ? contrastive_loss(ks, tau_sq, config.K, strat)
                  : non_contrastive_loss_closed_form(ks);
    pt.metrics = metrics_record(
        ks, metrics_strategy(ks, recorder, static_cast<std::uint64_t>(config.seed), t));
    if (recorder.snapshot_stride_factor > 0 &&
        t % (recorder.stride * recorder.snapshot_stride_factor) == 0)
      pt.snapshot = ks;
    traj.points.push_back(std::move(pt));
  };

  std::int64_t t = 0;
  for (; t < schedule.T2; ++t) {
    const double tau_sq = temperature(schedule, t, loss_kind);
    const ExpectationStrategy strat = step_strategy(strategy, schedule.batch, t);
    KState ks;
    try {
      ks = compute_kstate(w, result.encoders);
    } catch (const CollapseError&) {
      traj.status = RunStatus::Collapsed;
      break;
    }

    KRates rates;
    try {
      if (loss_kind == LossKind::Contrastive) {
        const QSet q = compute_qset(ks, tau_sq, config.K, strat);
        rates = krates_from_qset(ks, q, sigma_sq, config.sigma_xi_sq);
      } else {
        rates = krates_non_contrastive(ks, sigma_sq, config.sigma_xi_sq, strat);
      }
    } catch (const CollapseError&) {
      traj.status = RunStatus::Collapsed;
      break;
    }

    if (!rates.dK_A.allFinite() || !rates.dK_B.allFinite() || !rates.dK_A_xi.allFinite() ||
        !rates.dK_B_xi.allFinite()) {
      traj.status = RunStatus::Diverged;
      break;
    }

    if (t % recorder.stride == 0) {
      record(t, tau_sq, ks, strat);
      if (!std::isfinite(traj.points.back().loss)) {
        traj.status = RunStatus::Diverged;
        traj.points.pop_back();
        break;
      }
    }

    // Rescaled-flow step: W += eta * M D^-1 [dK]^T (== W - tau^-2 eta grad).
    const GradientPair dir =
        weight_step_from_krates(result.encoders, sigma_sq, config.sigma_xi_sq, rates);
    const double gnorm =
        std::hypot(dir.grad_W_A.norm(), dir.grad_W_B.norm());  // |grad| at tau = 1
    traj.final_grad_norm = gnorm;
    if (loss_kind == LossKind::NonContrastive && gnorm <= schedule.stop_grad_norm) {
      traj.status = RunStatus::EarlyStopped;
      break;
    }
    w.W_A += schedule.eta * dir.grad_W_A;
    w.W_B += schedule.eta * dir.grad_W_B;
  }
  traj.steps_run = t;

  if (traj.status == RunStatus::Completed || traj.status == RunStatus::EarlyStopped) {
    // final record at the last reached state
    try {
      const KState ks = compute_kstate(w, result.encoders);
      const std::int64_t t_final = std::min(t, schedule.T2 - 1);
      const double tau_sq = temperature(schedule, t_final, loss_kind);
      if (traj.points.empty() || traj.points.back().step != t)
        record(t, tau_sq, ks, step_strategy(strategy, schedule.batch, t_final));
    } catch (const CollapseError&) {
      traj.status = RunStatus::Collapsed;
    }
  }
  return result;
}

StageReport stage_boundary_report(const Trajectory& trajectory, double stage1_delta,
                                  double c_target) {
  if (trajectory.points.empty())
    throw std::invalid_argument("stage_boundary_report: empty trajectory");
  StageReport rep;
  rep.stage1_delta = stage1_delta;
  rep.c_target = c_target;
  for (const TrajectoryPoint& pt : trajectory.points) {
    if (!rep.stage1_met && pt.metrics.rho_minus <= stage1_delta &&
        pt.metrics.rho_ns <= stage1_delta) {
      rep.stage1_met = true;
      rep.stage1_step = pt.step;
    }
    if (!rep.stage2_met && pt.metrics.kappa0 <= c_target) {
      rep.stage2_met = true;
      rep.stage2_step = pt.step;
    }
  }
  const MetricsRecord& last = trajectory.points.back().metrics;
  rep.last_rho_minus = last.rho_minus;
  rep.last_rho_ns = last.rho_ns;
  rep.last_kappa0 = last.kappa0;
  return rep;
}

}  // namespace cdyn

#pragma once

#include <optional>
#include <vector>

#include "cdyn/gradients.hpp"
#include "cdyn/metrics.hpp"
#include "cdyn/model.hpp"

namespace cdyn {

struct Schedule {
  double eta = 1e-3;
  double tau0_sq = 1.0;          // stage-1 inverse-temperature squared
  std::int64_t T1 = 0;           // switch step
  std::int64_t T2 = 1;           // total steps
  std::int64_t batch = 0;        // 0 = population (strategy-driven)
  double stop_grad_norm = 1e-8;  // non-contrastive stationarity threshold

  void validate() const {
    if (eta < 0.0) throw std::invalid_argument("eta must be >= 0");
    if (!(tau0_sq > 0.0) || tau0_sq > 1.0) throw std::invalid_argument("tau0_sq must be in (0,1]");
    if (T1 < 0 || T1 > T2) throw std::invalid_argument("T1 must satisfy 0 <= T1 <= T2");
    if (T2 <= 0) throw std::invalid_argument("T2 must be positive");
    if (batch < 0) throw std::invalid_argument("batch must be >= 0");
    if (!(stop_grad_norm > 0.0)) throw std::invalid_argument("stop_grad_norm must be positive");
  }
};

// tau^2 at step t: tau0_sq before T1, then 1; non-contrastive runs always 1.
double temperature(const Schedule& schedule, std::int64_t t, LossKind kind);

struct RecorderSpec {
  std::int64_t stride = 100;
  std::int64_t snapshot_stride_factor = 10;  // KState snapshot every stride*factor steps
  std::int64_t align_mc_samples = 4096;      // alignment metric sampling when exact is infeasible
  std::int64_t align_exact_budget = std::int64_t(1) << 20;
  double stage1_delta = 0.01;                // stage-1 exit threshold on rho_- and rho_NS
  double c_target = 1.2;                     // stage-2 exit threshold on kappa0
};

struct TrajectoryPoint {
  std::int64_t step = 0;
  double tau_sq = 1.0;
  double loss = 0.0;
  MetricsRecord metrics;
  std::optional<KState> snapshot;
};

enum class RunStatus { Completed, EarlyStopped, Collapsed, Diverged };

struct Trajectory {
  std::vector<TrajectoryPoint> points;
  RunStatus status = RunStatus::Completed;
  std::int64_t steps_run = 0;
  double final_grad_norm = 0.0;
};

struct RunResult {
  Trajectory trajectory;
  WeightState final_weights;
  EncoderSet encoders;
};

// Discretized training loop: W <- W - tau^-2 eta grad(loss). Population mode
// uses the strategy (per-step MC substreams when sampling); finite batch
// draws that many fresh quads per step. Non-contrastive runs stop early at
// an approximate stationary point.
RunResult run(const ModelConfig& config, const Schedule& schedule, LossKind loss_kind,
              const ExpectationStrategy& strategy, const RecorderSpec& recorder);

struct StageReport {
  bool stage1_met = false;
  std::int64_t stage1_step = -1;
  bool stage2_met = false;
  std::int64_t stage2_step = -1;
  double stage1_delta = 0.0;
  double c_target = 0.0;
  double last_rho_minus = 0.0;
  double last_rho_ns = 0.0;
  double last_kappa0 = 0.0;
};

// First recorded step with rho_- and rho_NS below delta (stage-1 exit) and
// first recorded step with kappa0 <= c_target (stage-2 exit).
StageReport stage_boundary_report(const Trajectory& trajectory, double stage1_delta = 0.01,
                                  double c_target = 1.2);

// Population K-rates of the non-contrastive flow (closed form in exact mode).
KRates krates_non_contrastive(const KState& ks, const Vector& sigma_sq, double sigma_xi_sq,
                              const ExpectationStrategy& strategy);

}  // namespace cdyn

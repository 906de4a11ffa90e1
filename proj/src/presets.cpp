#include "cdyn/presets.hpp"

#include <cmath>

namespace cdyn {

std::vector<std::string> preset_names() {
  return {"figure-noncontrastive", "figure-contrastive-tau1", "figure-contrastive-switch",
          "smoke-exact"};
}

ExperimentSpec make_preset(const std::string& name, std::int64_t seed) {
  ExperimentSpec spec;
  Schedule& sched = spec.schedule;
  ModelConfig& model = spec.model;

  if (name == "figure-noncontrastive") {
    // The paper's negative construction: r = d, sigma_1^2 = log d, rest 1.
    model.d = 64;
    model.r = 64;
    model.m = 1024;
    model.sigma_sq = adversarial_sigma(64, 1.0);
    model.sigma_xi_sq = 1.0;
    model.K = 1.0;
    model.seed = seed;
    spec.loss_kind = LossKind::NonContrastive;
    sched.eta = 5e-3;
    sched.T1 = 0;
    sched.T2 = 20000;
    sched.stop_grad_norm = 1e-8;
    spec.strategy = ExpectationStrategy::exact();
    spec.recorder.stride = 100;
    return spec;
  }
  if (name == "figure-contrastive-tau1" || name == "figure-contrastive-switch") {
    model.d = 64;
    model.r = 16;
    model.m = 1024;
    model.sigma_sq = Vector::Ones(16);
    model.sigma_sq(0) = std::log(64.0);  // adversarial head
    model.sigma_xi_sq = 1.0;
    model.K = 1.0;
    model.seed = seed;
    spec.loss_kind = LossKind::Contrastive;
    sched.eta = 5e-3;
    sched.T2 = 20000;
    if (name == "figure-contrastive-switch") {
      sched.tau0_sq = 1e-4;
      sched.T1 = 2000;
    } else {
      sched.tau0_sq = 1.0;
      sched.T1 = 0;
    }
    spec.strategy =
        ExpectationStrategy::monte_carlo(4096, static_cast<std::uint64_t>(seed));
    spec.recorder.stride = 100;
    return spec;
  }
  if (name == "smoke-exact") {
    // Tiny exact-strategy run for fast end-to-end checks.
    model.d = 4;
    model.r = 2;
    model.m = 8;
    model.sigma_sq = (Vector(2) << 2.0, 1.0).finished();
    model.sigma_xi_sq = 1.0;
    model.K = 1.0;
    model.seed = seed;
    spec.loss_kind = LossKind::Contrastive;
    sched.eta = 1e-2;
    sched.tau0_sq = 1e-2;
    sched.T1 = 50;
    sched.T2 = 200;
    spec.strategy = ExpectationStrategy::exact();
    spec.recorder.stride = 10;
    return spec;
  }
  throw std::invalid_argument("unknown preset: " + name);
}

}  // namespace cdyn

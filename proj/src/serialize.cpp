#include "cdyn/serialize.hpp"

#include <cstdio>
#include <fstream>

namespace cdyn {

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

Json model_config_to_json(const ModelConfig& config) {
  Json j;
  j["d"] = config.d;
  j["r"] = config.r;
  j["m"] = config.m;
  j["sigma_sq"] = std::vector<double>(config.sigma_sq.data(),
                                      config.sigma_sq.data() + config.sigma_sq.size());
  j["sigma_xi_sq"] = config.sigma_xi_sq;
  j["K"] = config.K;
  j["seed"] = config.seed;
  if (config.tie_modalities) j["tie_modalities"] = true;
  return j;
}

ModelConfig model_config_from_json(const Json& j) {
  ModelConfig config;
  config.d = j.at("d").get<int>();
  config.r = j.at("r").get<int>();
  config.m = j.at("m").get<int>();
  const Json& s = j.at("sigma_sq");
  if (s.is_string()) {
    const std::string name = s.get<std::string>();
    if (name == "flat") {
      config.sigma_sq = Vector::Ones(config.r);
    } else if (name == "adversarial") {
      if (config.r != config.d)
        throw std::invalid_argument("sigma_sq preset 'adversarial' requires r == d");
      config.sigma_sq = adversarial_sigma(config.d, 1.0);
    } else {
      throw std::invalid_argument("unknown sigma_sq preset: " + name);
    }
  } else {
    std::vector<double> v = s.get<std::vector<double>>();
    config.sigma_sq = Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  config.sigma_xi_sq = j.at("sigma_xi_sq").get<double>();
  config.K = j.at("K").get<double>();
  config.seed = j.at("seed").get<std::int64_t>();
  config.tie_modalities = j.value("tie_modalities", false);
  config.validate();
  if (!config.assumption_holds())
    std::fprintf(stderr,
                 "warning: spectrum-spread assumption ratio %.3f exceeds log d = %.3f\n",
                 config.assumption_ratio(), std::log(static_cast<double>(config.d)));
  return config;
}

namespace {

Json schedule_to_json(const Schedule& s) {
  Json j;
  j["eta"] = s.eta;
  j["tau0_sq"] = s.tau0_sq;
  j["T1"] = s.T1;
  j["T2"] = s.T2;
  if (s.batch > 0)
    j["batch"] = s.batch;
  else
    j["batch"] = "population";
  j["stop_grad_norm"] = s.stop_grad_norm;
  return j;
}

Schedule schedule_from_json(const Json& j) {
  Schedule s;
  s.eta = j.at("eta").get<double>();
  s.tau0_sq = j.value("tau0_sq", 1.0);
  s.T1 = j.value("T1", std::int64_t(0));
  s.T2 = j.at("T2").get<std::int64_t>();
  const Json& b = j.value("batch", Json("population"));
  s.batch = b.is_string() ? 0 : b.get<std::int64_t>();
  s.stop_grad_norm = j.value("stop_grad_norm", 1e-8);
  s.validate();
  return s;
}

Json strategy_to_json(const ExpectationStrategy& s) {
  Json j;
  j["mode"] = s.mode == ExpectationStrategy::Mode::Exact ? "exact" : "monte_carlo";
  if (s.mode == ExpectationStrategy::Mode::MonteCarlo) {
    j["mc_samples"] = s.mc_samples;
    j["mc_seed"] = s.mc_seed;
  }
  j["exact_budget"] = s.exact_budget;
  return j;
}

ExpectationStrategy strategy_from_json(const Json& j) {
  ExpectationStrategy s;
  const std::string mode = j.value("mode", "exact");
  if (mode == "exact") {
    s = ExpectationStrategy::exact(j.value("exact_budget", std::int64_t(1) << 24));
  } else if (mode == "monte_carlo" || mode == "mc") {
    s = ExpectationStrategy::monte_carlo(j.at("mc_samples").get<std::int64_t>(),
                                         j.value("mc_seed", std::uint64_t(0)));
    s.exact_budget = j.value("exact_budget", std::int64_t(1) << 24);
  } else {
    throw std::invalid_argument("unknown strategy mode: " + mode);
  }
  return s;
}

Json recorder_to_json(const RecorderSpec& r) {
  Json j;
  j["stride"] = r.stride;
  j["snapshot_stride_factor"] = r.snapshot_stride_factor;
  j["align_mc_samples"] = r.align_mc_samples;
  j["align_exact_budget"] = r.align_exact_budget;
  j["stage1_delta"] = r.stage1_delta;
  j["c_target"] = r.c_target;
  return j;
}

RecorderSpec recorder_from_json(const Json& j) {
  RecorderSpec r;
  r.stride = j.value("stride", std::int64_t(100));
  r.snapshot_stride_factor = j.value("snapshot_stride_factor", std::int64_t(10));
  r.align_mc_samples = j.value("align_mc_samples", std::int64_t(4096));
  r.align_exact_budget = j.value("align_exact_budget", std::int64_t(1) << 20);
  r.stage1_delta = j.value("stage1_delta", 0.01);
  r.c_target = j.value("c_target", 1.2);
  return r;
}

}  // namespace

Json experiment_spec_to_json(const ExperimentSpec& spec) {
  Json j;
  j["model"] = model_config_to_json(spec.model);
  j["schedule"] = schedule_to_json(spec.schedule);
  j["loss_kind"] = spec.loss_kind == LossKind::Contrastive ? "contrastive" : "non_contrastive";
  j["strategy"] = strategy_to_json(spec.strategy);
  j["recorder"] = recorder_to_json(spec.recorder);
  if (!spec.out_dir.empty()) j["out_dir"] = spec.out_dir;
  return j;
}

ExperimentSpec experiment_spec_from_json(const Json& j) {
  ExperimentSpec spec;
  spec.model = model_config_from_json(j.at("model"));
  spec.schedule = schedule_from_json(j.at("schedule"));
  const std::string kind = j.at("loss_kind").get<std::string>();
  if (kind == "contrastive")
    spec.loss_kind = LossKind::Contrastive;
  else if (kind == "non_contrastive")
    spec.loss_kind = LossKind::NonContrastive;
  else
    throw std::invalid_argument("unknown loss_kind: " + kind);
  spec.strategy = strategy_from_json(j.value("strategy", Json::object()));
  spec.recorder = recorder_from_json(j.value("recorder", Json::object()));
  spec.out_dir = j.value("out_dir", "");
  return spec;
}

Json audit_report_to_json(const AuditReport& report) {
  Json j;
  j["lemma_id"] = report.lemma_id;
  j["measured"] = report.measured;
  j["predicted"] = report.predicted;
  j["error"] = report.error;
  j["budget"] = report.budget;
  j["pass"] = report.pass;
  if (report.inconclusive) j["inconclusive"] = true;
  if (report.informational) j["informational"] = true;
  j["detail"] = report.detail;
  return j;
}

Json stage_report_to_json(const StageReport& report) {
  Json j;
  j["stage1_met"] = report.stage1_met;
  j["stage1_step"] = report.stage1_step;
  j["stage2_met"] = report.stage2_met;
  j["stage2_step"] = report.stage2_step;
  j["stage1_delta"] = report.stage1_delta;
  j["c_target"] = report.c_target;
  j["last_rho_minus"] = report.last_rho_minus;
  j["last_rho_ns"] = report.last_rho_ns;
  j["last_kappa0"] = report.last_kappa0;
  return j;
}

std::string spec_hash(const ExperimentSpec& spec) {
  const std::string dump = experiment_spec_to_json(spec).dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_trajectory_csv(const std::string& path, const Trajectory& trajectory, int r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "step,tau_sq,loss,gamma_align,gamma_balance,kappa0,rho_minus,rho_ns";
  for (int i = 1; i <= r; ++i) out << ",sigma_f_" << i;
  out << "\n";
  for (const TrajectoryPoint& pt : trajectory.points) {
    out << pt.step << ',' << format_double(pt.tau_sq) << ',' << format_double(pt.loss) << ','
        << format_double(pt.metrics.gamma_align) << ',' << format_double(pt.metrics.gamma_balance)
        << ',' << format_double(pt.metrics.kappa0) << ',' << format_double(pt.metrics.rho_minus)
        << ',' << format_double(pt.metrics.rho_ns);
    for (int i = 0; i < r; ++i) {
      const double v = i < pt.metrics.sigma_f_top.size() ? pt.metrics.sigma_f_top(i) : 0.0;
      out << ',' << format_double(v);
    }
    out << "\n";
  }
}

void write_iw_trajectory_csv(const std::string& path,
                             const std::vector<IwTrajectoryPoint>& trajectory) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  const int r = trajectory.empty() ? 0 : static_cast<int>(trajectory.front().state.kappa_sq.size());
  out << "step,t";
  for (int i = 1; i <= r; ++i) out << ",kappa_sq_" << i;
  for (int i = 1; i <= r; ++i) out << ",hat_kappa_sq_" << i;
  out << ",S_tilde,T_tilde\n";
  for (std::size_t s = 0; s < trajectory.size(); ++s) {
    const IwTrajectoryPoint& pt = trajectory[s];
    out << s << ',' << format_double(pt.t);
    for (int i = 0; i < r; ++i) out << ',' << format_double(pt.state.kappa_sq(i));
    for (int i = 0; i < r; ++i) out << ',' << format_double(pt.state.hat_kappa_sq(i));
    out << ',' << format_double(pt.forms.S_tilde) << ',' << format_double(pt.forms.T_tilde)
        << "\n";
  }
}

void write_json(const std::string& path, const Json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << "\n";
}

}  // namespace cdyn

#include <CLI11.hpp>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "cdyn/presets.hpp"
#include "cdyn/rng.hpp"

namespace fs = std::filesystem;
using namespace cdyn;

namespace {

std::string default_out_root() {
  if (const char* env = std::getenv("CONTRASTIVE_DYNAMICS_OUT")) return env;
  return "out";
}

struct CommonOpts {
  std::string spec_file;
  std::string preset;
  std::string out_dir;
  std::int64_t seed = -1;
  double eta = -1.0;
  std::int64_t stride = -1;
  bool exact = false;
  std::int64_t mc = -1;
  std::int64_t mc_seed = -1;
};

ExperimentSpec load_spec(const CommonOpts& opts) {
  ExperimentSpec spec;
  if (!opts.spec_file.empty()) {
    std::ifstream in(opts.spec_file);
    if (!in) throw std::runtime_error("cannot open spec file " + opts.spec_file);
    Json j = Json::parse(in);
    spec = experiment_spec_from_json(j);
  } else if (!opts.preset.empty()) {
    spec = make_preset(opts.preset, opts.seed >= 0 ? opts.seed : 1234);
  } else {
    throw std::runtime_error("either --spec or --preset is required");
  }
  if (opts.seed >= 0) {
    spec.model.seed = opts.seed;
    if (spec.strategy.mode == ExpectationStrategy::Mode::MonteCarlo)
      spec.strategy.mc_seed = static_cast<std::uint64_t>(opts.seed);
  }
  if (opts.eta >= 0.0) spec.schedule.eta = opts.eta;
  if (opts.stride > 0) spec.recorder.stride = opts.stride;
  if (opts.exact) spec.strategy = ExpectationStrategy::exact(spec.strategy.exact_budget);
  if (opts.mc > 0)
    spec.strategy = ExpectationStrategy::monte_carlo(
        opts.mc, opts.mc_seed >= 0 ? static_cast<std::uint64_t>(opts.mc_seed)
                                   : static_cast<std::uint64_t>(spec.model.seed));
  if (!opts.out_dir.empty())
    spec.out_dir = opts.out_dir;
  else if (spec.out_dir.empty())
    spec.out_dir = (fs::path(default_out_root()) /
                    (opts.preset.empty() ? "run" : opts.preset))
                       .string();
  return spec;
}

int run_train_spec(const ExperimentSpec& spec) {
  fs::create_directories(spec.out_dir);
  const RunResult result =
      run(spec.model, spec.schedule, spec.loss_kind, spec.strategy, spec.recorder);
  const Trajectory& traj = result.trajectory;

  write_trajectory_csv((fs::path(spec.out_dir) / "trajectory.csv").string(), traj, spec.model.r);
  const StageReport stages =
      stage_boundary_report(traj, spec.recorder.stage1_delta, spec.recorder.c_target);
  write_json((fs::path(spec.out_dir) / "stage_report.json").string(),
             stage_report_to_json(stages));

  Json summary;
  summary["spec"] = experiment_spec_to_json(spec);
  summary["spec_hash"] = spec_hash(spec);
  summary["csv_schema"] = "trajectory-v1";
  const char* status = "completed";
  if (traj.status == RunStatus::EarlyStopped) status = "early_stopped";
  if (traj.status == RunStatus::Collapsed) status = "collapsed";
  if (traj.status == RunStatus::Diverged) status = "diverged";
  summary["status"] = status;
  summary["steps_run"] = traj.steps_run;
  summary["final_grad_norm"] = traj.final_grad_norm;
  if (!traj.points.empty()) {
    const MetricsRecord& last = traj.points.back().metrics;
    summary["final"] = {{"loss", traj.points.back().loss},
                        {"gamma_align", last.gamma_align},
                        {"gamma_balance", last.gamma_balance},
                        {"kappa0", last.kappa0},
                        {"rho_minus", last.rho_minus},
                        {"rho_ns", last.rho_ns}};
  }
  write_json((fs::path(spec.out_dir) / "summary.json").string(), summary);

  if (traj.status == RunStatus::Collapsed || traj.status == RunStatus::Diverged) {
    std::cerr << "run ended with status " << status << " at step " << traj.steps_run << "\n";
    return 1;
  }
  std::cout << spec.out_dir << ": " << status << " after " << traj.steps_run << " steps\n";
  return 0;
}

int cmd_train(const CommonOpts& opts) {
  ExperimentSpec spec;
  try {
    spec = load_spec(opts);
  } catch (const std::exception& e) {
    std::cerr << "invalid spec: " << e.what() << "\n";
    return 2;
  }
  return run_train_spec(spec);
}

int cmd_figure(std::int64_t seed, const std::string& out_root, int jobs) {
  const fs::path root = out_root.empty() ? fs::path(default_out_root()) / "figure"
                                         : fs::path(out_root);
  std::vector<ExperimentSpec> specs;
  for (const char* name : kFigurePresets) {
    ExperimentSpec spec = make_preset(name, seed);
    spec.out_dir = (root / name).string();
    specs.push_back(std::move(spec));
  }
  std::vector<int> rc(specs.size(), 0);
  if (jobs > 1) {
    std::vector<std::thread> workers;
    std::size_t next = 0;
    std::mutex mu;
    for (int w = 0; w < jobs; ++w)
      workers.emplace_back([&]() {
        for (;;) {
          std::size_t i;
          {
            std::lock_guard<std::mutex> lock(mu);
            if (next >= specs.size()) return;
            i = next++;
          }
          rc[i] = run_train_spec(specs[i]);
        }
      });
    for (auto& w : workers) w.join();
  } else {
    for (std::size_t i = 0; i < specs.size(); ++i) rc[i] = run_train_spec(specs[i]);
  }

  Json bundle;
  bundle["seed"] = seed;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    std::ifstream in(fs::path(specs[i].out_dir) / "summary.json");
    bundle["runs"][std::string(kFigurePresets[i])] = Json::parse(in);
  }
  fs::create_directories(root);
  write_json((root / "figure_summary.json").string(), bundle);
  for (int c : rc)
    if (c != 0) return c;
  return 0;
}

int cmd_verify(const std::string& only, const std::string& out_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<AuditReport> reports = run_audit_battery(only);
  Json j = Json::array();
  bool all_pass = !reports.empty();
  for (const AuditReport& rep : reports) {
    j.push_back(audit_report_to_json(rep));
    const bool ok = rep.pass && !rep.inconclusive;
    if (!ok) all_pass = false;
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << rep.lemma_id << ": " << rep.detail << "\n";
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << reports.size() << " audits in " << secs << " s\n";
  const fs::path root = out_dir.empty() ? fs::path(default_out_root()) : fs::path(out_dir);
  fs::create_directories(root);
  write_json((root / "verify_report.json").string(), j);
  return all_pass ? 0 : 1;
}

int cmd_iw(const std::string& preset, const std::string& out_dir, bool step_halving) {
  const fs::path root = out_dir.empty() ? fs::path(default_out_root()) / ("iw-" + preset)
                                        : fs::path(out_dir);
  fs::create_directories(root);

  if (preset == "fixed-point") {
    InfiniteWidthState s0;
    s0.kappa_sq = Vector::Ones(4);
    s0.hat_kappa_sq = Vector::Ones(4);
    IwSchedule sched;
    const auto traj = integrate_iw(s0, Vector::Ones(4), sched, 0.01, 5.0);
    write_iw_trajectory_csv((root / "iw_trajectory.csv").string(), traj);
    std::cout << "fixed-point trajectory written (" << traj.size() << " rows)\n";
    return 0;
  }
  if (preset == "tracking") {
    // Finite-width population-gradient run at d=16, r=4, m=4096 vs the
    // reduced ODE started from the measured t=0 state.
    ModelConfig config;
    config.d = 16;
    config.r = 4;
    config.m = 4096;
    config.sigma_sq = (Vector(4) << 2.0, 1.5, 1.2, 1.0).finished();
    config.sigma_xi_sq = 1.0;
    config.K = 1.0;
    config.seed = 1234;
    const double eta = 2e-3;
    const int steps = 2000, probe = 20;

    std::mt19937_64 rng = make_rng(static_cast<std::uint64_t>(config.seed));
    const EncoderSet enc = build_encoders(config, rng);
    WeightState w = init_weights(config, rng);
    KState ks = compute_kstate(w, enc);
    IwSchedule sched;
    sched.K = config.K;
    const auto iw_traj =
        integrate_iw(measure_iw_state(ks), config.sigma_sq, sched, eta, steps * eta);

    std::ofstream out(root / "tracking.csv", std::ios::binary);
    out << "step,t";
    for (int i = 1; i <= config.r; ++i) out << ",kappa_sq_" << i;
    for (int i = 1; i <= config.r; ++i) out << ",iw_kappa_sq_" << i;
    out << ",max_rel_gap,max_diag\n";
    double worst_gap = 0.0;
    for (int t = 0; t <= steps; ++t) {
      ks = compute_kstate(w, enc);
      if (t % probe == 0) {
        const InfiniteWidthState fin = measure_iw_state(ks);
        const InfiniteWidthState& ref = iw_traj[static_cast<std::size_t>(t)].state;
        double gap = 0.0;
        for (int p = 0; p < config.r; ++p)
          gap = std::max(gap, std::abs(fin.kappa_sq(p) - ref.kappa_sq(p)) / ref.kappa_sq(p));
        const DiagnosticsRecord diag = diagnostics(ks);
        const double max_diag = std::max({diag.delta_AB, diag.delta_AB_perp, diag.delta_xi_perp});
        worst_gap = std::max(worst_gap, gap);
        out << t << ',' << format_double(t * eta);
        for (int p = 0; p < config.r; ++p) out << ',' << format_double(fin.kappa_sq(p));
        for (int p = 0; p < config.r; ++p) out << ',' << format_double(ref.kappa_sq(p));
        out << ',' << format_double(gap) << ',' << format_double(max_diag) << "\n";
      }
      const QSet q = compute_qset(
          ks, 1.0, config.K,
          ExpectationStrategy::monte_carlo(16384, derive_seed(config.seed, t)));
      const KRates rates = krates_from_qset(ks, q, config.sigma_sq, config.sigma_xi_sq);
      const GradientPair dir =
          weight_step_from_krates(enc, config.sigma_sq, config.sigma_xi_sq, rates);
      w.W_A += eta * dir.grad_W_A;
      w.W_B += eta * dir.grad_W_B;
    }
    write_iw_trajectory_csv((root / "iw_trajectory.csv").string(), iw_traj);
    std::cout << "tracking written; max relative kappa^2 gap = " << worst_gap << "\n";
    return worst_gap <= 0.05 ? 0 : 1;
  }

  if (step_halving || preset == "order-check") {
    InfiniteWidthState s0;
    s0.kappa_sq = (Vector(3) << 2.0, 1.0, 0.5).finished();
    s0.hat_kappa_sq = (Vector(3) << 1.0, 0.5, 0.25).finished();
    const Vector sigma_sq = (Vector(3) << 2.0, 1.0, 1.0).finished();
    IwSchedule sched;
    const double T = 2.0;
    auto final_state = [&](double h) {
      return integrate_iw(s0, sigma_sq, sched, h, T).back().state.kappa_sq;
    };
    const Vector xh = final_state(0.1), xh2 = final_state(0.05), xh4 = final_state(0.025);
    const double e1 = (xh - xh4).norm(), e2 = (xh2 - xh4).norm();
    const double order = std::log2(e1 / e2) ;
    Json j;
    j["e_h"] = e1;
    j["e_h2"] = e2;
    j["order_estimate"] = order;
    write_json((root / "order_check.json").string(), j);
    std::cout << "step-halving order estimate = " << order << "\n";
    return 0;
  }
  std::cerr << "unknown iw preset: " << preset << "\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear multimodal contrastive learning dynamics simulator"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--spec", opts.spec_file, "experiment spec JSON file");
    cmd->add_option("--preset", opts.preset, "named preset");
    cmd->add_option("--seed", opts.seed, "model seed override");
    cmd->add_option("--eta", opts.eta, "learning rate override");
    cmd->add_option("--stride", opts.stride, "recorder stride override");
    cmd->add_option("--out", opts.out_dir, "output directory");
    cmd->add_flag("--exact", opts.exact, "use exact enumeration strategy");
    cmd->add_option("--mc", opts.mc, "use Monte Carlo strategy with N samples");
    cmd->add_option("--mc-seed", opts.mc_seed, "Monte Carlo seed");
  };

  CLI::App* train = app.add_subcommand("train", "run one training experiment");
  add_common(train);

  std::string iw_preset = "fixed-point";
  std::string iw_out;
  bool step_halving = false;
  CLI::App* iw = app.add_subcommand("iw", "integrate the infinite-width ODE");
  iw->add_option("--preset", iw_preset, "fixed-point | tracking | order-check");
  iw->add_option("--out", iw_out, "output directory");
  iw->add_flag("--step-halving", step_halving, "emit RK4 order-of-convergence estimate");

  std::string only;
  std::string verify_out;
  CLI::App* verify = app.add_subcommand("verify", "run the lemma audit battery");
  verify->add_option("--only", only, "filter audits by id substring");
  verify->add_option("--out", verify_out, "output directory");

  std::int64_t fig_seed = 1234;
  std::string fig_out;
  int jobs = 1;
  CLI::App* figure = app.add_subcommand("figure", "run the three figure presets");
  figure->add_option("--seed", fig_seed, "shared seed");
  figure->add_option("--out", fig_out, "output root");
  figure->add_option("--jobs", jobs, "parallel preset runs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(opts);
    if (*iw) return cmd_iw(iw_preset, iw_out, step_halving);
    if (*verify) return cmd_verify(only, verify_out);
    if (*figure) return cmd_figure(fig_seed, fig_out, jobs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

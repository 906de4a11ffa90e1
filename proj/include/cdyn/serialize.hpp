#pragma once

#include <string>

#include <json.hpp>

#include "cdyn/infinite_width.hpp"
#include "cdyn/lemma_checks.hpp"
#include "cdyn/training.hpp"

namespace cdyn {

using Json = nlohmann::ordered_json;

// Full experiment description: model + schedule + loss + strategy + recorder.
struct ExperimentSpec {
  ModelConfig model;
  Schedule schedule;
  LossKind loss_kind = LossKind::Contrastive;
  ExpectationStrategy strategy;
  RecorderSpec recorder;
  std::string out_dir;
};

Json model_config_to_json(const ModelConfig& config);
// sigma_sq accepts an explicit list or a named preset ("flat", "adversarial").
ModelConfig model_config_from_json(const Json& j);

Json experiment_spec_to_json(const ExperimentSpec& spec);
ExperimentSpec experiment_spec_from_json(const Json& j);

Json audit_report_to_json(const AuditReport& report);
Json stage_report_to_json(const StageReport& report);

// FNV-1a 64 over the canonical spec dump; pins summary.json to its spec.
std::string spec_hash(const ExperimentSpec& spec);

// UTF-8, comma-separated, header row, floats at 17 significant digits.
void write_trajectory_csv(const std::string& path, const Trajectory& trajectory, int r);
void write_iw_trajectory_csv(const std::string& path,
                             const std::vector<IwTrajectoryPoint>& trajectory);
void write_json(const std::string& path, const Json& j);

std::string format_double(double x);  // 17 significant digits

}  // namespace cdyn

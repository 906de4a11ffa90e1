#pragma once

#include <string>
#include <vector>

#include "cdyn/serialize.hpp"

namespace cdyn {

// Named experiment presets. The figure bundle reproduces the simulation
// comparison: non-contrastive on the adversarial spectrum, contrastive with
// tau == 1 throughout, and contrastive with the tau switch.
std::vector<std::string> preset_names();
ExperimentSpec make_preset(const std::string& name, std::int64_t seed = 1234);

inline constexpr const char* kFigurePresets[3] = {
    "figure-noncontrastive", "figure-contrastive-tau1", "figure-contrastive-switch"};

}  // namespace cdyn

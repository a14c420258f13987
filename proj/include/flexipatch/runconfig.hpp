#pragma once

#include <string>
#include <vector>

#include "flexipatch/model.hpp"
#include "flexipatch/pdegen.hpp"
#include "flexipatch/rollout.hpp"
#include "flexipatch/training.hpp"
#include "json.hpp"

namespace flexipatch {

// One JSON config schema shared by all verbs; CLI --set overrides win over
// file values and the resolved config is echoed into the run manifest.
nlohmann::json default_config();

// Loads a config file; a manifest file (has "verb" and "config") is accepted
// too and resolves to its embedded config, so any run is reproducible from
// its manifest alone.
nlohmann::json load_config_file(const std::string& path);

// Applies "dotted.key=value" (value parsed as JSON when possible, else string).
void apply_override(nlohmann::json& cfg, const std::string& keyval);

// Typed views of config sections; validation errors carry the field name.
PDEParams pde_params_from(const nlohmann::json& cfg);
ModelConfig model_config_from(const nlohmann::json& cfg);
TrainConfig train_config_from(const nlohmann::json& cfg, uint64_t seed);
ScheduleSpec schedule_spec_from(const nlohmann::json& cfg, uint64_t seed);

struct Manifest {
    std::string verb;
    std::string version;
    uint64_t seed = 0;
    nlohmann::json config;
    bool completed = false;
    std::vector<std::string> outputs;
};

void write_manifest(const std::string& outdir, const Manifest& m);
Manifest read_manifest(const std::string& dir);

std::string fmt_double(double v);  // shortest round-trip decimal form

}  // namespace flexipatch

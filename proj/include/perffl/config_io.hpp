#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "perffl/core.hpp"

namespace perffl {

/// Parses a YAML experiment description. Missing keys keep their defaults;
/// unknown keys are rejected so typos surface before iteration 0.
ExperimentConfig parse_config(std::string_view yaml_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& cfg);

/// Applies one `dotted.key=value` override, e.g. `environment.gamma_high=3`
/// or `sample_size.n=50`. Values are parsed as YAML scalars or flow lists.
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

}  // namespace perffl

#pragma once

#include <iosfwd>
#include <map>
#include <string>

#include "dmdfm/pipeline.hpp"
#include "dmdfm/simulation.hpp"

namespace dmdfm {

/// Flat key-value configuration file with one nesting level:
///
///   [pipeline]
///   variance_threshold = 0.8
///   gmm_steps = two
///
/// Values are strings, numbers or true/false. Keys outside any section go
/// into the "" section. Unknown keys are rejected by the appliers so typos
/// fail loudly.
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;

  static ConfigFile parse(std::istream& in);
  static ConfigFile parse_file(const std::string& path);
};

/// Applies [pipeline] keys onto a DmdfmConfig.
void apply_pipeline_section(const ConfigFile& file, DmdfmConfig& config);
/// Applies [simulation] keys onto a SimulationConfig (plus [pipeline] onto
/// its embedded estimation settings).
void apply_simulation_section(const ConfigFile& file, SimulationConfig& config);

/// Resolved-settings serialization used by the run manifest; the JSON is
/// accepted back by the appliers below so a manifest can reproduce a run.
std::string pipeline_config_to_json(const DmdfmConfig& config);
std::string simulation_config_to_json(const SimulationConfig& config);
void pipeline_config_from_json(const std::string& json, DmdfmConfig& config);
void simulation_config_from_json(const std::string& json, SimulationConfig& config);

}  // namespace dmdfm

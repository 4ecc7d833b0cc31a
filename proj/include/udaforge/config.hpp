#pragma once

#include <string>
#include <vector>

#include "udaforge/toyscenes.hpp"
#include "udaforge/trainer.hpp"

namespace udaforge {

// Everything one run needs: the scene recipe, the training schedule, and the
// dataset/output paths. The JSON form mirrors the field names 1:1 and rejects
// unknown keys; when warmup_steps is absent it defaults to total_steps / 4.
struct RunConfig {
  SceneSpec scene = SceneSpec::defaults();
  TrainConfig train;
  std::string source;
  std::string target;
  std::string out;
};

std::string run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

// Ablation presets, one per results-table row. "full" turns every component
// on, "supervised" turns them all off, the rest switch off exactly one.
const std::vector<std::string>& preset_names();
void apply_preset(TrainConfig& cfg, const std::string& name);

}  // namespace udaforge

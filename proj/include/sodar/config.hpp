#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "sodar/loss.hpp"
#include "sodar/model.hpp"
#include "sodar/postprocess.hpp"
#include "sodar/train.hpp"

namespace sodar {

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  DecodeConfig decode;

  void validate() const;
};

// Flat key=value text. '#' starts a comment, blank lines are skipped and an
// unknown key or malformed value throws std::invalid_argument naming the line.
RunConfig parse_config(std::istream& is, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);
std::vector<std::string> config_keys();

// One "key=value" line per key, in config_keys() order; parse_config reads it back.
std::string dump_config(const RunConfig& cfg);

// "8:8" or "40:40,36:36,..." (grid:mask_grid per level), or a preset name
// default | plus-cls | minus-mask.
GridConfig parse_grids(std::string_view text);
std::string grids_to_string(const GridConfig& grids);

}  // namespace sodar

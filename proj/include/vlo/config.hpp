#pragma once

#include "vlo/loss_metrics.hpp"
#include "vlo/projection.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vlo {

struct PipelineConfig {
  uint64_t seed = 1;
  int levels = 4;

  // Cylindrical pseudo-image grid.
  int pseudo_height = 64;
  int pseudo_width = 1800;
  double min_elevation_deg = -24.8;
  double max_elevation_deg = 2.0;

  // Camera image padding and pyramid profiles.
  int pad_height = 384;
  int pad_width = 1280;
  std::vector<int> image_channels{16, 32, 64, 128};
  std::vector<int> point_channels{32, 64, 128, 256};
  double point_input_scale = 0.05;  // xyz meters -> network input units

  // Local fuser region partition (tile counts over every feature-map level).
  int region_rows = 8;
  int region_cols = 16;
  bool similarity_on_value = false;

  int cost_volume_k = 16;
  double z_min = 0.1;

  LossWeights loss;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;

  CylindricalConfig cylindrical() const {
    return CylindricalConfig::make(pseudo_height, pseudo_width, min_elevation_deg,
                                   max_elevation_deg);
  }
  int stride_at(int level) const { return 1 << (level + 1); }

  void validate() const;

  // Small profile used by tests and the synthetic scenes.
  static PipelineConfig micro();

  // JSON round-trip; unknown keys are rejected.
  static PipelineConfig load_file(const std::string& path);
  void save_file(const std::string& path) const;
  static PipelineConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

}  // namespace vlo

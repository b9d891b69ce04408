#pragma once

#include "vlo/config.hpp"
#include "vlo/dataio.hpp"
#include "vlo/pipeline.hpp"

#include <cstdint>
#include <string>

namespace vlo {

struct PoseMagnitude {
  double rotation_rad = 0.0;
  double translation_m = 0.0;
};

// Desk-scale stand-in for a KITTI frame pair: a frustum-sampled cloud with
// per-point colors, its rigidly moved copy, and both point-splat renderings.
struct SyntheticPair {
  LidarScan source, target;
  Grid source_image, target_image;  // camera-resolution renders
  CameraModel cam;
  PoseSE3 gt_warp;  // transform_points(gt_warp, source) == target when sigma = 0
  uint64_t seed = 0;
};

// Camera with a LiDAR->camera axis permutation extrinsic matching the
// configured pad size (so pad_image is the identity on synthetic frames).
CameraModel synth_camera(const PipelineConfig& pc);

// pose magnitudes are applied exactly (random axis/direction); sigma adds
// Gaussian noise per target coordinate.
SyntheticPair generate_pair(uint64_t seed, int n_points, const PoseMagnitude& mag,
                            double noise_sigma, const CameraModel& cam);

FrameInput to_frame_input(const LidarScan& scan, const Grid& camera_image,
                          const CameraModel& cam, const PipelineConfig& pc);

// Writes an n_frame synthetic sequence (consistent world cloud, constant ego
// motion) in the KITTI directory layout, including calib and gt poses.
void write_synth_sequence(const std::string& root, const std::string& id, uint64_t seed,
                          int n_frames, int n_points, const PoseMagnitude& per_frame_motion,
                          const PipelineConfig& pc);

}  // namespace vlo

#pragma once

#include "vlo/geometry.hpp"

#include <array>
#include <string>
#include <vector>

namespace vlo {

struct LossWeights {
  std::array<double, 4> alpha{1.6, 0.8, 0.4, 0.2};  // finest level first
  double k_x_init = 0.0;
  double k_q_init = -2.5;
};

// |t_gt - t|_1 * exp(-k_x) + k_x + |q_gt - q|_2 * exp(-k_q) + k_q, with q
// sign-aligned to q_gt first so the double cover cannot flip the residual.
double layer_loss(const PoseSE3& pred, const PoseSE3& gt, double k_x, double k_q);

struct LayerLossGrads {
  Quaternion g_q{0, 0, 0, 0};
  Vec3 g_t = Vec3::Zero();
  double g_k_x = 0.0;
  double g_k_q = 0.0;
};

LayerLossGrads layer_loss_backward(const PoseSE3& pred, const PoseSE3& gt, double k_x,
                                   double k_q, double g_loss);

// Weighted sum over the per-level losses.
double total_loss(const std::vector<double>& per_level, const std::vector<double>& alpha);

// ---------------------------------------------------------------------------
// KITTI odometry protocol

struct EvalConfig {
  std::vector<double> lengths{100, 200, 300, 400, 500, 600, 700, 800};  // meters
  int step_frames = 10;  // start-frame stride
  // Slack on the segment-end arc-length comparison; keeps the chosen end
  // frame stable when distances sit exactly on a length boundary.
  double boundary_tolerance = 1e-9;
};

struct LengthStats {
  double length = 0;
  double t_err = 0;  // mean ||t||/len over pairs
  double r_err = 0;  // mean angle/len (rad/m)
  int pairs = 0;
};

struct TrajectoryEval {
  double t_rel_percent = 0.0;
  double r_rel_deg_per_100m = 0.0;
  std::vector<LengthStats> per_length;
  int pairs = 0;
};

// Relative-pose errors over all (start frame, segment length) pairs reachable
// along the ground-truth arc length. Both trajectories are absolute poses.
// Throws when no segment of any requested length fits.
TrajectoryEval kitti_eval(const std::vector<PoseSE3>& gt, const std::vector<PoseSE3>& est,
                          const EvalConfig& cfg = {});

// pose_0 = identity, pose_{i+1} = pose_i o relative_i.
std::vector<PoseSE3> accumulate_trajectory(const std::vector<PoseSE3>& relative);

// Plain-text table plus the machine-readable summary line.
std::string format_eval_report(const TrajectoryEval& ev);

}  // namespace vlo

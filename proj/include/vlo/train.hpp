#pragma once

#include "vlo/pipeline.hpp"
#include "vlo/synth.hpp"

#include <vector>

namespace vlo {

struct AdamState {
  ParamStore m, v;
  int64_t step = 0;

  static AdamState init(const ParamStore& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

// Bias-corrected Adam update over every registered tensor.
void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps = 1e-8);

struct TrainResult {
  std::vector<double> losses;        // loss before each step (losses[0] = initial)
  std::vector<PoseSE3> final_poses;  // finest first
  PoseSE3 final_pose;                // finest level estimate after the last step
};

// Single-pair gradient descent at the micro profile; aborts with the step
// index if the loss turns non-finite.
TrainResult micro_train(const ModelConfig& model, ParamStore& params, const FrameInput& src,
                        const FrameInput& tgt, const PoseSE3& gt_warp, int steps,
                        double learning_rate);

// Rotation angle between two unit quaternions, degrees.
double rotation_error_deg(const Quaternion& a, const Quaternion& b);

}  // namespace vlo

#include "vlo/train.hpp"

#include "vlo/log.hpp"

#include <cmath>
#include <stdexcept>

namespace vlo {

void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (const std::string& name : params.names()) {
    Tensor& p = params.at(name);
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (size_t i = 0; i < p.size(); ++i) {
      m.v[i] = beta1 * m.v[i] + (1.0 - beta1) * g.v[i];
      v.v[i] = beta2 * v.v[i] + (1.0 - beta2) * g.v[i] * g.v[i];
      const double mh = m.v[i] / bc1;
      const double vh = v.v[i] / bc2;
      p.v[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

TrainResult micro_train(const ModelConfig& model, ParamStore& params, const FrameInput& src,
                        const FrameInput& tgt, const PoseSE3& gt_warp, int steps,
                        double learning_rate) {
  TrainResult result;
  AdamState adam = AdamState::init(params);
  std::vector<PoseSE3> poses;
  for (int step = 0; step < steps; ++step) {
    ParamStore grads = params.zeros_like();
    const double loss =
        pair_loss_and_gradients(src, tgt, gt_warp, params, model, grads, &poses);
    if (!std::isfinite(loss))
      throw std::runtime_error("micro_train: non-finite loss at step " + std::to_string(step));
    result.losses.push_back(loss);
    adam_step(params, grads, adam, learning_rate, model.pc.adam_beta1, model.pc.adam_beta2);
    if (step % 50 == 0)
      log().debug("micro_train: step {} loss {:.6f}", step, loss);
  }
  // Forward once more to report the trained estimate.
  result.final_poses = estimate_pair(src, tgt, params, model, nullptr);
  result.final_pose = result.final_poses.front();
  return result;
}

double rotation_error_deg(const Quaternion& a, const Quaternion& b) {
  const double d = std::min(1.0, std::abs(a.dot(b)));
  return 2.0 * std::acos(d) * 180.0 / M_PI;
}

}  // namespace vlo

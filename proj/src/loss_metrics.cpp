#include "vlo/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace vlo {

namespace {

double sign_align(const PoseSE3& pred, const PoseSE3& gt) {
  return pred.q.dot(gt.q) < 0.0 ? -1.0 : 1.0;
}

}  // namespace

double layer_loss(const PoseSE3& pred, const PoseSE3& gt, double k_x, double k_q) {
  if (std::abs(gt.q.norm() - 1.0) > 1e-6)
    throw std::invalid_argument("layer_loss: gt quaternion not unit");
  const double s = sign_align(pred, gt);
  const double t_res = (gt.t - pred.t).lpNorm<1>();
  const double dw = gt.q.w - s * pred.q.w;
  const double dx = gt.q.x - s * pred.q.x;
  const double dy = gt.q.y - s * pred.q.y;
  const double dz = gt.q.z - s * pred.q.z;
  const double q_res = std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz);
  return t_res * std::exp(-k_x) + k_x + q_res * std::exp(-k_q) + k_q;
}

LayerLossGrads layer_loss_backward(const PoseSE3& pred, const PoseSE3& gt, double k_x,
                                   double k_q, double g_loss) {
  LayerLossGrads out;
  const double s = sign_align(pred, gt);
  const double ekx = std::exp(-k_x), ekq = std::exp(-k_q);

  const Vec3 r = gt.t - pred.t;
  double t_res = 0.0;
  for (int i = 0; i < 3; ++i) {
    t_res += std::abs(r[i]);
    const double sgn = (r[i] > 0.0) ? 1.0 : (r[i] < 0.0 ? -1.0 : 0.0);
    out.g_t[i] = g_loss * (-sgn) * ekx;
  }

  const double dw = gt.q.w - s * pred.q.w;
  const double dx = gt.q.x - s * pred.q.x;
  const double dy = gt.q.y - s * pred.q.y;
  const double dz = gt.q.z - s * pred.q.z;
  const double q_res = std::sqrt(dw * dw + dx * dx + dy * dy + dz * dz);
  if (q_res > 1e-12) {
    const double k = g_loss * ekq * (-s) / q_res;
    out.g_q = {k * dw, k * dx, k * dy, k * dz};
  }
  out.g_k_x = g_loss * (1.0 - t_res * ekx);
  out.g_k_q = g_loss * (1.0 - q_res * ekq);
  return out;
}

double total_loss(const std::vector<double>& per_level, const std::vector<double>& alpha) {
  if (per_level.size() != alpha.size())
    throw std::invalid_argument("total_loss: level count mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < per_level.size(); ++i) acc += alpha[i] * per_level[i];
  return acc;
}

TrajectoryEval kitti_eval(const std::vector<PoseSE3>& gt, const std::vector<PoseSE3>& est,
                          const EvalConfig& cfg) {
  if (gt.size() != est.size())
    throw std::invalid_argument("kitti_eval: trajectory lengths differ");
  if (gt.size() < 2) throw std::invalid_argument("kitti_eval: trajectory too short");

  const int n = static_cast<int>(gt.size());
  std::vector<double> dist(n, 0.0);
  for (int i = 1; i < n; ++i) dist[i] = dist[i - 1] + (gt[i].t - gt[i - 1].t).norm();

  TrajectoryEval ev;
  ev.per_length.resize(cfg.lengths.size());
  for (size_t li = 0; li < cfg.lengths.size(); ++li) ev.per_length[li].length = cfg.lengths[li];

  double t_sum = 0.0, r_sum = 0.0;
  for (int first = 0; first < n; first += cfg.step_frames) {
    for (size_t li = 0; li < cfg.lengths.size(); ++li) {
      const double len = cfg.lengths[li];
      int last = -1;
      for (int i = first; i < n; ++i) {
        if (dist[i] >= dist[first] + len - cfg.boundary_tolerance) {
          last = i;
          break;
        }
      }
      if (last < 0) continue;
      const PoseSE3 delta_gt = compose(inverse(gt[first]), gt[last]);
      const PoseSE3 delta_est = compose(inverse(est[first]), est[last]);
      const PoseSE3 err = compose(inverse(delta_gt), delta_est);
      const double t_err = err.t.norm() / len;
      const Mat3 r = to_rotation_matrix(err.q);
      const double c = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
      const double r_err = std::acos(c) / len;
      t_sum += t_err;
      r_sum += r_err;
      ev.per_length[li].t_err += t_err;
      ev.per_length[li].r_err += r_err;
      ev.per_length[li].pairs += 1;
      ev.pairs += 1;
    }
  }
  if (ev.pairs == 0) {
    std::ostringstream msg;
    msg << "kitti_eval: no segment fits; gt path length " << dist.back()
        << " m, usable lengths:";
    bool any = false;
    for (double len : cfg.lengths)
      if (len <= dist.back() + cfg.boundary_tolerance) {
        msg << " " << len;
        any = true;
      }
    if (!any) msg << " none";
    throw std::runtime_error(msg.str());
  }
  for (auto& st : ev.per_length) {
    if (st.pairs > 0) {
      st.t_err /= st.pairs;
      st.r_err /= st.pairs;
    }
  }
  ev.t_rel_percent = 100.0 * t_sum / ev.pairs;
  ev.r_rel_deg_per_100m = (r_sum / ev.pairs) * (180.0 / M_PI) * 100.0;
  return ev;
}

std::vector<PoseSE3> accumulate_trajectory(const std::vector<PoseSE3>& relative) {
  std::vector<PoseSE3> out;
  out.reserve(relative.size() + 1);
  out.push_back(PoseSE3::identity());
  for (const PoseSE3& rel : relative) out.push_back(compose(out.back(), rel));
  return out;
}

std::string format_eval_report(const TrajectoryEval& ev) {
  std::ostringstream os;
  char buf[160];
  os << "length_m  t_err_%  r_err_deg/100m  pairs\n";
  for (const auto& st : ev.per_length) {
    if (st.pairs == 0) continue;
    std::snprintf(buf, sizeof(buf), "%8.0f  %7.4f  %14.4f  %5d\n", st.length,
                  100.0 * st.t_err, st.r_err * (180.0 / M_PI) * 100.0, st.pairs);
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "mean      %7.4f  %14.4f  %5d\n", ev.t_rel_percent,
                ev.r_rel_deg_per_100m, ev.pairs);
  os << buf;
  std::snprintf(buf, sizeof(buf), "t_rel=%.6f r_rel=%.6f\n", ev.t_rel_percent,
                ev.r_rel_deg_per_100m);
  os << buf;
  return os.str();
}

}  // namespace vlo

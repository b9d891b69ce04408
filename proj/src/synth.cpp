#include "vlo/synth.hpp"

#include "vlo/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

namespace fs = std::filesystem;

namespace vlo {

namespace {

// Smooth deterministic color field over 3D position.
Vec3 color_at(const Vec3& p) {
  const double r = 0.5 + 0.35 * std::sin(0.9 * p.x() + 1.7 * p.y()) +
                   0.15 * std::sin(2.3 * p.z());
  const double g = 0.5 + 0.35 * std::sin(1.3 * p.y() - 0.8 * p.z()) +
                   0.15 * std::sin(1.9 * p.x());
  const double b = 0.5 + 0.35 * std::sin(1.1 * p.z() + 0.6 * p.x()) +
                   0.15 * std::sin(2.7 * p.y());
  return Vec3(std::clamp(r, 0.0, 1.0), std::clamp(g, 0.0, 1.0), std::clamp(b, 0.0, 1.0));
}

Quaternion axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double h = 0.5 * angle;
  Quaternion q{std::cos(h), a.x() * std::sin(h), a.y() * std::sin(h), a.z() * std::sin(h)};
  return normalize(q);
}

// 3x3 point splat render, far points first so near points win overlaps.
Grid render_points(const std::vector<Vec3>& pts, const std::vector<Vec3>& colors,
                   const CameraModel& cam) {
  Grid img(cam.image_height, cam.image_width, 3);
  RowMatrix pixels;
  FusionMask mask;
  project_to_image(pts, cam, pixels, mask);
  std::vector<int> order(pts.size());
  std::iota(order.begin(), order.end(), 0);
  const Mat3 r = to_rotation_matrix(cam.extrinsic.q);
  std::vector<double> depth(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) depth[i] = (r * pts[i] + cam.extrinsic.t).z();
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return depth[a] > depth[b]; });
  for (int idx : order) {
    if (!mask.flags[idx]) continue;
    const int px = static_cast<int>(std::lround(pixels.at(idx, 0)));
    const int py = static_cast<int>(std::lround(pixels.at(idx, 1)));
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = py + dr, cc = px + dc;
        if (rr < 0 || rr >= img.h || cc < 0 || cc >= img.w) continue;
        img.at(rr, cc, 0) = colors[idx].x();
        img.at(rr, cc, 1) = colors[idx].y();
        img.at(rr, cc, 2) = colors[idx].z();
      }
    }
  }
  return img;
}

std::vector<Vec3> sample_frustum_cloud(Rng& rng, int n_points, const CameraModel& cam) {
  const PoseSE3 cam_to_lidar = inverse(cam.extrinsic);
  const Mat3 r = to_rotation_matrix(cam_to_lidar.q);
  std::vector<Vec3> pts(n_points);
  for (int i = 0; i < n_points; ++i) {
    const double margin = 4.0;
    const double u = rng.uniform(margin, cam.image_width - margin);
    const double v = rng.uniform(margin, cam.image_height - margin);
    const double z = rng.uniform(4.0, 20.0);
    const Vec3 pc((u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z);
    pts[i] = r * pc + cam_to_lidar.t;
  }
  return pts;
}

}  // namespace

CameraModel synth_camera(const PipelineConfig& pc) {
  CameraModel cam;
  cam.image_height = pc.pad_height;
  cam.image_width = pc.pad_width;
  cam.fx = cam.fy = 0.75 * pc.pad_width;
  cam.cx = 0.5 * pc.pad_width;
  cam.cy = 0.5 * pc.pad_height;
  cam.z_min = 0.1;
  // LiDAR (x fwd, y left, z up) -> camera (x right, y down, z fwd).
  Mat3 r;
  r << 0, -1, 0, 0, 0, -1, 1, 0, 0;
  cam.extrinsic.q = from_rotation_matrix(r);
  cam.extrinsic.t = Vec3(0.02, -0.05, 0.1);
  return cam;
}

SyntheticPair generate_pair(uint64_t seed, int n_points, const PoseMagnitude& mag,
                            double noise_sigma, const CameraModel& cam) {
  if (n_points < 8) throw std::invalid_argument("generate_pair: need at least 8 points");
  Rng rng(seed);
  SyntheticPair pair;
  pair.seed = seed;
  pair.cam = cam;

  pair.source.points = sample_frustum_cloud(rng, n_points, cam);
  pair.source.intensity.assign(n_points, 0.5f);

  if (mag.rotation_rad == 0.0 && mag.translation_m == 0.0) {
    pair.gt_warp = PoseSE3::identity();
  } else {
    const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    pair.gt_warp.q = axis_angle(axis, mag.rotation_rad);
    const Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    pair.gt_warp.t = mag.translation_m * dir.normalized();
  }

  pair.target.points = transform_points(pair.gt_warp, pair.source.points);
  if (noise_sigma > 0.0) {
    for (Vec3& p : pair.target.points)
      p += noise_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
  }
  pair.target.intensity = pair.source.intensity;

  std::vector<Vec3> colors(n_points);
  for (int i = 0; i < n_points; ++i) colors[i] = color_at(pair.source.points[i]);
  pair.source_image = render_points(pair.source.points, colors, cam);
  pair.target_image = render_points(pair.target.points, colors, cam);
  return pair;
}

FrameInput to_frame_input(const LidarScan& scan, const Grid& camera_image,
                          const CameraModel& cam, const PipelineConfig& pc) {
  FrameInput in;
  in.scan = scan;
  in.image = pad_image(camera_image, pc.pad_height, pc.pad_width);
  in.cam = cam;
  return in;
}

void write_synth_sequence(const std::string& root, const std::string& id, uint64_t seed,
                          int n_frames, int n_points, const PoseMagnitude& per_frame_motion,
                          const PipelineConfig& pc) {
  if (n_frames < 2) throw std::invalid_argument("write_synth_sequence: need >= 2 frames");
  const CameraModel cam = synth_camera(pc);
  Rng rng(seed);

  // World cloud fixed in frame-0 coordinates.
  std::vector<Vec3> world = sample_frustum_cloud(rng, n_points, cam);
  std::vector<Vec3> colors(world.size());
  for (size_t i = 0; i < world.size(); ++i) colors[i] = color_at(world[i]);

  // Constant per-frame ego motion (LiDAR frame): frame i sees the world
  // through the inverse of its accumulated pose.
  PoseSE3 step;
  if (per_frame_motion.rotation_rad != 0.0 || per_frame_motion.translation_m != 0.0) {
    const Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    step.q = axis_angle(axis, per_frame_motion.rotation_rad);
    const Vec3 dir(rng.normal(), rng.normal(), rng.normal());
    step.t = per_frame_motion.translation_m * dir.normalized();
  }

  const fs::path seq = fs::path(root) / "sequences" / id;
  fs::create_directories(seq / "velodyne");
  fs::create_directories(seq / "image_2");
  fs::create_directories(fs::path(root) / "poses");
  save_calib((seq / "calib.txt").string(), cam);

  PoseSE3 lidar_pose = PoseSE3::identity();  // frame i in frame-0 coords
  std::vector<PoseSE3> cam_traj;
  char name[32];
  for (int i = 0; i < n_frames; ++i) {
    const PoseSE3 world_to_frame = inverse(lidar_pose);
    LidarScan scan;
    scan.points = transform_points(world_to_frame, world);
    scan.intensity.assign(world.size(), 0.5f);
    std::snprintf(name, sizeof(name), "%06d", i);
    save_scan((seq / "velodyne" / (std::string(name) + ".bin")).string(), scan);
    const Grid img = render_points(scan.points, colors, cam);
    save_ppm((seq / "image_2" / (std::string(name) + ".ppm")).string(), img);

    // Cam-frame pose of this frame: conjugate the LiDAR pose.
    const PoseSE3& tr = cam.extrinsic;
    cam_traj.push_back(compose(tr, compose(lidar_pose, inverse(tr))));
    lidar_pose = compose(lidar_pose, step);
  }
  save_poses((fs::path(root) / "poses" / (id + ".txt")).string(), cam_traj);
}

}  // namespace vlo

#include "vlo/dataio.hpp"

#include "vlo/image_io.hpp"
#include "vlo/log.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace vlo {

LidarScan load_scan(const std::string& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("load_scan: cannot open " + path);
  const std::streamoff bytes = f.tellg();
  if (bytes == 0) throw std::runtime_error("load_scan: empty file " + path);
  if (bytes % 16 != 0)
    throw std::runtime_error("load_scan: truncated file " + path + " (" +
                             std::to_string(bytes) + " bytes, not a multiple of 16)");
  f.seekg(0);
  const size_t n = static_cast<size_t>(bytes) / 16;
  std::vector<float> buf(n * 4);
  f.read(reinterpret_cast<char*>(buf.data()), bytes);
  if (!f) throw std::runtime_error("load_scan: short read from " + path);
  LidarScan scan;
  scan.points.resize(n);
  scan.intensity.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const float x = buf[4 * i], y = buf[4 * i + 1], z = buf[4 * i + 2], r = buf[4 * i + 3];
    if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z) || !std::isfinite(r))
      throw std::runtime_error("load_scan: non-finite value at byte offset " +
                               std::to_string(16 * i) + " in " + path);
    scan.points[i] = Vec3(x, y, z);
    scan.intensity[i] = r;
  }
  return scan;
}

void save_scan(const std::string& path, const LidarScan& scan) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_scan: cannot write " + path);
  std::vector<float> buf(scan.points.size() * 4);
  for (size_t i = 0; i < scan.points.size(); ++i) {
    buf[4 * i] = static_cast<float>(scan.points[i].x());
    buf[4 * i + 1] = static_cast<float>(scan.points[i].y());
    buf[4 * i + 2] = static_cast<float>(scan.points[i].z());
    buf[4 * i + 3] = scan.intensity.empty() ? 0.0f : scan.intensity[i];
  }
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("save_scan: short write to " + path);
}

namespace {

// Parses "KEY: v0 v1 ... v11" into a row-major 3x4.
bool parse_calib_line(const std::string& line, const std::string& key, double out[12]) {
  std::istringstream ss(line);
  std::string k;
  ss >> k;
  if (k != key + ":") return false;
  for (int i = 0; i < 12; ++i) {
    if (!(ss >> out[i])) throw std::runtime_error("load_calib: short " + key + " line");
  }
  return true;
}

PoseSE3 pose_from_3x4(const double m[12], double tolerance, double* correction_out) {
  Mat3 r;
  r << m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10];
  double correction = 0.0;
  const Mat3 rn = nearest_rotation(r, &correction);
  if (correction > tolerance)
    throw std::runtime_error("pose_from_3x4: rotation correction " +
                             std::to_string(correction) + " exceeds tolerance");
  if (correction_out) *correction_out = std::max(*correction_out, correction);
  PoseSE3 p;
  p.q = from_rotation_matrix(rn);
  p.t = Vec3(m[3], m[7], m[11]);
  return p;
}

}  // namespace

CameraModel load_calib(const std::string& path, int image_width, int image_height) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_calib: cannot open " + path);
  double p2[12], tr[12];
  bool have_p2 = false, have_tr = false;
  std::string line;
  while (std::getline(f, line)) {
    if (!have_p2 && parse_calib_line(line, "P2", p2)) have_p2 = true;
    if (!have_tr && parse_calib_line(line, "Tr", tr)) have_tr = true;
  }
  if (!have_p2) throw std::runtime_error("load_calib: missing P2 line in " + path);
  if (!have_tr) throw std::runtime_error("load_calib: missing Tr line in " + path);

  CameraModel cam;
  cam.fx = p2[0];
  cam.fy = p2[5];
  cam.cx = p2[2];
  cam.cy = p2[6];
  cam.image_width = image_width;
  cam.image_height = image_height;
  const PoseSE3 velo_to_cam0 = pose_from_3x4(tr, 1e-2, nullptr);
  PoseSE3 baseline = PoseSE3::identity();
  baseline.t = Vec3(p2[3] / cam.fx, 0.0, 0.0);
  cam.extrinsic = compose(baseline, velo_to_cam0);
  return cam;
}

void save_calib(const std::string& path, const CameraModel& cam) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_calib: cannot write " + path);
  char buf[700];
  // P2 carries the baseline offset as P2[0,3] = b_x * fx; Tr is the raw
  // LiDAR->cam0 extrinsic. load_calib composes them back.
  std::snprintf(buf, sizeof(buf), "P2: %.17g 0 %.17g 0 0 %.17g %.17g 0 0 0 1 0\n", cam.fx,
                cam.cx, cam.fy, cam.cy);
  f << buf;
  const Mat3 r = to_rotation_matrix(cam.extrinsic.q);
  const Vec3& t = cam.extrinsic.t;
  std::snprintf(buf, sizeof(buf),
                "Tr: %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                r(0, 0), r(0, 1), r(0, 2), t.x(), r(1, 0), r(1, 1), r(1, 2), t.y(), r(2, 0),
                r(2, 1), r(2, 2), t.z());
  f << buf;
}

std::vector<PoseSE3> load_gt_poses(const std::string& path, double tolerance) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_gt_poses: cannot open " + path);
  std::vector<PoseSE3> out;
  std::string line;
  double max_correction = 0.0;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    double m[12];
    for (int i = 0; i < 12; ++i) {
      if (!(ss >> m[i]))
        throw std::runtime_error("load_gt_poses: line " + std::to_string(line_no) +
                                 " has fewer than 12 values in " + path);
    }
    try {
      out.push_back(pose_from_3x4(m, tolerance, &max_correction));
    } catch (const std::exception& e) {
      throw std::runtime_error("load_gt_poses: line " + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  if (out.empty()) throw std::runtime_error("load_gt_poses: no poses in " + path);
  log().debug("load_gt_poses: {} poses, max rotation correction {:.3e}", out.size(),
              max_correction);
  return out;
}

void save_poses(const std::string& path, const std::vector<PoseSE3>& poses) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_poses: cannot write " + path);
  for (const PoseSE3& p : poses) f << to_kitti_line(p) << "\n";
}

KittiSequence::KittiSequence(const std::string& root, const std::string& id)
    : root_(root), id_(id) {
  const fs::path seq = fs::path(root) / "sequences" / id;
  const fs::path velo = seq / "velodyne";
  const fs::path img = seq / "image_2";
  if (!fs::is_directory(velo))
    throw std::runtime_error("KittiSequence: missing directory " + velo.string());
  if (!fs::is_directory(img))
    throw std::runtime_error("KittiSequence: missing directory " + img.string());
  for (const auto& e : fs::directory_iterator(velo))
    if (e.path().extension() == ".bin") scan_paths_.push_back(e.path().string());
  for (const auto& e : fs::directory_iterator(img)) {
    const auto ext = e.path().extension();
    if (ext == ".png" || ext == ".ppm") image_paths_.push_back(e.path().string());
  }
  std::sort(scan_paths_.begin(), scan_paths_.end());
  std::sort(image_paths_.begin(), image_paths_.end());
  if (scan_paths_.empty()) throw std::runtime_error("KittiSequence: no scans in " + velo.string());
  if (scan_paths_.size() != image_paths_.size())
    throw std::runtime_error("KittiSequence: scan count " + std::to_string(scan_paths_.size()) +
                             " != image count " + std::to_string(image_paths_.size()));

  const Grid first = load_image(image_paths_[0]);
  cam_ = load_calib((seq / "calib.txt").string(), first.w, first.h);

  const fs::path gt = fs::path(root) / "poses" / (id + ".txt");
  if (fs::exists(gt)) {
    gt_poses_ = load_gt_poses(gt.string());
    if (gt_poses_.size() != scan_paths_.size())
      throw std::runtime_error("KittiSequence: gt pose count mismatch");
  }
}

LidarScan KittiSequence::scan(int i) const { return load_scan(scan_paths_.at(i)); }

Grid KittiSequence::image(int i) const { return load_image(image_paths_.at(i)); }

PoseSE3 KittiSequence::gt_warp_pose(int i) const {
  if (!has_gt()) throw std::runtime_error("KittiSequence: no ground truth");
  // Warp source (frame i) coordinates into frame i+1: cam_{i+1}^-1 cam_i,
  // conjugated into the LiDAR frame through the extrinsic.
  const PoseSE3& tr = cam_.extrinsic;
  const PoseSE3 cam_rel = compose(inverse(gt_poses_.at(i + 1)), gt_poses_.at(i));
  return compose(inverse(tr), compose(cam_rel, tr));
}

PoseSE3 warp_to_cam_motion(const PoseSE3& warp, const PoseSE3& lidar_to_cam) {
  // warp maps source->target in the LiDAR frame; the cam-frame ego motion is
  // the conjugated inverse.
  return compose(lidar_to_cam, compose(inverse(warp), inverse(lidar_to_cam)));
}

}  // namespace vlo

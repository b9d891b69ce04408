#pragma once

#include "vlo/config.hpp"
#include "vlo/projection.hpp"

#include <string>
#include <vector>

namespace vlo {

// KITTI velodyne binary scan: little-endian float32 quadruples (x, y, z, r).
LidarScan load_scan(const std::string& path);
void save_scan(const std::string& path, const LidarScan& scan);

// KITTI odometry calib file: needs the "P2:" and "Tr:" lines. Intrinsics come
// from P2; the extrinsic composes Tr with the P2 baseline offset
// b_x = P2[0,3]/fx applied in the camera frame. Image dims are supplied by the
// caller (KITTI calib files do not carry them).
CameraModel load_calib(const std::string& path, int image_width, int image_height);
void save_calib(const std::string& path, const CameraModel& cam);

// One pose per line, 12 floats row-major [R|t]. Rotations are projected to the
// nearest rotation matrix; corrections above `tolerance` raise an error.
std::vector<PoseSE3> load_gt_poses(const std::string& path, double tolerance = 1e-2);
void save_poses(const std::string& path, const std::vector<PoseSE3>& poses);

// KITTI odometry directory layout:
//   <root>/sequences/<id>/velodyne/NNNNNN.bin
//   <root>/sequences/<id>/image_2/NNNNNN.png (or .ppm)
//   <root>/sequences/<id>/calib.txt
//   <root>/poses/<id>.txt (optional)
class KittiSequence {
 public:
  KittiSequence(const std::string& root, const std::string& id);

  int frame_count() const { return static_cast<int>(scan_paths_.size()); }
  bool has_gt() const { return !gt_poses_.empty(); }

  LidarScan scan(int i) const;
  Grid image(int i) const;  // raw, unpadded
  const CameraModel& camera() const { return cam_; }
  const std::vector<PoseSE3>& gt_poses() const { return gt_poses_; }

  // Ground-truth label for warping frame i points into frame i+1: the
  // camera-frame relative motion conjugated into the LiDAR frame.
  PoseSE3 gt_warp_pose(int i) const;

  const std::string& id() const { return id_; }

 private:
  std::string root_, id_;
  std::vector<std::string> scan_paths_, image_paths_;
  CameraModel cam_;
  std::vector<PoseSE3> gt_poses_;
};

// cam-frame relative motion of `warp` (a LiDAR-frame source->target transform)
// for trajectory accumulation in the KITTI ground-truth convention.
PoseSE3 warp_to_cam_motion(const PoseSE3& warp, const PoseSE3& lidar_to_cam);

}  // namespace vlo

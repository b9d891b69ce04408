#pragma once

#include "vlo/geometry.hpp"
#include "vlo/tensor.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace vlo {

// Coordinates follow the usual spinning-LiDAR convention: x forward, y left,
// z up, meters.
struct LidarScan {
  std::vector<Vec3> points;
  std::vector<float> intensity;  // optional, empty or one value per point

  int size() const { return static_cast<int>(points.size()); }
};

struct CylindricalConfig {
  double delta_theta = 2.0 * M_PI / 1800.0;  // radians per column
  double delta_phi = 0.0;                    // radians per row
  int width = 1800;
  int height = 64;
  double vertical_offset = 0.0;  // elevation of the top beam (row 0), radians

  // 64 x 1800 grid spanning the HDL-64E beam fan (+2.0 deg .. -24.8 deg).
  static CylindricalConfig hdl64();
  // Arbitrary grid over an elevation span given in degrees.
  static CylindricalConfig make(int height, int width, double min_elev_deg,
                                double max_elev_deg);

  void validate() const;
};

struct PseudoImage {
  int h = 0, w = 0;
  Grid xyz;                        // h x w x 3, (0,0,0) where unoccupied
  std::vector<uint8_t> occupancy;  // h*w
  std::vector<int32_t> point_index;  // h*w, index into the source scan, -1 if empty
  int dropped_out_of_range = 0;
  int dropped_zero_range = 0;

  PseudoImage() = default;
  PseudoImage(int h_, int w_)
      : h(h_), w(w_), xyz(h_, w_, 3), occupancy(static_cast<size_t>(h_) * w_, 0),
        point_index(static_cast<size_t>(h_) * w_, -1) {}

  bool occupied(int r, int c) const { return occupancy[static_cast<size_t>(r) * w + c] != 0; }
  int32_t index_at(int r, int c) const { return point_index[static_cast<size_t>(r) * w + c]; }
  Vec3 point_at(int r, int c) const {
    return Vec3(xyz.at(r, c, 0), xyz.at(r, c, 1), xyz.at(r, c, 2));
  }
  int count_occupied() const;
};

// Pinhole camera with z forward, x right, y down. `extrinsic` maps LiDAR-frame
// points into the camera frame.
struct CameraModel {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int image_width = 0, image_height = 0;
  PoseSE3 extrinsic;
  double z_min = 0.1;  // near-plane cutoff for the fusion mask

  void validate() const;
};

struct FusionMask {
  std::vector<uint8_t> flags;  // one per point, true = usable image correspondence

  int count_true() const;
};

// Grid cell of a point under the cylindrical map; returns false when the
// elevation row falls outside [0, height) or the point sits at the origin.
bool cylindrical_cell(const Vec3& p, const CylindricalConfig& cfg, int& row, int& col);

// Eq-style cylindrical projection. Collisions keep the smaller range, ties the
// lower point index; dropped points are counted on the output.
PseudoImage cylindrical_project(const LidarScan& scan, const CylindricalConfig& cfg);

// Projects every point into the image; pixel coords are reported for all
// points, the mask marks those inside bounds with depth > z_min.
void project_to_image(const std::vector<Vec3>& points, const CameraModel& cam,
                      RowMatrix& pixels, FusionMask& mask);

// Scatter of scan-aligned rows: occupied cell (r,c) receives
// values[point_index(r,c)], unoccupied cells stay zero.
Grid scatter_to_pseudo_image(const RowMatrix& values, const PseudoImage& pseudo);

// Inverse gather into scan-aligned rows; rows of points that lost their cell
// (or never landed) stay zero.
RowMatrix gather_from_pseudo_image(const Grid& grid, const PseudoImage& pseudo, int n_points);

// Survivor-order variants: row i corresponds to the i-th occupied cell in
// row-major order, the canonical point order used by the pipeline levels.
Grid scatter_rows_to_grid(const RowMatrix& values, const PseudoImage& pseudo);
RowMatrix gather_rows_from_grid(const Grid& grid, const PseudoImage& pseudo);

}  // namespace vlo

#include "vlo/projection.hpp"

#include "vlo/log.hpp"

#include <cmath>
#include <stdexcept>

namespace vlo {

CylindricalConfig CylindricalConfig::hdl64() { return make(64, 1800, -24.8, 2.0); }

CylindricalConfig CylindricalConfig::make(int height, int width, double min_elev_deg,
                                          double max_elev_deg) {
  CylindricalConfig cfg;
  cfg.height = height;
  cfg.width = width;
  cfg.delta_theta = 2.0 * M_PI / width;
  cfg.delta_phi = (max_elev_deg - min_elev_deg) * M_PI / 180.0 / height;
  cfg.vertical_offset = max_elev_deg * M_PI / 180.0;
  return cfg;
}

void CylindricalConfig::validate() const {
  if (height < 1 || width < 1)
    throw std::invalid_argument("CylindricalConfig: grid dims must be >= 1");
  if (!(delta_theta > 0.0) || !(delta_phi > 0.0))
    throw std::invalid_argument("CylindricalConfig: resolutions must be positive");
  // The azimuth sweep must tile the full circle to within one column.
  if (std::abs(width * delta_theta - 2.0 * M_PI) > delta_theta)
    throw std::invalid_argument("CylindricalConfig: width*delta_theta does not cover 2*pi");
}

int PseudoImage::count_occupied() const {
  int n = 0;
  for (uint8_t o : occupancy) n += (o != 0);
  return n;
}

bool cylindrical_cell(const Vec3& p, const CylindricalConfig& cfg, int& row, int& col) {
  const double range = p.norm();
  if (range <= 0.0) return false;
  // Azimuth: two-argument atan2 over the full circle, negative columns wrap.
  const double u = std::atan2(p.y(), p.x()) / cfg.delta_theta;
  int c = static_cast<int>(std::floor(u));
  c %= cfg.width;
  if (c < 0) c += cfg.width;
  // Elevation measured down from the top beam.
  const double phi = std::asin(p.z() / range);
  const int r = static_cast<int>(std::floor((cfg.vertical_offset - phi) / cfg.delta_phi));
  if (r < 0 || r >= cfg.height) return false;
  row = r;
  col = c;
  return true;
}

PseudoImage cylindrical_project(const LidarScan& scan, const CylindricalConfig& cfg) {
  cfg.validate();
  if (scan.size() < 1) throw std::invalid_argument("cylindrical_project: empty scan");
  PseudoImage out(cfg.height, cfg.width);
  std::vector<double> best_range(static_cast<size_t>(cfg.height) * cfg.width, 0.0);
  for (int i = 0; i < scan.size(); ++i) {
    const Vec3& p = scan.points[i];
    if (!p.allFinite()) throw std::invalid_argument("cylindrical_project: non-finite point");
    const double range = p.norm();
    if (range <= 0.0) {
      ++out.dropped_zero_range;
      continue;
    }
    int r, c;
    if (!cylindrical_cell(p, cfg, r, c)) {
      ++out.dropped_out_of_range;
      continue;
    }
    const size_t cell = static_cast<size_t>(r) * cfg.width + c;
    // Nearest range wins; ties keep the earlier point.
    if (out.occupancy[cell] && best_range[cell] <= range) continue;
    out.occupancy[cell] = 1;
    out.point_index[cell] = i;
    best_range[cell] = range;
    out.xyz.at(r, c, 0) = p.x();
    out.xyz.at(r, c, 1) = p.y();
    out.xyz.at(r, c, 2) = p.z();
  }
  if (out.dropped_zero_range > 0)
    log().debug("cylindrical_project: dropped {} zero-range points", out.dropped_zero_range);
  return out;
}

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw std::invalid_argument("CameraModel: focal lengths must be positive");
  if (image_width <= 0 || image_height <= 0)
    throw std::invalid_argument("CameraModel: image dims must be positive");
}

int FusionMask::count_true() const {
  int n = 0;
  for (uint8_t f : flags) n += (f != 0);
  return n;
}

void project_to_image(const std::vector<Vec3>& points, const CameraModel& cam,
                      RowMatrix& pixels, FusionMask& mask) {
  cam.validate();
  const int n = static_cast<int>(points.size());
  pixels = RowMatrix(n, 2);
  mask.flags.assign(n, 0);
  const Mat3 r = to_rotation_matrix(cam.extrinsic.q);
  for (int i = 0; i < n; ++i) {
    const Vec3 pc = r * points[i] + cam.extrinsic.t;
    const double z = pc.z();
    // Coordinates are reported even when masked out (no z-buffering here);
    // a degenerate depth only voids the flag.
    double px = 0.0, py = 0.0;
    if (std::abs(z) > 1e-300) {
      px = cam.fx * pc.x() / z + cam.cx;
      py = cam.fy * pc.y() / z + cam.cy;
    }
    pixels.at(i, 0) = px;
    pixels.at(i, 1) = py;
    const bool ok = z >= cam.z_min && px >= 0.0 && px < cam.image_width && py >= 0.0 &&
                    py < cam.image_height;
    mask.flags[i] = ok ? 1 : 0;
  }
}

Grid scatter_to_pseudo_image(const RowMatrix& values, const PseudoImage& pseudo) {
  Grid out(pseudo.h, pseudo.w, values.c);
  for (int r = 0; r < pseudo.h; ++r) {
    for (int c = 0; c < pseudo.w; ++c) {
      const int32_t idx = pseudo.index_at(r, c);
      if (idx < 0) continue;
      if (idx >= values.n)
        throw std::invalid_argument("scatter_to_pseudo_image: values rows do not cover scan");
      for (int ch = 0; ch < values.c; ++ch) out.at(r, c, ch) = values.at(idx, ch);
    }
  }
  return out;
}

RowMatrix gather_from_pseudo_image(const Grid& grid, const PseudoImage& pseudo, int n_points) {
  if (grid.h != pseudo.h || grid.w != pseudo.w)
    throw std::invalid_argument("gather_from_pseudo_image: grid shape mismatch");
  RowMatrix out(n_points, grid.c);
  for (int r = 0; r < pseudo.h; ++r) {
    for (int c = 0; c < pseudo.w; ++c) {
      const int32_t idx = pseudo.index_at(r, c);
      if (idx < 0) continue;
      if (idx >= n_points)
        throw std::invalid_argument("gather_from_pseudo_image: point index out of range");
      for (int ch = 0; ch < grid.c; ++ch) out.at(idx, ch) = grid.at(r, c, ch);
    }
  }
  return out;
}

Grid scatter_rows_to_grid(const RowMatrix& values, const PseudoImage& pseudo) {
  Grid out(pseudo.h, pseudo.w, values.c);
  int row = 0;
  for (int r = 0; r < pseudo.h; ++r) {
    for (int c = 0; c < pseudo.w; ++c) {
      if (!pseudo.occupied(r, c)) continue;
      if (row >= values.n)
        throw std::invalid_argument("scatter_rows_to_grid: fewer rows than occupied cells");
      for (int ch = 0; ch < values.c; ++ch) out.at(r, c, ch) = values.at(row, ch);
      ++row;
    }
  }
  if (row != values.n)
    throw std::invalid_argument("scatter_rows_to_grid: row count != occupied cells");
  return out;
}

RowMatrix gather_rows_from_grid(const Grid& grid, const PseudoImage& pseudo) {
  if (grid.h != pseudo.h || grid.w != pseudo.w)
    throw std::invalid_argument("gather_rows_from_grid: grid shape mismatch");
  RowMatrix out(pseudo.count_occupied(), grid.c);
  int row = 0;
  for (int r = 0; r < pseudo.h; ++r) {
    for (int c = 0; c < pseudo.w; ++c) {
      if (!pseudo.occupied(r, c)) continue;
      for (int ch = 0; ch < grid.c; ++ch) out.at(row, ch) = grid.at(r, c, ch);
      ++row;
    }
  }
  return out;
}

}  // namespace vlo

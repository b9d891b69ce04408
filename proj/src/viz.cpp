#include "vlo/viz.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vlo {

namespace {

Vec3 palette_color(int index) {
  // Golden-ratio hue walk, full saturation HSV -> RGB.
  const double h = std::fmod(0.13 + 0.61803398875 * index, 1.0) * 6.0;
  const int sector = static_cast<int>(h);
  const double f = h - sector;
  const double p = 0.25, q = 1.0 - 0.75 * f, t = 0.25 + 0.75 * f;
  switch (sector % 6) {
    case 0: return {1.0, t, p};
    case 1: return {q, 1.0, p};
    case 2: return {p, 1.0, t};
    case 3: return {p, q, 1.0};
    case 4: return {t, p, 1.0};
    default: return {1.0, p, q};
  }
}

void draw_line(Grid& img, double x0, double y0, double x1, double y1, const Vec3& color) {
  const int steps = static_cast<int>(std::max(std::abs(x1 - x0), std::abs(y1 - y0))) + 1;
  for (int s = 0; s <= steps; ++s) {
    const double f = static_cast<double>(s) / steps;
    const int x = static_cast<int>(std::lround(x0 + f * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + f * (y1 - y0)));
    if (x < 0 || x >= img.w || y < 0 || y >= img.h) continue;
    img.at(y, x, 0) = color.x();
    img.at(y, x, 1) = color.y();
    img.at(y, x, 2) = color.z();
  }
}

struct Bounds {
  double min_u = 0, max_u = 1, min_v = 0, max_v = 1;

  void grow(double u, double v) {
    min_u = std::min(min_u, u);
    max_u = std::max(max_u, u);
    min_v = std::min(min_v, v);
    max_v = std::max(max_v, v);
  }
};

}  // namespace

Grid render_cluster_overlay(const Grid& image, const LocalFuseCache& cache, int map_h,
                            int map_w, int stride) {
  if (image.c != 3) throw std::invalid_argument("render_cluster_overlay: need RGB image");
  Grid out = image;
  for (int p = 0; p < map_h * map_w; ++p) {
    const int32_t center = cache.assignment.center_of[p];
    if (center < 0) continue;
    const Vec3 color = palette_color(center);
    const int fr = p / map_w, fc = p % map_w;
    for (int dr = 0; dr < stride; ++dr) {
      for (int dc = 0; dc < stride; ++dc) {
        const int r = fr * stride + dr, c = fc * stride + dc;
        if (r >= out.h || c >= out.w) continue;
        const double gray =
            0.299 * image.at(r, c, 0) + 0.587 * image.at(r, c, 1) + 0.114 * image.at(r, c, 2);
        out.at(r, c, 0) = 0.5 * gray + 0.5 * color.x();
        out.at(r, c, 1) = 0.5 * gray + 0.5 * color.y();
        out.at(r, c, 2) = 0.5 * gray + 0.5 * color.z();
      }
    }
  }
  // Center markers.
  for (int k = 0; k < cache.center_pixels.n; ++k) {
    const int c = static_cast<int>(std::lround(cache.center_pixels.at(k, 0) * stride));
    const int r = static_cast<int>(std::lround(cache.center_pixels.at(k, 1) * stride));
    for (int dr = -1; dr <= 1; ++dr) {
      for (int dc = -1; dc <= 1; ++dc) {
        const int rr = r + dr, cc = c + dc;
        if (rr < 0 || rr >= out.h || cc < 0 || cc >= out.w) continue;
        out.at(rr, cc, 0) = 1.0;
        out.at(rr, cc, 1) = 0.0;
        out.at(rr, cc, 2) = 0.0;
      }
    }
  }
  return out;
}

Grid render_trajectory_plot(const std::vector<PoseSE3>& gt, const std::vector<PoseSE3>& est,
                            int panel_size) {
  const int ps = panel_size;
  Grid img(ps, 2 * ps, 3);
  for (double& v : img.v) v = 1.0;  // white background

  // Panel 0: top-down (x, z). Panel 1: projected 3D (x + 0.4y, z - 0.4y).
  for (int panel = 0; panel < 2; ++panel) {
    auto project = [panel](const PoseSE3& p) {
      if (panel == 0) return std::pair<double, double>(p.t.x(), p.t.z());
      return std::pair<double, double>(p.t.x() + 0.4 * p.t.y(), p.t.z() - 0.4 * p.t.y());
    };
    Bounds b;
    bool first = true;
    for (const auto* traj : {&gt, &est}) {
      for (const PoseSE3& p : *traj) {
        auto [u, v] = project(p);
        if (first) {
          b = Bounds{u, u, v, v};
          first = false;
        } else {
          b.grow(u, v);
        }
      }
    }
    const double span_u = std::max(b.max_u - b.min_u, 1e-6);
    const double span_v = std::max(b.max_v - b.min_v, 1e-6);
    const double scale = 0.9 * ps / std::max(span_u, span_v);
    auto to_px = [&](double u, double v) {
      const double x = panel * ps + 0.5 * ps + (u - 0.5 * (b.min_u + b.max_u)) * scale;
      const double y = 0.5 * ps - (v - 0.5 * (b.min_v + b.max_v)) * scale;
      return std::pair<double, double>(x, y);
    };
    const Vec3 gt_color(0.1, 0.2, 0.9), est_color(0.9, 0.15, 0.1);
    for (int which = 0; which < 2; ++which) {
      const auto& traj = which == 0 ? gt : est;
      const Vec3& color = which == 0 ? gt_color : est_color;
      for (size_t i = 1; i < traj.size(); ++i) {
        auto [u0, v0] = project(traj[i - 1]);
        auto [u1, v1] = project(traj[i]);
        auto [x0, y0] = to_px(u0, v0);
        auto [x1, y1] = to_px(u1, v1);
        draw_line(img, x0, y0, x1, y1, color);
      }
    }
  }
  return img;
}

}  // namespace vlo

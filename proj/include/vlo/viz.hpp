#pragma once

#include "vlo/geometry.hpp"
#include "vlo/local_fuser.hpp"
#include "vlo/tensor.hpp"

#include <vector>

namespace vlo {

// Paints each feature-map cell by its assigned cluster center (stride x stride
// image block, blended over the grayscale image); centers get red markers.
// Unassigned cells keep the original pixels.
Grid render_cluster_overlay(const Grid& image, const LocalFuseCache& cache, int map_h,
                            int map_w, int stride);

// Side-by-side 2D top-down (x/z) and projected 3D views of the trajectories;
// gt drawn first (blue), estimate over it (red). gt may be empty.
Grid render_trajectory_plot(const std::vector<PoseSE3>& gt, const std::vector<PoseSE3>& est,
                            int panel_size = 400);

}  // namespace vlo

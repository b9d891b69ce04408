#pragma once

#include "vlo/nn.hpp"
#include "vlo/projection.hpp"

#include <string>
#include <vector>

namespace vlo {

// Adaptive per-cell fusion of point features with (aligned) local fused
// features on the pseudo-image grid.
struct GlobalFuserConfig {
  std::string prefix;  // e.g. "global_fuser.level0"
  int c_local = 0;     // channels of the local fused grid
  int d = 0;           // channels of the point feature grid

  MlpSpec gate_point_spec() const { return {prefix + ".gate_point", {d, std::max(d / 2, 2), d}}; }
  MlpSpec gate_local_spec() const { return {prefix + ".gate_local", {d, std::max(d / 2, 2), d}}; }
};

// Adds <prefix>.align (dense c_local -> d) and the two gate MLPs (d -> d/2 -> d).
void register_global_fuser(ParamStore& ps, Rng& rng, const GlobalFuserConfig& cfg);

struct GlobalFuseCache {
  std::vector<int> cells;             // flat cell index per output row
  RowMatrix aligned;                  // F_L' per row
  RowMatrix gate_point, gate_local;   // sigmoid outputs per row
  std::vector<MlpCache> mlp_point, mlp_local;
  std::vector<uint8_t> fused_flag;    // per row, false = mask bypass (F_G = F_P)
};

// F_G per occupied cell, row-major cell order. Cells whose fusion-mask flag is
// false bypass the gates and copy the point feature row.
RowMatrix global_fuse(const Grid& f_p, const Grid& f_l, const std::vector<uint8_t>& occupancy,
                      const std::vector<uint8_t>& mask_grid, const ParamStore& ps,
                      const GlobalFuserConfig& cfg, GlobalFuseCache* cache);

// Accumulates into gate/align params and the two input grids.
void global_fuse_backward(const Grid& f_p, const Grid& f_l, const ParamStore& ps,
                          const GlobalFuserConfig& cfg, const GlobalFuseCache& cache,
                          const RowMatrix& g_out, ParamStore& grads, Grid* g_f_p, Grid* g_f_l);

}  // namespace vlo

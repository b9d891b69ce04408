#include "vlo/global_fuser.hpp"

#include <cmath>
#include <stdexcept>

namespace vlo {

namespace {
constexpr double kDenomEps = 1e-12;
}

void register_global_fuser(ParamStore& ps, Rng& rng, const GlobalFuserConfig& cfg) {
  register_dense(ps, rng, cfg.prefix + ".align", cfg.d, cfg.c_local);
  register_mlp(ps, rng, cfg.gate_point_spec());
  register_mlp(ps, rng, cfg.gate_local_spec());
}

RowMatrix global_fuse(const Grid& f_p, const Grid& f_l, const std::vector<uint8_t>& occupancy,
                      const std::vector<uint8_t>& mask_grid, const ParamStore& ps,
                      const GlobalFuserConfig& cfg, GlobalFuseCache* cache) {
  if (f_p.h != f_l.h || f_p.w != f_l.w)
    throw std::invalid_argument("global_fuse: grids must share spatial dims");
  if (f_p.c != cfg.d || f_l.c != cfg.c_local)
    throw std::invalid_argument("global_fuse: channel mismatch");
  if (occupancy.size() != static_cast<size_t>(f_p.h) * f_p.w ||
      mask_grid.size() != occupancy.size())
    throw std::invalid_argument("global_fuse: flag grids mismatch");

  const Tensor& aw = ps.at(cfg.prefix + ".align.weight");
  const Tensor& ab = ps.at(cfg.prefix + ".align.bias");
  const MlpSpec spec_p = cfg.gate_point_spec();
  const MlpSpec spec_l = cfg.gate_local_spec();

  std::vector<int> cells;
  for (int r = 0; r < f_p.h; ++r)
    for (int c = 0; c < f_p.w; ++c)
      if (occupancy[static_cast<size_t>(r) * f_p.w + c])
        cells.push_back(r * f_p.w + c);

  const int n = static_cast<int>(cells.size());
  const int d = cfg.d;
  RowMatrix out(n, d);
  RowMatrix aligned(n, d), gate_p(n, d), gate_l(n, d);
  std::vector<MlpCache> mlp_p, mlp_l;
  std::vector<uint8_t> fused_flag(n, 0);
  if (cache) {
    mlp_p.resize(n);
    mlp_l.resize(n);
  }

  std::vector<double> zbuf(d);
  MlpCache scratch;
  for (int i = 0; i < n; ++i) {
    const int cell = cells[i];
    const int r = cell / f_p.w, c = cell % f_p.w;
    const double* fp = f_p.v.data() + f_p.idx(r, c, 0);
    if (!mask_grid[cell]) {
      // No image correspondence: the point branch passes through untouched.
      for (int ch = 0; ch < d; ++ch) out.at(i, ch) = fp[ch];
      continue;
    }
    fused_flag[i] = 1;
    const double* fl = f_l.v.data() + f_l.idx(r, c, 0);
    dense_forward(aw, ab, fl, aligned.row(i));

    mlp_forward(ps, spec_p, fp, zbuf.data(), cache ? &mlp_p[i] : nullptr);
    for (int ch = 0; ch < d; ++ch) gate_p.at(i, ch) = sigmoid(zbuf[ch]);
    mlp_forward(ps, spec_l, aligned.row(i), zbuf.data(), cache ? &mlp_l[i] : nullptr);
    for (int ch = 0; ch < d; ++ch) gate_l.at(i, ch) = sigmoid(zbuf[ch]);

    for (int ch = 0; ch < d; ++ch) {
      const double ap = gate_p.at(i, ch), al = gate_l.at(i, ch);
      out.at(i, ch) = (ap * fp[ch] + al * aligned.at(i, ch)) / (ap + al + kDenomEps);
    }
  }

  if (cache) {
    cache->cells = std::move(cells);
    cache->aligned = std::move(aligned);
    cache->gate_point = std::move(gate_p);
    cache->gate_local = std::move(gate_l);
    cache->mlp_point = std::move(mlp_p);
    cache->mlp_local = std::move(mlp_l);
    cache->fused_flag = std::move(fused_flag);
  }
  return out;
}

void global_fuse_backward(const Grid& f_p, const Grid& f_l, const ParamStore& ps,
                          const GlobalFuserConfig& cfg, const GlobalFuseCache& cache,
                          const RowMatrix& g_out, ParamStore& grads, Grid* g_f_p, Grid* g_f_l) {
  const int d = cfg.d;
  const MlpSpec spec_p = cfg.gate_point_spec();
  const MlpSpec spec_l = cfg.gate_local_spec();
  const Tensor& aw = ps.at(cfg.prefix + ".align.weight");
  Tensor& gaw = grads.at(cfg.prefix + ".align.weight");
  Tensor& gab = grads.at(cfg.prefix + ".align.bias");

  std::vector<double> g_zp(d), g_zl(d), g_aligned(d), g_fl(cfg.c_local);
  for (int i = 0; i < static_cast<int>(cache.cells.size()); ++i) {
    const int cell = cache.cells[i];
    const int r = cell / f_p.w, c = cell % f_p.w;
    const double* fp = f_p.v.data() + f_p.idx(r, c, 0);
    if (!cache.fused_flag[i]) {
      if (g_f_p)
        for (int ch = 0; ch < d; ++ch) g_f_p->at(r, c, ch) += g_out.at(i, ch);
      continue;
    }
    std::fill(g_aligned.begin(), g_aligned.end(), 0.0);
    for (int ch = 0; ch < d; ++ch) {
      const double g = g_out.at(i, ch);
      const double ap = cache.gate_point.at(i, ch), al = cache.gate_local.at(i, ch);
      const double fl_ch = cache.aligned.at(i, ch);
      const double denom = ap + al + kDenomEps;
      const double fused = (ap * fp[ch] + al * fl_ch) / denom;
      const double gn = g / denom;           // d/d numerator
      const double gd = -g * fused / denom;  // d/d denominator
      const double g_ap = gn * fp[ch] + gd;
      const double g_al = gn * fl_ch + gd;
      if (g_f_p) g_f_p->at(r, c, ch) += gn * ap;
      g_aligned[ch] += gn * al;
      g_zp[ch] = g_ap * ap * (1.0 - ap);
      g_zl[ch] = g_al * al * (1.0 - al);
    }
    // Gate MLPs.
    std::vector<double> g_fp_in(d, 0.0), g_fl_aligned_in(d, 0.0);
    mlp_backward(ps, spec_p, cache.mlp_point[i], g_zp.data(), grads, g_fp_in.data());
    mlp_backward(ps, spec_l, cache.mlp_local[i], g_zl.data(), grads, g_fl_aligned_in.data());
    if (g_f_p)
      for (int ch = 0; ch < d; ++ch) g_f_p->at(r, c, ch) += g_fp_in[ch];
    for (int ch = 0; ch < d; ++ch) g_aligned[ch] += g_fl_aligned_in[ch];
    // Align layer back to the local fused grid.
    std::fill(g_fl.begin(), g_fl.end(), 0.0);
    const double* fl = f_l.v.data() + f_l.idx(r, c, 0);
    dense_backward(aw, fl, g_aligned.data(), gaw, gab, g_fl.data());
    if (g_f_l)
      for (int ch = 0; ch < cfg.c_local; ++ch) g_f_l->at(r, c, ch) += g_fl[ch];
  }
}

}  // namespace vlo

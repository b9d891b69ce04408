#include "vlo/pipeline.hpp"

#include "vlo/log.hpp"

#include <stdexcept>

namespace vlo {

ModelConfig make_model_config(const PipelineConfig& pc) {
  pc.validate();
  ModelConfig m;
  m.pc = pc;
  m.image_spec = {"image_pyramid", 3, pc.image_channels, 3};
  m.point_spec = {"point_pyramid", 3, pc.point_channels, 3, pc.point_input_scale};
  for (int l = 0; l < pc.levels; ++l) {
    const std::string lvl = ".level" + std::to_string(l);
    LocalFuserConfig lf;
    lf.prefix = "local_fuser" + lvl;
    lf.channels = pc.image_channels[l];
    lf.region_rows = pc.region_rows;
    lf.region_cols = pc.region_cols;
    lf.similarity_on_value = pc.similarity_on_value;
    m.local_cfgs.push_back(lf);

    GlobalFuserConfig gf;
    gf.prefix = "global_fuser" + lvl;
    gf.c_local = pc.image_channels[l];
    gf.d = pc.point_channels[l];
    m.global_cfgs.push_back(gf);

    PoseHeadConfig ph;
    ph.prefix = "pose_head" + lvl;
    ph.d = pc.point_channels[l];
    ph.k = pc.cost_volume_k;
    m.head_cfgs.push_back(ph);
  }
  return m;
}

ParamStore make_param_store(const ModelConfig& model) {
  ParamStore ps;
  ps.seed = model.pc.seed;
  Rng rng(model.pc.seed);
  register_pyramid(ps, rng, model.image_spec);
  register_pyramid(ps, rng, model.point_spec);
  for (int l = 0; l < model.pc.levels; ++l) {
    register_local_fuser(ps, rng, model.local_cfgs[l]);
    register_global_fuser(ps, rng, model.global_cfgs[l]);
    register_pose_head(ps, rng, model.head_cfgs[l]);
  }
  ps.add("loss.k_x", {1}).v[0] = model.pc.loss.k_x_init;
  ps.add("loss.k_q", {1}).v[0] = model.pc.loss.k_q_init;
  return ps;
}

FrozenStructure extract_structure(const PairCache& cache) {
  FrozenStructure fs;
  for (const auto& lc : cache.src.local_caches) fs.src_assign.push_back(lc.assignment);
  for (const auto& lc : cache.tgt.local_caches) fs.tgt_assign.push_back(lc.assignment);
  for (const auto& lv : cache.iter.levels) fs.nbrs.push_back(lv.cost.nbrs);
  return fs;
}

FrameCache process_frame(const FrameInput& in, const ParamStore& ps, const ModelConfig& model,
                         bool keep_caches,
                         const std::vector<ClusterAssignment>* fixed_assign) {
  const PipelineConfig& pc = model.pc;
  FrameCache fc;
  fc.base = cylindrical_project(in.scan, pc.cylindrical());
  fc.point_levels = point_pyramid_forward(ps, model.point_spec, fc.base,
                                          keep_caches ? &fc.point_cache : nullptr);
  fc.image_feats = image_pyramid_forward(ps, model.image_spec, in.image, pc.pad_height,
                                         pc.pad_width, keep_caches ? &fc.image_cache : nullptr);

  const int levels = pc.levels;
  fc.pixels_featmap.resize(levels);
  fc.masks.resize(levels);
  fc.local_caches.resize(levels);
  fc.f_local.resize(levels);
  fc.f_local_grids.resize(levels);
  fc.mask_grids.resize(levels);
  fc.global_caches.resize(levels);
  fc.f_global.resize(levels);
  fc.fusable_rows.resize(levels);
  fc.head_inputs.resize(levels);

  for (int l = 0; l < levels; ++l) {
    const PointLevel& lvl = fc.point_levels[l];
    const int n = static_cast<int>(lvl.coords.size());
    RowMatrix pixels;
    FusionMask mask;
    project_to_image(lvl.coords, in.cam, pixels, mask);
    // Feature-map coordinates at this level's stride.
    const double inv_stride = 1.0 / pc.stride_at(l);
    RowMatrix feat_pixels(n, 2);
    for (int i = 0; i < n; ++i) {
      feat_pixels.at(i, 0) = pixels.at(i, 0) * inv_stride;
      feat_pixels.at(i, 1) = pixels.at(i, 1) * inv_stride;
    }
    fc.pixels_featmap[l] = std::move(feat_pixels);
    fc.masks[l] = mask.flags;

    fc.f_local[l] = local_fuse(fc.image_feats[l], fc.pixels_featmap[l], fc.masks[l], ps,
                               model.local_cfgs[l], keep_caches ? &fc.local_caches[l] : nullptr,
                               fixed_assign ? &(*fixed_assign)[l] : nullptr);
    fc.f_local_grids[l] = scatter_rows_to_grid(fc.f_local[l], lvl.pseudo);

    // Per-cell fusion-mask grid over the survivors.
    std::vector<uint8_t> mask_grid(static_cast<size_t>(lvl.pseudo.h) * lvl.pseudo.w, 0);
    {
      int row = 0;
      for (int r = 0; r < lvl.pseudo.h; ++r)
        for (int c = 0; c < lvl.pseudo.w; ++c)
          if (lvl.pseudo.occupied(r, c)) {
            mask_grid[static_cast<size_t>(r) * lvl.pseudo.w + c] = fc.masks[l][row];
            ++row;
          }
    }
    fc.mask_grids[l] = std::move(mask_grid);

    fc.f_global[l] =
        global_fuse(lvl.features, fc.f_local_grids[l], lvl.pseudo.occupancy, fc.mask_grids[l],
                    ps, model.global_cfgs[l], keep_caches ? &fc.global_caches[l] : nullptr);

    // Only fusable points enter the pose head.
    std::vector<int32_t> rows;
    for (int i = 0; i < n; ++i)
      if (fc.masks[l][i]) rows.push_back(i);
    if (rows.empty())
      throw std::runtime_error("process_frame: no fusable points at level " + std::to_string(l));
    LevelFeatures head;
    head.feat = RowMatrix(static_cast<int>(rows.size()), fc.f_global[l].c);
    head.coords.reserve(rows.size());
    for (size_t k = 0; k < rows.size(); ++k) {
      for (int ch = 0; ch < fc.f_global[l].c; ++ch)
        head.feat.at(static_cast<int>(k), ch) = fc.f_global[l].at(rows[k], ch);
      head.coords.push_back(lvl.coords[rows[k]]);
    }
    log().debug("process_frame: level {} survivors={} fusable={}", l, n, rows.size());
    fc.fusable_rows[l] = std::move(rows);
    fc.head_inputs[l] = std::move(head);
  }
  return fc;
}

void process_frame_backward(const FrameInput& in, const ParamStore& ps, const ModelConfig& model,
                            const FrameCache& cache, std::vector<RowMatrix>& g_head_feats,
                            ParamStore& grads) {
  const PipelineConfig& pc = model.pc;
  const int levels = pc.levels;
  std::vector<Grid> g_point(levels);
  std::vector<Grid> g_image(levels);
  for (int l = 0; l < levels; ++l) {
    const PointLevel& lvl = cache.point_levels[l];
    // Head-input rows back to full survivor rows.
    RowMatrix g_fg(static_cast<int>(lvl.coords.size()), cache.f_global[l].c);
    const auto& rows = cache.fusable_rows[l];
    for (size_t k = 0; k < rows.size(); ++k)
      for (int ch = 0; ch < g_fg.c; ++ch)
        g_fg.at(rows[k], ch) = g_head_feats[l].at(static_cast<int>(k), ch);

    g_point[l] = Grid(lvl.features.h, lvl.features.w, lvl.features.c);
    Grid g_flocal_grid(cache.f_local_grids[l].h, cache.f_local_grids[l].w,
                       cache.f_local_grids[l].c);
    global_fuse_backward(lvl.features, cache.f_local_grids[l], ps, model.global_cfgs[l],
                         cache.global_caches[l], g_fg, grads, &g_point[l], &g_flocal_grid);

    // Scatter adjoint: gather the grid grads back onto survivor rows.
    RowMatrix g_flocal = gather_rows_from_grid(g_flocal_grid, lvl.pseudo);
    g_image[l] = Grid(cache.image_feats[l].h, cache.image_feats[l].w, cache.image_feats[l].c);
    local_fuse_backward(cache.image_feats[l], cache.masks[l], ps, model.local_cfgs[l],
                        cache.local_caches[l], g_flocal, grads, &g_image[l]);
  }
  point_pyramid_backward(ps, model.point_spec, cache.point_levels, cache.point_cache, g_point,
                         grads);
  image_pyramid_backward(ps, model.image_spec, cache.image_cache, g_image, grads, nullptr);
  (void)in;
}

std::vector<PoseSE3> estimate_pair(const FrameInput& src, const FrameInput& tgt,
                                   const ParamStore& ps, const ModelConfig& model,
                                   PairCache* cache, const FrozenStructure* frozen) {
  const bool keep = cache != nullptr;
  FrameCache src_fc = process_frame(src, ps, model, keep, frozen ? &frozen->src_assign : nullptr);
  FrameCache tgt_fc = process_frame(tgt, ps, model, keep, frozen ? &frozen->tgt_assign : nullptr);
  IterativeEstimateCache iter;
  std::vector<PoseSE3> poses =
      iterative_estimate(src_fc.head_inputs, tgt_fc.head_inputs, ps, model.head_cfgs,
                         keep ? &iter : nullptr, nullptr, frozen ? &frozen->nbrs : nullptr);
  if (cache) {
    cache->src = std::move(src_fc);
    cache->tgt = std::move(tgt_fc);
    cache->iter = std::move(iter);
    cache->poses = poses;
  }
  return poses;
}

double pair_loss_and_gradients(const FrameInput& src, const FrameInput& tgt,
                               const PoseSE3& gt_warp, const ParamStore& ps,
                               const ModelConfig& model, ParamStore& grads,
                               std::vector<PoseSE3>* poses_out, const FrozenStructure* frozen) {
  PairCache cache;
  std::vector<PoseSE3> poses = estimate_pair(src, tgt, ps, model, &cache, frozen);
  if (poses_out) *poses_out = poses;

  const int levels = model.pc.levels;
  const double k_x = ps.at("loss.k_x").v[0];
  const double k_q = ps.at("loss.k_q").v[0];
  std::vector<double> per_level(levels);
  for (int l = 0; l < levels; ++l) per_level[l] = layer_loss(poses[l], gt_warp, k_x, k_q);
  const std::vector<double> alpha(model.pc.loss.alpha.begin(), model.pc.loss.alpha.end());
  const double loss = total_loss(per_level, alpha);

  std::vector<Quaternion> g_q(levels, {0, 0, 0, 0});
  std::vector<Vec3> g_t(levels, Vec3::Zero());
  for (int l = 0; l < levels; ++l) {
    const LayerLossGrads lg = layer_loss_backward(poses[l], gt_warp, k_x, k_q, alpha[l]);
    g_q[l] = lg.g_q;
    g_t[l] = lg.g_t;
    grads.at("loss.k_x").v[0] += lg.g_k_x;
    grads.at("loss.k_q").v[0] += lg.g_k_q;
  }

  std::vector<RowMatrix> g_src_feat(levels), g_tgt_feat(levels);
  for (int l = 0; l < levels; ++l) {
    g_src_feat[l] = RowMatrix(cache.src.head_inputs[l].feat.n, cache.src.head_inputs[l].feat.c);
    g_tgt_feat[l] = RowMatrix(cache.tgt.head_inputs[l].feat.n, cache.tgt.head_inputs[l].feat.c);
  }
  iterative_estimate_backward(cache.src.head_inputs, cache.tgt.head_inputs, ps, model.head_cfgs,
                              cache.iter, g_q, g_t, grads, &g_src_feat, &g_tgt_feat);
  process_frame_backward(src, ps, model, cache.src, g_src_feat, grads);
  process_frame_backward(tgt, ps, model, cache.tgt, g_tgt_feat, grads);
  return loss;
}

}  // namespace vlo

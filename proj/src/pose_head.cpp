#include "vlo/pose_head.hpp"

#include "vlo/log.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vlo {

void register_pose_head(ParamStore& ps, Rng& rng, const PoseHeadConfig& cfg) {
  register_mlp(ps, rng, cfg.score_spec());
  register_mlp(ps, rng, cfg.value_spec());
  register_mlp(ps, rng, cfg.mask_spec());
  register_mlp(ps, rng, cfg.fc_q_spec());
  register_mlp(ps, rng, cfg.fc_t_spec());
}

std::vector<std::vector<int32_t>> knn_indices(const std::vector<Vec3>& src,
                                              const std::vector<Vec3>& tgt, int k) {
  if (tgt.empty()) throw std::invalid_argument("knn_indices: empty target set");
  const int kn = std::min<int>(k, static_cast<int>(tgt.size()));
  std::vector<std::vector<int32_t>> out(src.size());
  parallel_for(src.size(), [&](size_t i) {
    // Insertion into a small sorted buffer of (dist^2, index) pairs; the
    // lexicographic compare makes ties deterministic.
    std::vector<std::pair<double, int32_t>> best;
    best.reserve(kn + 1);
    for (int32_t j = 0; j < static_cast<int32_t>(tgt.size()); ++j) {
      const double d2 = (tgt[j] - src[i]).squaredNorm();
      const std::pair<double, int32_t> cand{d2, j};
      if (static_cast<int>(best.size()) == kn && !(cand < best.back())) continue;
      auto pos = std::upper_bound(best.begin(), best.end(), cand);
      best.insert(pos, cand);
      if (static_cast<int>(best.size()) > kn) best.pop_back();
    }
    out[i].reserve(best.size());
    for (const auto& [d2, j] : best) out[i].push_back(j);
  });
  return out;
}

RowMatrix cost_volume(const RowMatrix& src_feat, const std::vector<Vec3>& src_xyz,
                      const RowMatrix& tgt_feat, const std::vector<Vec3>& tgt_xyz,
                      const ParamStore& ps, const PoseHeadConfig& cfg, CostVolumeCache* cache,
                      const std::vector<std::vector<int32_t>>* fixed_nbrs) {
  if (src_feat.n != static_cast<int>(src_xyz.size()) ||
      tgt_feat.n != static_cast<int>(tgt_xyz.size()))
    throw std::invalid_argument("cost_volume: features and coords misaligned");
  if (src_feat.c != cfg.d || tgt_feat.c != cfg.d)
    throw std::invalid_argument("cost_volume: channel mismatch");
  if (tgt_xyz.empty()) throw std::invalid_argument("cost_volume: empty target set");

  const int n = src_feat.n, d = cfg.d;
  const MlpSpec score_spec = cfg.score_spec();
  const MlpSpec value_spec = cfg.value_spec();
  auto nbrs = fixed_nbrs ? *fixed_nbrs : knn_indices(src_xyz, tgt_xyz, cfg.k);

  RowMatrix e(n, d);
  if (cache) {
    cache->score_caches.assign(n, {});
    cache->value_caches.assign(n, {});
    cache->scores.assign(n, RowMatrix());
    cache->weights.assign(n, RowMatrix());
    cache->values.assign(n, RowMatrix());
  }

  parallel_for(static_cast<size_t>(n), [&](size_t ii) {
    const int i = static_cast<int>(ii);
    const int kn = static_cast<int>(nbrs[i].size());
    RowMatrix scores(kn, d), values(kn, d);
    std::vector<MlpCache> sc(cache ? kn : 0), vc(cache ? kn : 0);
    std::vector<double> in_buf(std::max(3 + d, d + 3));
    for (int kidx = 0; kidx < kn; ++kidx) {
      const int32_t j = nbrs[i][kidx];
      const Vec3 rel = tgt_xyz[j] - src_xyz[i];
      // score input: [rel | feature difference]
      in_buf[0] = rel.x();
      in_buf[1] = rel.y();
      in_buf[2] = rel.z();
      for (int ch = 0; ch < d; ++ch) in_buf[3 + ch] = tgt_feat.at(j, ch) - src_feat.at(i, ch);
      mlp_forward(ps, score_spec, in_buf.data(), scores.row(kidx), cache ? &sc[kidx] : nullptr);
      // value input: [target feature | rel]
      for (int ch = 0; ch < d; ++ch) in_buf[ch] = tgt_feat.at(j, ch);
      in_buf[d] = rel.x();
      in_buf[d + 1] = rel.y();
      in_buf[d + 2] = rel.z();
      mlp_forward(ps, value_spec, in_buf.data(), values.row(kidx), cache ? &vc[kidx] : nullptr);
    }
    // Per-channel softmax over neighbors.
    RowMatrix weights = scores;
    std::vector<double> col(kn);
    for (int ch = 0; ch < d; ++ch) {
      for (int kidx = 0; kidx < kn; ++kidx) col[kidx] = scores.at(kidx, ch);
      softmax_inplace(col.data(), kn);
      for (int kidx = 0; kidx < kn; ++kidx) weights.at(kidx, ch) = col[kidx];
    }
    for (int ch = 0; ch < d; ++ch) {
      double acc = 0.0;
      for (int kidx = 0; kidx < kn; ++kidx) acc += weights.at(kidx, ch) * values.at(kidx, ch);
      e.at(i, ch) = acc;
    }
    if (cache) {
      cache->score_caches[i] = std::move(sc);
      cache->value_caches[i] = std::move(vc);
      cache->scores[i] = std::move(scores);
      cache->weights[i] = std::move(weights);
      cache->values[i] = std::move(values);
    }
  });
  if (cache) cache->nbrs = std::move(nbrs);
  return e;
}

void cost_volume_backward(const RowMatrix& src_feat, const std::vector<Vec3>& src_xyz,
                          const RowMatrix& tgt_feat, const std::vector<Vec3>& tgt_xyz,
                          const ParamStore& ps, const PoseHeadConfig& cfg,
                          const CostVolumeCache& cache, const RowMatrix& g_e,
                          ParamStore& grads, RowMatrix* g_src_feat, RowMatrix* g_tgt_feat,
                          std::vector<Vec3>* g_src_xyz, std::vector<Vec3>* g_tgt_xyz) {
  (void)tgt_xyz;
  const int n = src_feat.n, d = cfg.d;
  const MlpSpec score_spec = cfg.score_spec();
  const MlpSpec value_spec = cfg.value_spec();
  std::vector<double> g_in(std::max(3 + d, d + 3));
  std::vector<double> g_score(d), g_value(d), col_y(64), col_g(64), col_out(64);
  for (int i = 0; i < n; ++i) {
    const auto& nbrs = cache.nbrs[i];
    const int kn = static_cast<int>(nbrs.size());
    const RowMatrix& weights = cache.weights[i];
    const RowMatrix& values = cache.values[i];
    // dE -> dweights, dvalues.
    RowMatrix g_weights(kn, d), g_values(kn, d);
    for (int ch = 0; ch < d; ++ch) {
      const double g = g_e.at(i, ch);
      for (int kidx = 0; kidx < kn; ++kidx) {
        g_weights.at(kidx, ch) = g * values.at(kidx, ch);
        g_values.at(kidx, ch) = g * weights.at(kidx, ch);
      }
    }
    // Softmax backward per channel.
    RowMatrix g_scores(kn, d);
    if (static_cast<int>(col_y.size()) < kn) {
      col_y.resize(kn);
      col_g.resize(kn);
      col_out.resize(kn);
    }
    for (int ch = 0; ch < d; ++ch) {
      for (int kidx = 0; kidx < kn; ++kidx) {
        col_y[kidx] = weights.at(kidx, ch);
        col_g[kidx] = g_weights.at(kidx, ch);
        col_out[kidx] = 0.0;
      }
      softmax_backward(col_y.data(), col_g.data(), col_out.data(), kn);
      for (int kidx = 0; kidx < kn; ++kidx) g_scores.at(kidx, ch) = col_out[kidx];
    }
    // Per-neighbor MLP backward.
    for (int kidx = 0; kidx < kn; ++kidx) {
      const int32_t j = nbrs[kidx];
      for (int ch = 0; ch < d; ++ch) g_score[ch] = g_scores.at(kidx, ch);
      std::fill(g_in.begin(), g_in.end(), 0.0);
      mlp_backward(ps, score_spec, cache.score_caches[i][kidx], g_score.data(), grads,
                   g_in.data());
      Vec3 g_rel(g_in[0], g_in[1], g_in[2]);
      for (int ch = 0; ch < d; ++ch) {
        if (g_tgt_feat) g_tgt_feat->at(j, ch) += g_in[3 + ch];
        if (g_src_feat) g_src_feat->at(i, ch) -= g_in[3 + ch];
      }
      for (int ch = 0; ch < d; ++ch) g_value[ch] = g_values.at(kidx, ch);
      std::fill(g_in.begin(), g_in.end(), 0.0);
      mlp_backward(ps, value_spec, cache.value_caches[i][kidx], g_value.data(), grads,
                   g_in.data());
      if (g_tgt_feat)
        for (int ch = 0; ch < d; ++ch) g_tgt_feat->at(j, ch) += g_in[ch];
      g_rel += Vec3(g_in[d], g_in[d + 1], g_in[d + 2]);
      if (g_src_xyz) (*g_src_xyz)[i] -= g_rel;
      if (g_tgt_xyz) (*g_tgt_xyz)[j] += g_rel;
    }
  }
}

RowMatrix embedding_mask(const RowMatrix& e, const RowMatrix& f_gs, const ParamStore& ps,
                         const PoseHeadConfig& cfg, EmbeddingMaskCache* cache) {
  if (e.n != f_gs.n || e.c != cfg.d || f_gs.c != cfg.d)
    throw std::invalid_argument("embedding_mask: shape mismatch");
  const int n = e.n, d = cfg.d;
  const MlpSpec spec = cfg.mask_spec();
  RowMatrix z(n, d);
  if (cache) cache->mlp.assign(n, {});
  std::vector<double> in_buf(2 * d);
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < d; ++ch) {
      in_buf[ch] = e.at(i, ch);
      in_buf[d + ch] = f_gs.at(i, ch);
    }
    mlp_forward(ps, spec, in_buf.data(), z.row(i), cache ? &cache->mlp[i] : nullptr);
  }
  // Softmax across points, independently per channel.
  std::vector<double> col(n);
  RowMatrix m(n, d);
  for (int ch = 0; ch < d; ++ch) {
    for (int i = 0; i < n; ++i) col[i] = z.at(i, ch);
    softmax_inplace(col.data(), n);
    for (int i = 0; i < n; ++i) m.at(i, ch) = col[i];
  }
  if (cache) cache->mask = m;
  return m;
}

void embedding_mask_backward(const RowMatrix& e, const RowMatrix& f_gs, const ParamStore& ps,
                             const PoseHeadConfig& cfg, const EmbeddingMaskCache& cache,
                             const RowMatrix& g_mask, ParamStore& grads, RowMatrix* g_e,
                             RowMatrix* g_f_gs) {
  (void)e;
  (void)f_gs;
  const int n = g_mask.n, d = cfg.d;
  const MlpSpec spec = cfg.mask_spec();
  RowMatrix g_z(n, d);
  std::vector<double> col_y(n), col_g(n), col_out(n);
  for (int ch = 0; ch < d; ++ch) {
    for (int i = 0; i < n; ++i) {
      col_y[i] = cache.mask.at(i, ch);
      col_g[i] = g_mask.at(i, ch);
      col_out[i] = 0.0;
    }
    softmax_backward(col_y.data(), col_g.data(), col_out.data(), n);
    for (int i = 0; i < n; ++i) g_z.at(i, ch) = col_out[i];
  }
  std::vector<double> g_in(2 * d);
  for (int i = 0; i < n; ++i) {
    std::fill(g_in.begin(), g_in.end(), 0.0);
    mlp_backward(ps, spec, cache.mlp[i], g_z.row(i), grads, g_in.data());
    for (int ch = 0; ch < d; ++ch) {
      if (g_e) g_e->at(i, ch) += g_in[ch];
      if (g_f_gs) g_f_gs->at(i, ch) += g_in[d + ch];
    }
  }
}

PoseSE3 regress_pose(const RowMatrix& e, const RowMatrix& mask, const ParamStore& ps,
                     const PoseHeadConfig& cfg, RegressCache* cache) {
  if (e.n != mask.n || e.c != mask.c)
    throw std::invalid_argument("regress_pose: E and mask misaligned");
  const int n = e.n, d = cfg.d;
  std::vector<double> pooled(d, 0.0);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < d; ++ch) pooled[ch] += e.at(i, ch) * mask.at(i, ch);

  double qbuf[4], tbuf[3];
  MlpCache qc, tc;
  mlp_forward(ps, cfg.fc_q_spec(), pooled.data(), qbuf, cache ? &qc : nullptr);
  mlp_forward(ps, cfg.fc_t_spec(), pooled.data(), tbuf, cache ? &tc : nullptr);

  const Quaternion q_raw{qbuf[0], qbuf[1], qbuf[2], qbuf[3]};
  QuatNormCache norm;
  PoseSE3 pose;
  pose.q = normalize_cached(q_raw, norm);
  pose.t = Vec3(tbuf[0], tbuf[1], tbuf[2]);
  if (cache) {
    cache->pooled = std::move(pooled);
    cache->fc_q = std::move(qc);
    cache->fc_t = std::move(tc);
    cache->q_raw = q_raw;
    cache->norm = norm;
  }
  return pose;
}

void regress_pose_backward(const RowMatrix& e, const RowMatrix& mask, const ParamStore& ps,
                           const PoseHeadConfig& cfg, const RegressCache& cache,
                           const Quaternion& g_q, const Vec3& g_t, ParamStore& grads,
                           RowMatrix* g_e, RowMatrix* g_mask) {
  const int n = e.n, d = cfg.d;
  const Quaternion g_q_raw = normalize_backward(cache.norm, g_q);
  const double g_qbuf[4] = {g_q_raw.w, g_q_raw.x, g_q_raw.y, g_q_raw.z};
  const double g_tbuf[3] = {g_t.x(), g_t.y(), g_t.z()};
  std::vector<double> g_pooled(d, 0.0);
  mlp_backward(ps, cfg.fc_q_spec(), cache.fc_q, g_qbuf, grads, g_pooled.data());
  mlp_backward(ps, cfg.fc_t_spec(), cache.fc_t, g_tbuf, grads, g_pooled.data());
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < d; ++ch) {
      if (g_e) g_e->at(i, ch) += g_pooled[ch] * mask.at(i, ch);
      if (g_mask) g_mask->at(i, ch) += g_pooled[ch] * e.at(i, ch);
    }
  }
}

std::vector<PoseSE3> iterative_estimate(const std::vector<LevelFeatures>& src,
                                        const std::vector<LevelFeatures>& tgt,
                                        const ParamStore& ps,
                                        const std::vector<PoseHeadConfig>& cfgs,
                                        IterativeEstimateCache* cache,
                                        const PoseSE3* inject_coarsest,
                                        const std::vector<std::vector<std::vector<int32_t>>>*
                                            fixed_nbrs) {
  const int levels = static_cast<int>(cfgs.size());
  if (static_cast<int>(src.size()) != levels || static_cast<int>(tgt.size()) != levels)
    throw std::invalid_argument("iterative_estimate: level count mismatch");
  std::vector<PoseSE3> poses(levels);
  if (cache) cache->levels.assign(levels, {});

  for (int l = levels - 1; l >= 0; --l) {
    LevelEstimateCache local;
    LevelEstimateCache* lc = cache ? &cache->levels[l] : &local;
    const bool coarsest = (l == levels - 1);
    if (coarsest) {
      lc->warped = src[l].coords;
    } else {
      const PoseSE3& prev = poses[l + 1];
      lc->warped.resize(src[l].coords.size());
      for (size_t i = 0; i < src[l].coords.size(); ++i)
        lc->warped[i] = rotate_raw(prev.q, src[l].coords[i]) + prev.t;
    }
    lc->e = cost_volume(src[l].feat, lc->warped, tgt[l].feat, tgt[l].coords, ps, cfgs[l],
                        cache ? &lc->cost : nullptr,
                        fixed_nbrs ? &(*fixed_nbrs)[l] : nullptr);
    lc->m = embedding_mask(lc->e, src[l].feat, ps, cfgs[l], cache ? &lc->mask : nullptr);
    lc->residual = regress_pose(lc->e, lc->m, ps, cfgs[l], cache ? &lc->regress : nullptr);
    if (coarsest) {
      if (inject_coarsest) lc->residual = *inject_coarsest;
      lc->pose = lc->residual;
    } else {
      const PoseSE3& prev = poses[l + 1];
      lc->pose.q = normalize_cached(quat_mul_raw(lc->residual.q, prev.q), lc->compose_norm);
      lc->pose.t = rotate_raw(lc->residual.q, prev.t) + lc->residual.t;
    }
    poses[l] = lc->pose;
    log().debug("iterative_estimate: level {} n_src={} n_tgt={}", l, src[l].coords.size(),
                tgt[l].coords.size());
  }
  return poses;
}

void iterative_estimate_backward(const std::vector<LevelFeatures>& src,
                                 const std::vector<LevelFeatures>& tgt, const ParamStore& ps,
                                 const std::vector<PoseHeadConfig>& cfgs,
                                 const IterativeEstimateCache& cache,
                                 const std::vector<Quaternion>& g_q,
                                 const std::vector<Vec3>& g_t, ParamStore& grads,
                                 std::vector<RowMatrix>* g_src_feat,
                                 std::vector<RowMatrix>* g_tgt_feat, bool coarsest_injected) {
  const int levels = static_cast<int>(cfgs.size());
  // Accumulated gradient on each level's composed pose; finer levels feed the
  // coarser ones through the compose and warp paths.
  std::vector<Quaternion> acc_q(levels, {0.0, 0.0, 0.0, 0.0});
  std::vector<Vec3> acc_t(levels, Vec3::Zero());
  for (int l = 0; l < levels; ++l) {
    acc_q[l].w += g_q[l].w;
    acc_q[l].x += g_q[l].x;
    acc_q[l].y += g_q[l].y;
    acc_q[l].z += g_q[l].z;
    acc_t[l] += g_t[l];
  }

  for (int l = 0; l < levels; ++l) {
    const LevelEstimateCache& lc = cache.levels[l];
    const bool coarsest = (l == levels - 1);
    Quaternion g_res_q{0, 0, 0, 0};
    Vec3 g_res_t = Vec3::Zero();
    if (coarsest) {
      g_res_q = acc_q[l];
      g_res_t = acc_t[l];
    } else {
      // pose = compose(residual, prev): unravel the normalize, the Hamilton
      // product and the rotated translation.
      const PoseSE3& prev = cache.levels[l + 1].pose;
      const Quaternion g_prod = normalize_backward(lc.compose_norm, acc_q[l]);
      Quaternion g_prev_q{0, 0, 0, 0};
      quat_mul_raw_backward(lc.residual.q, prev.q, g_prod, g_res_q, g_prev_q);
      Vec3 g_prev_t = Vec3::Zero();
      rotate_raw_backward(lc.residual.q, prev.t, acc_t[l], g_res_q, g_prev_t);
      g_res_t = acc_t[l];
      acc_q[l + 1].w += g_prev_q.w;
      acc_q[l + 1].x += g_prev_q.x;
      acc_q[l + 1].y += g_prev_q.y;
      acc_q[l + 1].z += g_prev_q.z;
      acc_t[l + 1] += g_prev_t;
    }

    const bool head_used = !(coarsest && coarsest_injected);
    RowMatrix g_e(lc.e.n, lc.e.c);
    RowMatrix g_m(lc.m.n, lc.m.c);
    if (head_used)
      regress_pose_backward(lc.e, lc.m, ps, cfgs[l], lc.regress, g_res_q, g_res_t, grads, &g_e,
                            &g_m);
    embedding_mask_backward(lc.e, src[l].feat, ps, cfgs[l], lc.mask, g_m, grads, &g_e,
                            g_src_feat ? &(*g_src_feat)[l] : nullptr);
    std::vector<Vec3> g_warped(lc.warped.size(), Vec3::Zero());
    cost_volume_backward(src[l].feat, lc.warped, tgt[l].feat, tgt[l].coords, ps, cfgs[l],
                         lc.cost, g_e, grads, g_src_feat ? &(*g_src_feat)[l] : nullptr,
                         g_tgt_feat ? &(*g_tgt_feat)[l] : nullptr, &g_warped, nullptr);
    if (!coarsest) {
      // Warp chain: warped_i = R(q_prev) p_i + t_prev.
      const PoseSE3& prev = cache.levels[l + 1].pose;
      for (size_t i = 0; i < g_warped.size(); ++i) {
        Vec3 g_p = Vec3::Zero();
        rotate_raw_backward(prev.q, src[l].coords[i], g_warped[i], acc_q[l + 1], g_p);
        acc_t[l + 1] += g_warped[i];
      }
    }
  }
}

}  // namespace vlo

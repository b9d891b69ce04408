#pragma once

#include "vlo/geometry.hpp"
#include "vlo/nn.hpp"

#include <string>
#include <vector>

namespace vlo {

struct PoseHeadConfig {
  std::string prefix;  // e.g. "pose_head.level3"
  int d = 0;           // feature channels at this level
  int k = 16;          // neighbors gathered per source point

  MlpSpec score_spec() const { return {prefix + ".score_mlp", {3 + d, d, d}}; }
  MlpSpec value_spec() const { return {prefix + ".value_mlp", {d + 3, d, d}}; }
  MlpSpec mask_spec() const { return {prefix + ".mask_mlp", {2 * d, d, d}}; }
  MlpSpec fc_q_spec() const { return {prefix + ".fc_q", {d, std::max(d / 2, 4), 4}}; }
  MlpSpec fc_t_spec() const { return {prefix + ".fc_t", {d, std::max(d / 2, 4), 3}}; }
};

void register_pose_head(ParamStore& ps, Rng& rng, const PoseHeadConfig& cfg);

// K nearest targets by squared distance, ties to the lower index, ascending.
std::vector<std::vector<int32_t>> knn_indices(const std::vector<Vec3>& src,
                                              const std::vector<Vec3>& tgt, int k);

struct CostVolumeCache {
  std::vector<std::vector<int32_t>> nbrs;
  // Per source point: per-neighbor MLP caches and attention weights (kn x d).
  std::vector<std::vector<MlpCache>> score_caches, value_caches;
  std::vector<RowMatrix> scores, weights, values;
};

// Per-source-point KNN patch attention over the target set. E row i is the
// attention-weighted sum of per-neighbor value vectors; weights are per-channel
// softmaxes of the score MLP over the K neighbors. A non-null `fixed_nbrs`
// replaces the KNN lookup (finite-difference checks hold the neighbor sets
// fixed).
RowMatrix cost_volume(const RowMatrix& src_feat, const std::vector<Vec3>& src_xyz,
                      const RowMatrix& tgt_feat, const std::vector<Vec3>& tgt_xyz,
                      const ParamStore& ps, const PoseHeadConfig& cfg, CostVolumeCache* cache,
                      const std::vector<std::vector<int32_t>>* fixed_nbrs = nullptr);

// g_src_xyz receives the gradient through the relative offsets (used to chain
// into the warping pose); any pointer may be null.
void cost_volume_backward(const RowMatrix& src_feat, const std::vector<Vec3>& src_xyz,
                          const RowMatrix& tgt_feat, const std::vector<Vec3>& tgt_xyz,
                          const ParamStore& ps, const PoseHeadConfig& cfg,
                          const CostVolumeCache& cache, const RowMatrix& g_e,
                          ParamStore& grads, RowMatrix* g_src_feat, RowMatrix* g_tgt_feat,
                          std::vector<Vec3>* g_src_xyz, std::vector<Vec3>* g_tgt_xyz);

struct EmbeddingMaskCache {
  std::vector<MlpCache> mlp;
  RowMatrix mask;  // softmax outputs
};

// Per-channel softmax over the N points of MLP(E ++ F_gs).
RowMatrix embedding_mask(const RowMatrix& e, const RowMatrix& f_gs, const ParamStore& ps,
                         const PoseHeadConfig& cfg, EmbeddingMaskCache* cache);

void embedding_mask_backward(const RowMatrix& e, const RowMatrix& f_gs, const ParamStore& ps,
                             const PoseHeadConfig& cfg, const EmbeddingMaskCache& cache,
                             const RowMatrix& g_mask, ParamStore& grads, RowMatrix* g_e,
                             RowMatrix* g_f_gs);

struct RegressCache {
  std::vector<double> pooled;
  MlpCache fc_q, fc_t;
  Quaternion q_raw;
  QuatNormCache norm;
};

// Pools E (.) M over points, then the two FC stacks; the quaternion head is
// normalized (near-zero output degrades to identity with a warning).
PoseSE3 regress_pose(const RowMatrix& e, const RowMatrix& mask, const ParamStore& ps,
                     const PoseHeadConfig& cfg, RegressCache* cache);

// g_q is the gradient wrt the unit quaternion (ambient components).
void regress_pose_backward(const RowMatrix& e, const RowMatrix& mask, const ParamStore& ps,
                           const PoseHeadConfig& cfg, const RegressCache& cache,
                           const Quaternion& g_q, const Vec3& g_t, ParamStore& grads,
                           RowMatrix* g_e, RowMatrix* g_mask);

// Inputs to one refinement level: fused features and coordinates of the
// points entering the cost volume (one set per frame).
struct LevelFeatures {
  RowMatrix feat;
  std::vector<Vec3> coords;
};

struct LevelEstimateCache {
  std::vector<Vec3> warped;
  CostVolumeCache cost;
  EmbeddingMaskCache mask;
  RegressCache regress;
  RowMatrix e;
  RowMatrix m;
  PoseSE3 residual;        // this level's head output (full pose at the coarsest)
  QuatNormCache compose_norm;
  PoseSE3 pose;            // composed estimate at this level
};

struct IterativeEstimateCache {
  std::vector<LevelEstimateCache> levels;
};

// Coarse-to-fine estimation over all levels (index 0 = finest). The coarsest
// level regresses a full pose; finer levels warp their source coordinates by
// the previous estimate and regress a residual which is composed on top.
// `inject_coarsest` overrides the coarsest regression when non-null.
std::vector<PoseSE3> iterative_estimate(const std::vector<LevelFeatures>& src,
                                        const std::vector<LevelFeatures>& tgt,
                                        const ParamStore& ps,
                                        const std::vector<PoseHeadConfig>& cfgs,
                                        IterativeEstimateCache* cache,
                                        const PoseSE3* inject_coarsest = nullptr,
                                        const std::vector<std::vector<std::vector<int32_t>>>*
                                            fixed_nbrs = nullptr);

// g_q/g_t hold the loss gradients per level (finest first). Feature gradients
// accumulate into g_src_feat/g_tgt_feat (one entry per level, pre-sized).
void iterative_estimate_backward(const std::vector<LevelFeatures>& src,
                                 const std::vector<LevelFeatures>& tgt, const ParamStore& ps,
                                 const std::vector<PoseHeadConfig>& cfgs,
                                 const IterativeEstimateCache& cache,
                                 const std::vector<Quaternion>& g_q,
                                 const std::vector<Vec3>& g_t, ParamStore& grads,
                                 std::vector<RowMatrix>* g_src_feat,
                                 std::vector<RowMatrix>* g_tgt_feat, bool coarsest_injected = false);

}  // namespace vlo

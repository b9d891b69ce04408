#pragma once

#include "vlo/config.hpp"
#include "vlo/dataio.hpp"
#include "vlo/global_fuser.hpp"
#include "vlo/local_fuser.hpp"
#include "vlo/loss_metrics.hpp"
#include "vlo/pose_head.hpp"

#include <string>
#include <vector>

namespace vlo {

// Concrete per-level module wiring derived from a PipelineConfig.
struct ModelConfig {
  PipelineConfig pc;
  PyramidSpec image_spec, point_spec;
  std::vector<LocalFuserConfig> local_cfgs;
  std::vector<GlobalFuserConfig> global_cfgs;
  std::vector<PoseHeadConfig> head_cfgs;
};

ModelConfig make_model_config(const PipelineConfig& pc);

// Registers every parameter (pyramids, fusers, pose heads, loss scalars) in
// deterministic order, initialized from pc.seed.
ParamStore make_param_store(const ModelConfig& model);

struct FrameInput {
  LidarScan scan;
  Grid image;  // already padded to the configured size
  CameraModel cam;
};

// Everything one frame contributes to the pose head, with the caches needed
// to run the backward pass.
struct FrameCache {
  PseudoImage base;
  PointPyramidCache point_cache;
  std::vector<PointLevel> point_levels;
  ImagePyramidCache image_cache;
  std::vector<Grid> image_feats;

  std::vector<RowMatrix> pixels_featmap;      // per level, N_l x 2
  std::vector<std::vector<uint8_t>> masks;    // per level fusion mask over survivors
  std::vector<LocalFuseCache> local_caches;
  std::vector<RowMatrix> f_local;             // N_l x C_l
  std::vector<Grid> f_local_grids;            // scattered onto the pseudo grid
  std::vector<std::vector<uint8_t>> mask_grids;
  std::vector<GlobalFuseCache> global_caches;
  std::vector<RowMatrix> f_global;            // N_l x D_l

  std::vector<std::vector<int32_t>> fusable_rows;  // survivor rows entering the head
  std::vector<LevelFeatures> head_inputs;
};

// Runs pyramids + local/global fusion for one frame. keep_caches enables the
// backward pass (training); inference passes false.
FrameCache process_frame(const FrameInput& in, const ParamStore& ps, const ModelConfig& model,
                         bool keep_caches,
                         const std::vector<ClusterAssignment>* fixed_assign = nullptr);

// Accumulates gradients of the head-input features back through the fusion
// stack and both pyramids.
void process_frame_backward(const FrameInput& in, const ParamStore& ps, const ModelConfig& model,
                            const FrameCache& cache, std::vector<RowMatrix>& g_head_feats,
                            ParamStore& grads);

struct PairCache {
  FrameCache src, tgt;
  IterativeEstimateCache iter;
  std::vector<PoseSE3> poses;  // finest first
};

// Discrete choices of a full pair forward (cluster memberships, KNN sets).
// Finite-difference checks hold these fixed across perturbed evaluations.
struct FrozenStructure {
  std::vector<ClusterAssignment> src_assign, tgt_assign;
  std::vector<std::vector<std::vector<int32_t>>> nbrs;  // [level][src point][k]
};

FrozenStructure extract_structure(const PairCache& cache);

// Full pipeline: returns per-level pose estimates, finest first. The finest
// entry is the pair's output pose (a source->target warp in the LiDAR frame).
std::vector<PoseSE3> estimate_pair(const FrameInput& src, const FrameInput& tgt,
                                   const ParamStore& ps, const ModelConfig& model,
                                   PairCache* cache, const FrozenStructure* frozen = nullptr);

// Supervised loss over all levels plus full parameter gradients.
double pair_loss_and_gradients(const FrameInput& src, const FrameInput& tgt,
                               const PoseSE3& gt_warp, const ParamStore& ps,
                               const ModelConfig& model, ParamStore& grads,
                               std::vector<PoseSE3>* poses_out,
                               const FrozenStructure* frozen = nullptr);

}  // namespace vlo

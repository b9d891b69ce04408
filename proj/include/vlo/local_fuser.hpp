#pragma once

#include "vlo/nn.hpp"
#include "vlo/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vlo {

// Clustering-based local fusion of image features around projected LiDAR
// points. The feature map is tiled into region_rows x region_cols rectangles;
// centers and pixels interact only within their own rectangle.
struct LocalFuserConfig {
  std::string prefix;     // parameter namespace, e.g. "local_fuser.level0"
  int channels = 0;       // C of the image feature map at this level
  int region_rows = 2;    // tile counts (must divide the feature-map dims)
  int region_cols = 3;
  // Cosine similarities are computed on the raw features by default; the
  // switch moves them onto the value-mapped features instead.
  bool similarity_on_value = false;
};

// Adds <prefix>.alpha (init 1), <prefix>.beta (init 0) and the shared
// <prefix>.value_map dense layer (C -> C).
void register_local_fuser(ParamStore& ps, Rng& rng, const LocalFuserConfig& cfg);

struct ClusterAssignment {
  std::vector<int32_t> center_of;             // per pseudo point, -1 when its tile has no center
  std::vector<std::vector<int32_t>> members;  // per center, assigned pseudo points
  std::vector<double> similarity;             // per pseudo point, 0 when unassigned
  int zero_norm_pairs = 0;
};

// Flattens an H x W x C feature map row-major into M = H*W pseudo points;
// coords hold (row, col, 0).
PointFeatureSet image_to_pseudo_points(const Grid& feat);

// Assigns each pseudo point to the most cosine-similar center within its own
// rectangle, ties to the lower center index. `center_pixels` holds (x, y)
// positions on the feature map.
ClusterAssignment assign_clusters(const RowMatrix& center_feats, const RowMatrix& center_pixels,
                                  const PointFeatureSet& pseudo, int map_h, int map_w,
                                  const LocalFuserConfig& cfg);

// Keeps the membership lists of `structure` but recomputes the similarities
// from the given features (finite-difference checks hold the discrete
// assignment fixed while the smooth quantities move).
ClusterAssignment recompute_similarities(const ClusterAssignment& structure,
                                         const RowMatrix& center_feats,
                                         const PointFeatureSet& pseudo);

struct AggregateCache {
  RowMatrix center_values;                 // value-mapped center features
  RowMatrix pseudo_values;                 // value-mapped features of assigned pseudo points
  std::vector<double> gates;               // per pseudo point, sigmoid(alpha*s+beta)
  std::vector<double> norm;                // per center, X = 1 + sum(gates)
  RowMatrix fused;                         // per center output
};

// Per-center similarity-gated aggregation; returns one fused row per center.
RowMatrix aggregate_clusters(const ClusterAssignment& assignment, const RowMatrix& center_feats,
                             const PointFeatureSet& pseudo, const ParamStore& ps,
                             const LocalFuserConfig& cfg, AggregateCache* cache);

// Grads flow into value_map/alpha/beta, the raw center features, and the raw
// pseudo-point features (through both the value and the similarity paths).
void aggregate_clusters_backward(const ClusterAssignment& assignment,
                                 const RowMatrix& center_feats, const PointFeatureSet& pseudo,
                                 const ParamStore& ps, const LocalFuserConfig& cfg,
                                 const AggregateCache& cache, const RowMatrix& g_fused,
                                 ParamStore& grads, RowMatrix* g_center_feats,
                                 RowMatrix* g_pseudo_feats);

struct LocalFuseCache {
  RowMatrix center_pixels;   // mask-true projected pixels on the feature map
  RowMatrix center_feats;    // bilinear samples at those pixels
  PointFeatureSet pseudo;
  ClusterAssignment assignment;
  AggregateCache aggregate;
  std::vector<int32_t> center_to_row;  // center index -> point row
};

// Full local fusion for one level: bilinear centers, clustering, aggregation.
// `pixels_featmap` holds (x, y) for every point; mask-false rows give zero
// output rows and take no part in clustering. A non-null `fixed_structure`
// replaces the argmax assignment (similarities still recomputed).
RowMatrix local_fuse(const Grid& image_feat, const RowMatrix& pixels_featmap,
                     const std::vector<uint8_t>& mask, const ParamStore& ps,
                     const LocalFuserConfig& cfg, LocalFuseCache* cache,
                     const ClusterAssignment* fixed_structure = nullptr);

// g_image accumulates grads through both the bilinear centers and the pseudo
// points (the flattened map itself).
void local_fuse_backward(const Grid& image_feat, const std::vector<uint8_t>& mask,
                         const ParamStore& ps, const LocalFuserConfig& cfg,
                         const LocalFuseCache& cache, const RowMatrix& g_out,
                         ParamStore& grads, Grid* g_image);

namespace detail {
// Aggregation with externally supplied gates; exposes the gate monotonicity
// for direct testing.
void aggregate_one_cluster(const double* center_value, const std::vector<const double*>& members,
                           const std::vector<double>& gates, int channels, double* out);
}  // namespace detail

}  // namespace vlo

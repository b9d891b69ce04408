#include "vlo/local_fuser.hpp"

#include "vlo/log.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vlo {

void register_local_fuser(ParamStore& ps, Rng& rng, const LocalFuserConfig& cfg) {
  ps.add(cfg.prefix + ".alpha", {1}).v[0] = 1.0;
  ps.add(cfg.prefix + ".beta", {1}).v[0] = 0.0;
  register_dense(ps, rng, cfg.prefix + ".value_map", cfg.channels, cfg.channels);
}

PointFeatureSet image_to_pseudo_points(const Grid& feat) {
  PointFeatureSet out;
  out.features = RowMatrix(feat.h * feat.w, feat.c);
  out.coords.reserve(static_cast<size_t>(feat.h) * feat.w);
  std::copy(feat.v.begin(), feat.v.end(), out.features.v.begin());
  for (int r = 0; r < feat.h; ++r)
    for (int c = 0; c < feat.w; ++c) out.coords.emplace_back(r, c, 0.0);
  return out;
}

namespace {

struct CosineResult {
  double sim = 0.0;
  bool degenerate = false;
};

CosineResult cosine(const double* a, const double* b, int n) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  return {dot / std::sqrt(na * nb), false};
}

// ds/da and ds/db for s = <a,b>/(|a||b|).
void cosine_backward(const double* a, const double* b, int n, double s, double gs, double* ga,
                     double* gb) {
  double na = 0.0, nb = 0.0;
  for (int i = 0; i < n; ++i) {
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return;  // defined as constant 0
  const double inv = 1.0 / std::sqrt(na * nb);
  for (int i = 0; i < n; ++i) {
    ga[i] += gs * (b[i] * inv - s * a[i] / na);
    gb[i] += gs * (a[i] * inv - s * b[i] / nb);
  }
}

struct TileMap {
  int tile_h = 0, tile_w = 0, rows = 0, cols = 0, map_h = 0, map_w = 0;

  int tile_of_pixel(int r, int c) const {
    const int tr = std::clamp(r / tile_h, 0, rows - 1);
    const int tc = std::clamp(c / tile_w, 0, cols - 1);
    return tr * cols + tc;
  }
};

TileMap make_tiles(int map_h, int map_w, const LocalFuserConfig& cfg) {
  if (cfg.region_rows < 1 || cfg.region_cols < 1)
    throw std::invalid_argument("local_fuser: region tile counts must be >= 1");
  if (map_h % cfg.region_rows != 0 || map_w % cfg.region_cols != 0)
    throw std::invalid_argument("local_fuser: region tiles must divide the feature map dims");
  TileMap t;
  t.rows = cfg.region_rows;
  t.cols = cfg.region_cols;
  t.tile_h = map_h / cfg.region_rows;
  t.tile_w = map_w / cfg.region_cols;
  t.map_h = map_h;
  t.map_w = map_w;
  return t;
}

}  // namespace

ClusterAssignment assign_clusters(const RowMatrix& center_feats, const RowMatrix& center_pixels,
                                  const PointFeatureSet& pseudo, int map_h, int map_w,
                                  const LocalFuserConfig& cfg) {
  if (center_feats.n != center_pixels.n)
    throw std::invalid_argument("assign_clusters: center rows mismatch");
  if (center_feats.c != pseudo.features.c)
    throw std::invalid_argument("assign_clusters: channel mismatch");
  if (pseudo.features.n != map_h * map_w)
    throw std::invalid_argument("assign_clusters: pseudo points do not cover the map");
  const TileMap tiles = make_tiles(map_h, map_w, cfg);

  std::vector<std::vector<int32_t>> centers_in_tile(tiles.rows * tiles.cols);
  for (int i = 0; i < center_pixels.n; ++i) {
    const int pr = std::clamp(static_cast<int>(std::floor(center_pixels.at(i, 1))), 0, map_h - 1);
    const int pc = std::clamp(static_cast<int>(std::floor(center_pixels.at(i, 0))), 0, map_w - 1);
    centers_in_tile[tiles.tile_of_pixel(pr, pc)].push_back(i);
  }

  ClusterAssignment out;
  out.center_of.assign(pseudo.features.n, -1);
  out.similarity.assign(pseudo.features.n, 0.0);
  out.members.resize(center_feats.n);
  const int c = center_feats.c;
  int degenerate = 0;
  for (int p = 0; p < pseudo.features.n; ++p) {
    const int pr = p / map_w, pc = p % map_w;
    const auto& cands = centers_in_tile[tiles.tile_of_pixel(pr, pc)];
    if (cands.empty()) continue;
    int best = -1;
    double best_sim = 0.0;
    for (int32_t ci : cands) {
      const CosineResult res = cosine(pseudo.features.row(p), center_feats.row(ci), c);
      degenerate += res.degenerate;
      if (best < 0 || res.sim > best_sim) {
        best = ci;
        best_sim = res.sim;
      }
    }
    out.center_of[p] = best;
    out.similarity[p] = best_sim;
  }
  for (int p = 0; p < pseudo.features.n; ++p)
    if (out.center_of[p] >= 0) out.members[out.center_of[p]].push_back(p);
  out.zero_norm_pairs = degenerate;
  if (degenerate > 0)
    log().debug("assign_clusters: {} zero-norm similarity pairs treated as 0", degenerate);
  return out;
}

ClusterAssignment recompute_similarities(const ClusterAssignment& structure,
                                         const RowMatrix& center_feats,
                                         const PointFeatureSet& pseudo) {
  ClusterAssignment out = structure;
  out.zero_norm_pairs = 0;
  const int c = center_feats.c;
  for (int p = 0; p < static_cast<int>(out.center_of.size()); ++p) {
    const int32_t ci = out.center_of[p];
    if (ci < 0) continue;
    const CosineResult res = cosine(pseudo.features.row(p), center_feats.row(ci), c);
    out.similarity[p] = res.sim;
    out.zero_norm_pairs += res.degenerate;
  }
  return out;
}

namespace detail {

void aggregate_one_cluster(const double* center_value, const std::vector<const double*>& members,
                           const std::vector<double>& gates, int channels, double* out) {
  double norm = 1.0;
  for (double g : gates) norm += g;
  for (int ch = 0; ch < channels; ++ch) {
    double acc = center_value[ch];
    for (size_t j = 0; j < members.size(); ++j) acc += gates[j] * members[j][ch];
    out[ch] = acc / norm;
  }
}

}  // namespace detail

RowMatrix aggregate_clusters(const ClusterAssignment& assignment, const RowMatrix& center_feats,
                             const PointFeatureSet& pseudo, const ParamStore& ps,
                             const LocalFuserConfig& cfg, AggregateCache* cache) {
  const int n_centers = center_feats.n;
  const int c = center_feats.c;
  if (static_cast<int>(assignment.members.size()) != n_centers)
    throw std::invalid_argument("aggregate_clusters: assignment does not match centers");
  const Tensor& w = ps.at(cfg.prefix + ".value_map.weight");
  const Tensor& b = ps.at(cfg.prefix + ".value_map.bias");
  const double alpha = ps.at(cfg.prefix + ".alpha").v[0];
  const double beta = ps.at(cfg.prefix + ".beta").v[0];

  RowMatrix center_values(n_centers, c);
  for (int i = 0; i < n_centers; ++i)
    dense_forward(w, b, center_feats.row(i), center_values.row(i));

  if (cache) cache->norm.clear();
  RowMatrix pseudo_values(pseudo.features.n, c);
  std::vector<double> gates(pseudo.features.n, 0.0);
  RowMatrix fused(n_centers, c);
  for (int i = 0; i < n_centers; ++i) {
    double norm = 1.0;
    for (int32_t p : assignment.members[i]) {
      dense_forward(w, b, pseudo.features.row(p), pseudo_values.row(p));
      gates[p] = sigmoid(alpha * assignment.similarity[p] + beta);
      norm += gates[p];
    }
    for (int ch = 0; ch < c; ++ch) {
      double acc = center_values.at(i, ch);
      for (int32_t p : assignment.members[i]) acc += gates[p] * pseudo_values.at(p, ch);
      fused.at(i, ch) = acc / norm;
    }
    if (cache) cache->norm.push_back(norm);
  }
  if (cache) {
    cache->center_values = std::move(center_values);
    cache->pseudo_values = std::move(pseudo_values);
    cache->gates = std::move(gates);
    cache->fused = fused;
  }
  return fused;
}

void aggregate_clusters_backward(const ClusterAssignment& assignment,
                                 const RowMatrix& center_feats, const PointFeatureSet& pseudo,
                                 const ParamStore& ps, const LocalFuserConfig& cfg,
                                 const AggregateCache& cache, const RowMatrix& g_fused,
                                 ParamStore& grads, RowMatrix* g_center_feats,
                                 RowMatrix* g_pseudo_feats) {
  const int n_centers = center_feats.n;
  const int c = center_feats.c;
  const Tensor& w = ps.at(cfg.prefix + ".value_map.weight");
  const double alpha = ps.at(cfg.prefix + ".alpha").v[0];
  Tensor& gw = grads.at(cfg.prefix + ".value_map.weight");
  Tensor& gb = grads.at(cfg.prefix + ".value_map.bias");
  double& galpha = grads.at(cfg.prefix + ".alpha").v[0];
  double& gbeta = grads.at(cfg.prefix + ".beta").v[0];

  std::vector<double> g_value(c), g_value_center(c);
  for (int i = 0; i < n_centers; ++i) {
    const double norm = cache.norm[i];
    const double inv = 1.0 / norm;
    // dX collects -g.F/X from the quotient rule.
    double g_norm = 0.0;
    for (int ch = 0; ch < c; ++ch)
      g_norm -= g_fused.at(i, ch) * cache.fused.at(i, ch) * inv;
    for (int ch = 0; ch < c; ++ch) g_value_center[ch] = g_fused.at(i, ch) * inv;
    // Member paths.
    for (int32_t p : assignment.members[i]) {
      const double gate = cache.gates[p];
      double g_gate = g_norm;
      for (int ch = 0; ch < c; ++ch) {
        const double gs = g_fused.at(i, ch) * inv;
        g_gate += gs * cache.pseudo_values.at(p, ch);
        g_value[ch] = gs * gate;
      }
      const double g_z = g_gate * gate * (1.0 - gate);
      const double s = assignment.similarity[p];
      galpha += g_z * s;
      gbeta += g_z;
      // Similarity path: into the raw features directly, or into the value
      // features (then through the dense layer) depending on the switch.
      if (cfg.similarity_on_value) {
        cosine_backward(cache.pseudo_values.row(p), cache.center_values.row(i), c, s,
                        g_z * alpha, g_value.data(), g_value_center.data());
      } else if (g_center_feats && g_pseudo_feats) {
        cosine_backward(pseudo.features.row(p), center_feats.row(i), c, s, g_z * alpha,
                        g_pseudo_feats->row(p), g_center_feats->row(i));
      }
      dense_backward(w, pseudo.features.row(p), g_value.data(), gw, gb,
                     g_pseudo_feats ? g_pseudo_feats->row(p) : nullptr);
    }
    dense_backward(w, center_feats.row(i), g_value_center.data(), gw, gb,
                   g_center_feats ? g_center_feats->row(i) : nullptr);
  }
}

RowMatrix local_fuse(const Grid& image_feat, const RowMatrix& pixels_featmap,
                     const std::vector<uint8_t>& mask, const ParamStore& ps,
                     const LocalFuserConfig& cfg, LocalFuseCache* cache,
                     const ClusterAssignment* fixed_structure) {
  const int n = pixels_featmap.n;
  if (static_cast<int>(mask.size()) != n)
    throw std::invalid_argument("local_fuse: mask size mismatch");
  std::vector<int32_t> center_to_row;
  for (int i = 0; i < n; ++i)
    if (mask[i]) center_to_row.push_back(i);

  RowMatrix center_pixels(static_cast<int>(center_to_row.size()), 2);
  for (size_t k = 0; k < center_to_row.size(); ++k) {
    center_pixels.at(static_cast<int>(k), 0) = pixels_featmap.at(center_to_row[k], 0);
    center_pixels.at(static_cast<int>(k), 1) = pixels_featmap.at(center_to_row[k], 1);
  }
  RowMatrix center_feats = bilinear_sample(image_feat, center_pixels);
  PointFeatureSet pseudo = image_to_pseudo_points(image_feat);
  ClusterAssignment assignment;
  if (fixed_structure) {
    if (cfg.similarity_on_value) {
      const Tensor& w = ps.at(cfg.prefix + ".value_map.weight");
      const Tensor& b = ps.at(cfg.prefix + ".value_map.bias");
      RowMatrix vc(center_feats.n, center_feats.c);
      for (int i = 0; i < center_feats.n; ++i)
        dense_forward(w, b, center_feats.row(i), vc.row(i));
      PointFeatureSet vpseudo;
      vpseudo.features = RowMatrix(pseudo.features.n, pseudo.features.c);
      for (int i = 0; i < pseudo.features.n; ++i)
        dense_forward(w, b, pseudo.features.row(i), vpseudo.features.row(i));
      assignment = recompute_similarities(*fixed_structure, vc, vpseudo);
    } else {
      assignment = recompute_similarities(*fixed_structure, center_feats, pseudo);
    }
  } else if (cfg.similarity_on_value) {
    const Tensor& w = ps.at(cfg.prefix + ".value_map.weight");
    const Tensor& b = ps.at(cfg.prefix + ".value_map.bias");
    RowMatrix vc(center_feats.n, center_feats.c);
    for (int i = 0; i < center_feats.n; ++i) dense_forward(w, b, center_feats.row(i), vc.row(i));
    PointFeatureSet vpseudo;
    vpseudo.coords = pseudo.coords;
    vpseudo.features = RowMatrix(pseudo.features.n, pseudo.features.c);
    for (int i = 0; i < pseudo.features.n; ++i)
      dense_forward(w, b, pseudo.features.row(i), vpseudo.features.row(i));
    assignment = assign_clusters(vc, center_pixels, vpseudo, image_feat.h, image_feat.w, cfg);
  } else {
    assignment =
        assign_clusters(center_feats, center_pixels, pseudo, image_feat.h, image_feat.w, cfg);
  }
  AggregateCache agg_cache;
  RowMatrix fused =
      aggregate_clusters(assignment, center_feats, pseudo, ps, cfg, cache ? &agg_cache : nullptr);

  RowMatrix out(n, image_feat.c);
  for (size_t k = 0; k < center_to_row.size(); ++k)
    for (int ch = 0; ch < image_feat.c; ++ch)
      out.at(center_to_row[k], ch) = fused.at(static_cast<int>(k), ch);

  if (cache) {
    cache->center_pixels = std::move(center_pixels);
    cache->center_feats = std::move(center_feats);
    cache->pseudo = std::move(pseudo);
    cache->assignment = std::move(assignment);
    cache->aggregate = std::move(agg_cache);
    cache->center_to_row = std::move(center_to_row);
  }
  return out;
}

void local_fuse_backward(const Grid& image_feat, const std::vector<uint8_t>& mask,
                         const ParamStore& ps, const LocalFuserConfig& cfg,
                         const LocalFuseCache& cache, const RowMatrix& g_out,
                         ParamStore& grads, Grid* g_image) {
  (void)mask;
  const int n_centers = static_cast<int>(cache.center_to_row.size());
  const int c = image_feat.c;
  RowMatrix g_fused(n_centers, c);
  for (int k = 0; k < n_centers; ++k)
    for (int ch = 0; ch < c; ++ch) g_fused.at(k, ch) = g_out.at(cache.center_to_row[k], ch);

  RowMatrix g_center_feats(n_centers, c);
  RowMatrix g_pseudo_feats(cache.pseudo.features.n, c);
  aggregate_clusters_backward(cache.assignment, cache.center_feats, cache.pseudo, ps, cfg,
                              cache.aggregate, g_fused, grads, &g_center_feats,
                              &g_pseudo_feats);
  if (g_image) {
    // Pseudo points are the flattened map itself.
    for (size_t i = 0; i < g_pseudo_feats.v.size(); ++i) g_image->v[i] += g_pseudo_feats.v[i];
    bilinear_sample_backward(image_feat, cache.center_pixels, g_center_feats, g_image, nullptr);
  }
}

}  // namespace vlo

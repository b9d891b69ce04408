#pragma once

#include "vlo/projection.hpp"
#include "vlo/tensor.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace vlo {

constexpr double kLeakySlope = 0.1;

// Point-aligned features: row i of `features` belongs to coords[i].
struct PointFeatureSet {
  RowMatrix features;
  std::vector<Vec3> coords;
  std::vector<uint8_t> mask;  // optional, empty or one flag per row
};

inline double leaky_relu(double x) { return x >= 0.0 ? x : kLeakySlope * x; }
inline double leaky_relu_grad(double pre) { return pre >= 0.0 ? 1.0 : kLeakySlope; }
double sigmoid(double x);

struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  size_t size() const { return v.size(); }
  int dim(int i) const { return shape[i]; }
};

// Named parameter arrays with a deterministic registration order and the seed
// they were initialized from. Iteration always follows registration order so
// training and serialization are reproducible.
class ParamStore {
 public:
  Tensor& add(const std::string& name, std::vector<int> shape);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }

  // Uniform init in [-s, s], s = 1/sqrt(fan_in).
  void init_uniform(const std::string& name, int fan_in, Rng& rng);

  ParamStore zeros_like() const;
  void fill(double value);
  size_t total_size() const;

  uint64_t seed = 0;

  // Text manifest at <base>.manifest plus little-endian float32 blob at
  // <base>.bin. Loading requires an already-registered store and validates
  // every name and shape against it.
  void save(const std::string& base) const;
  void load(const std::string& base);

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> tensors_;
};

// ---------------------------------------------------------------------------
// Dense / MLP

void register_dense(ParamStore& ps, Rng& rng, const std::string& prefix, int out_dim,
                    int in_dim);

// y = W x + b. gx may be null; gradients accumulate.
void dense_forward(const Tensor& w, const Tensor& b, const double* x, double* y);
void dense_backward(const Tensor& w, const double* x, const double* gy, Tensor& gw,
                    Tensor& gb, double* gx);

// dims = [in, hidden..., out]; leaky-ReLU on hidden layers, linear output.
struct MlpSpec {
  std::string prefix;
  std::vector<int> dims;

  int in_dim() const { return dims.front(); }
  int out_dim() const { return dims.back(); }
  int layers() const { return static_cast<int>(dims.size()) - 1; }
  std::string layer_prefix(int i) const { return prefix + ".fc" + std::to_string(i); }
};

void register_mlp(ParamStore& ps, Rng& rng, const MlpSpec& spec);

struct MlpCache {
  // acts[0] = input copy, acts[i] = post-activation output of layer i-1.
  std::vector<std::vector<double>> acts;
  // pre[i] = pre-activation of layer i.
  std::vector<std::vector<double>> pre;
};

void mlp_forward(const ParamStore& ps, const MlpSpec& spec, const double* x, double* y,
                 MlpCache* cache);
void mlp_backward(const ParamStore& ps, const MlpSpec& spec, const MlpCache& cache,
                  const double* gy, ParamStore& grads, double* gx);

// ---------------------------------------------------------------------------
// Grid convolution (cross-correlation), zero "same" padding, output dims
// ceil(in/stride). Weight shape [out_c, in_c, k, k].

void register_conv2d(ParamStore& ps, Rng& rng, const std::string& prefix, int out_c,
                     int in_c, int k);

Grid conv2d_forward(const Tensor& w, const Tensor& b, const Grid& in, int stride);
void conv2d_backward(const Tensor& w, const Grid& in, const Grid& gout, int stride,
                     Tensor& gw, Tensor& gb, Grid* gin);

// Occupancy-aware variant: in-bounds unoccupied taps are excluded and the tap
// sum is rescaled by taps_total/taps_valid (out-of-bounds zero padding counts
// as valid, so an all-occupied grid reproduces conv2d_forward exactly). Cells
// with no valid occupied tap output zero.
Grid masked_conv2d_forward(const Tensor& w, const Tensor& b, const Grid& in,
                           const std::vector<uint8_t>& occ, int stride);
void masked_conv2d_backward(const Tensor& w, const Grid& in, const std::vector<uint8_t>& occ,
                            const Grid& gout, int stride, Tensor& gw, Tensor& gb, Grid* gin);

// ---------------------------------------------------------------------------
// Bilinear sampling with border clamping. coords are (x, y) pixel positions,
// x along width; integer coords hit grid nodes exactly.

RowMatrix bilinear_sample(const Grid& grid, const RowMatrix& coords);
void bilinear_sample_backward(const Grid& grid, const RowMatrix& coords, const RowMatrix& gout,
                              Grid* ggrid, RowMatrix* gcoords);

// ---------------------------------------------------------------------------
// Feature pyramids: per level, one stride-2 conv then one stride-1 conv, each
// followed by leaky-ReLU. Level l sits at stride 2^(l+1) of the input.

struct PyramidSpec {
  std::string prefix;
  int in_channels = 3;
  std::vector<int> channels;
  int kernel = 3;
  double input_scale = 1.0;  // applied to the input grid before the first conv

  int levels() const { return static_cast<int>(channels.size()); }
  std::string conv_a(int l) const { return prefix + ".level" + std::to_string(l) + ".conv_a"; }
  std::string conv_b(int l) const { return prefix + ".level" + std::to_string(l) + ".conv_b"; }
};

void register_pyramid(ParamStore& ps, Rng& rng, const PyramidSpec& spec);

struct ImagePyramidCache {
  Grid input;
  std::vector<Grid> pre_a, post_a, pre_b, outputs;
};

// Requires the image to match the configured pad size exactly.
std::vector<Grid> image_pyramid_forward(const ParamStore& ps, const PyramidSpec& spec,
                                        const Grid& image, int pad_h, int pad_w,
                                        ImagePyramidCache* cache);
void image_pyramid_backward(const ParamStore& ps, const PyramidSpec& spec,
                            const ImagePyramidCache& cache, std::vector<Grid>& gouts,
                            ParamStore& grads, Grid* gimage);

// One pyramid level of the point branch: grids plus the decimated pseudo
// image and its survivors in row-major cell order.
struct PointLevel {
  PseudoImage pseudo;              // decimated; point_index refers to the base scan
  Grid features;                   // zeroed at unoccupied cells
  std::vector<Vec3> coords;        // survivor xyz, row-major cell order
  std::vector<int32_t> scan_index; // survivor index into the base scan
};

struct PointPyramidCache {
  Grid input;
  std::vector<Grid> pre_a, post_a, pre_b, outputs;
  std::vector<std::vector<uint8_t>> in_occ;  // occupancy seen by each level's convs
};

std::vector<PointLevel> point_pyramid_forward(const ParamStore& ps, const PyramidSpec& spec,
                                              const PseudoImage& base,
                                              PointPyramidCache* cache);
void point_pyramid_backward(const ParamStore& ps, const PyramidSpec& spec,
                            const std::vector<PointLevel>& levels,
                            const PointPyramidCache& cache, std::vector<Grid>& gouts,
                            ParamStore& grads);

// Decimates a pseudo image by 2: each output cell keeps the nearest-range
// point of its 2x2 block, ties to the lower scan index.
PseudoImage decimate_pseudo_image(const PseudoImage& in);

// Softmax over a contiguous range (used by attention and embedding masks).
void softmax_inplace(double* x, int n);
// g_in = J_softmax^T g_out given the softmax outputs y.
void softmax_backward(const double* y, const double* gy, double* gx, int n);

}  // namespace vlo

#include "vlo/nn.hpp"

#include "vlo/log.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vlo {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::add(const std::string& name, std::vector<int> shape) {
  if (tensors_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("ParamStore: bad shape for " + name);
    n *= static_cast<size_t>(d);
  }
  order_.push_back(name);
  Tensor& t = tensors_[name];
  t.shape = std::move(shape);
  t.v.assign(n, 0.0);
  return t;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::invalid_argument("ParamStore: unknown name " + name);
  return it->second;
}

bool ParamStore::has(const std::string& name) const { return tensors_.count(name) != 0; }

void ParamStore::init_uniform(const std::string& name, int fan_in, Rng& rng) {
  Tensor& t = at(name);
  const double s = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
  for (double& x : t.v) x = rng.uniform(-s, s);
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  out.seed = seed;
  for (const auto& name : order_) out.add(name, tensors_.at(name).shape);
  return out;
}

void ParamStore::fill(double value) {
  for (auto& name : order_)
    for (double& x : tensors_[name].v) x = value;
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& name : order_) n += tensors_.at(name).size();
  return n;
}

void ParamStore::save(const std::string& base) const {
  std::ofstream manifest(base + ".manifest");
  if (!manifest) throw std::runtime_error("ParamStore: cannot write " + base + ".manifest");
  manifest << "vlo-params v1\n";
  manifest << "seed " << seed << "\n";
  manifest << "tensors " << order_.size() << "\n";
  size_t offset = 0;
  for (const auto& name : order_) {
    const Tensor& t = tensors_.at(name);
    manifest << name << " f32 " << t.shape.size();
    for (int d : t.shape) manifest << " " << d;
    manifest << " " << offset << "\n";
    offset += t.size();
  }
  manifest.close();

  std::ofstream blob(base + ".bin", std::ios::binary);
  if (!blob) throw std::runtime_error("ParamStore: cannot write " + base + ".bin");
  std::vector<float> buf;
  for (const auto& name : order_) {
    const Tensor& t = tensors_.at(name);
    buf.resize(t.size());
    for (size_t i = 0; i < t.size(); ++i) buf[i] = static_cast<float>(t.v[i]);
    blob.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!blob) throw std::runtime_error("ParamStore: short write to " + base + ".bin");
}

void ParamStore::load(const std::string& base) {
  std::ifstream manifest(base + ".manifest");
  if (!manifest) throw std::runtime_error("ParamStore: cannot read " + base + ".manifest");
  std::string line;
  if (!std::getline(manifest, line) || line != "vlo-params v1")
    throw std::runtime_error("ParamStore: bad manifest header in " + base);
  uint64_t file_seed = 0;
  size_t count = 0;
  {
    std::string key;
    manifest >> key >> file_seed;
    if (key != "seed") throw std::runtime_error("ParamStore: missing seed line");
    manifest >> key >> count;
    if (key != "tensors") throw std::runtime_error("ParamStore: missing tensors line");
  }
  if (count != order_.size())
    throw std::runtime_error("ParamStore: tensor count mismatch (file " + std::to_string(count) +
                             ", registered " + std::to_string(order_.size()) + ")");

  std::ifstream blob(base + ".bin", std::ios::binary);
  if (!blob) throw std::runtime_error("ParamStore: cannot read " + base + ".bin");

  for (size_t k = 0; k < count; ++k) {
    std::string name, dtype;
    size_t rank = 0;
    manifest >> name >> dtype >> rank;
    if (!manifest) throw std::runtime_error("ParamStore: truncated manifest");
    if (dtype != "f32") throw std::runtime_error("ParamStore: unsupported dtype " + dtype);
    std::vector<int> shape(rank);
    for (auto& d : shape) manifest >> d;
    size_t offset = 0;
    manifest >> offset;
    if (!has(name)) throw std::runtime_error("ParamStore: unexpected tensor " + name);
    Tensor& t = at(name);
    if (t.shape != shape) throw std::runtime_error("ParamStore: shape mismatch for " + name);
    blob.seekg(static_cast<std::streamoff>(offset * sizeof(float)));
    std::vector<float> buf(t.size());
    blob.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!blob) throw std::runtime_error("ParamStore: truncated blob for " + name);
    for (size_t i = 0; i < t.size(); ++i) t.v[i] = static_cast<double>(buf[i]);
  }
  seed = file_seed;
}

// ---------------------------------------------------------------------------
// Dense / MLP

void register_dense(ParamStore& ps, Rng& rng, const std::string& prefix, int out_dim,
                    int in_dim) {
  ps.add(prefix + ".weight", {out_dim, in_dim});
  ps.add(prefix + ".bias", {out_dim});
  ps.init_uniform(prefix + ".weight", in_dim, rng);
  ps.init_uniform(prefix + ".bias", in_dim, rng);
}

void dense_forward(const Tensor& w, const Tensor& b, const double* x, double* y) {
  const int out_dim = w.dim(0), in_dim = w.dim(1);
  for (int o = 0; o < out_dim; ++o) {
    const double* wr = w.v.data() + static_cast<size_t>(o) * in_dim;
    double acc = b.v[o];
    for (int i = 0; i < in_dim; ++i) acc += wr[i] * x[i];
    y[o] = acc;
  }
}

void dense_backward(const Tensor& w, const double* x, const double* gy, Tensor& gw,
                    Tensor& gb, double* gx) {
  const int out_dim = w.dim(0), in_dim = w.dim(1);
  for (int o = 0; o < out_dim; ++o) {
    const double g = gy[o];
    gb.v[o] += g;
    double* gwr = gw.v.data() + static_cast<size_t>(o) * in_dim;
    const double* wr = w.v.data() + static_cast<size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) {
      gwr[i] += g * x[i];
      if (gx) gx[i] += g * wr[i];
    }
  }
}

void register_mlp(ParamStore& ps, Rng& rng, const MlpSpec& spec) {
  for (int i = 0; i < spec.layers(); ++i)
    register_dense(ps, rng, spec.layer_prefix(i), spec.dims[i + 1], spec.dims[i]);
}

void mlp_forward(const ParamStore& ps, const MlpSpec& spec, const double* x, double* y,
                 MlpCache* cache) {
  const int layers = spec.layers();
  std::vector<double> cur(x, x + spec.in_dim());
  if (cache) {
    cache->acts.assign(1, cur);
    cache->pre.clear();
  }
  for (int l = 0; l < layers; ++l) {
    const Tensor& w = ps.at(spec.layer_prefix(l) + ".weight");
    const Tensor& b = ps.at(spec.layer_prefix(l) + ".bias");
    std::vector<double> nxt(spec.dims[l + 1]);
    dense_forward(w, b, cur.data(), nxt.data());
    if (cache) cache->pre.push_back(nxt);
    if (l + 1 < layers)
      for (double& v : nxt) v = leaky_relu(v);
    if (cache) cache->acts.push_back(nxt);
    cur = std::move(nxt);
  }
  std::copy(cur.begin(), cur.end(), y);
}

void mlp_backward(const ParamStore& ps, const MlpSpec& spec, const MlpCache& cache,
                  const double* gy, ParamStore& grads, double* gx) {
  const int layers = spec.layers();
  std::vector<double> g(gy, gy + spec.out_dim());
  for (int l = layers - 1; l >= 0; --l) {
    if (l + 1 < layers) {
      const std::vector<double>& pre = cache.pre[l];
      for (size_t i = 0; i < g.size(); ++i) g[i] *= leaky_relu_grad(pre[i]);
    }
    const Tensor& w = ps.at(spec.layer_prefix(l) + ".weight");
    Tensor& gw = grads.at(spec.layer_prefix(l) + ".weight");
    Tensor& gb = grads.at(spec.layer_prefix(l) + ".bias");
    std::vector<double> gprev(spec.dims[l], 0.0);
    dense_backward(w, cache.acts[l].data(), g.data(), gw, gb, gprev.data());
    if (l == 0) {
      if (gx)
        for (int i = 0; i < spec.dims[0]; ++i) gx[i] += gprev[i];
    } else {
      g = std::move(gprev);
    }
  }
}

// ---------------------------------------------------------------------------
// Convolutions

void register_conv2d(ParamStore& ps, Rng& rng, const std::string& prefix, int out_c,
                     int in_c, int k) {
  ps.add(prefix + ".weight", {out_c, in_c, k, k});
  ps.add(prefix + ".bias", {out_c});
  ps.init_uniform(prefix + ".weight", in_c * k * k, rng);
  ps.init_uniform(prefix + ".bias", in_c * k * k, rng);
}

namespace {

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

void check_conv_shapes(const Tensor& w, const Tensor& b, const Grid& in) {
  if (w.shape.size() != 4) throw std::invalid_argument("conv2d: weight must be rank 4");
  if (w.dim(1) != in.c) throw std::invalid_argument("conv2d: in-channel mismatch");
  if (b.shape.size() != 1 || b.dim(0) != w.dim(0))
    throw std::invalid_argument("conv2d: bias shape mismatch");
  if (w.dim(2) != w.dim(3) || w.dim(2) % 2 == 0)
    throw std::invalid_argument("conv2d: kernel must be square and odd");
}

}  // namespace

Grid conv2d_forward(const Tensor& w, const Tensor& b, const Grid& in, int stride) {
  check_conv_shapes(w, b, in);
  const int out_c = w.dim(0), in_c = w.dim(1), k = w.dim(2), pad = k / 2;
  Grid out(ceil_div(in.h, stride), ceil_div(in.w, stride), out_c);
  parallel_for(static_cast<size_t>(out.h), [&](size_t orr) {
    const int orow = static_cast<int>(orr);
    for (int ocol = 0; ocol < out.w; ++ocol) {
      for (int f = 0; f < out_c; ++f) {
        double acc = b.v[f];
        for (int i = 0; i < k; ++i) {
          const int r = orow * stride + i - pad;
          if (r < 0 || r >= in.h) continue;
          for (int j = 0; j < k; ++j) {
            const int c = ocol * stride + j - pad;
            if (c < 0 || c >= in.w) continue;
            const double* wp = w.v.data() + ((static_cast<size_t>(f) * in_c) * k + i) * k + j;
            const double* ip = in.v.data() + in.idx(r, c, 0);
            for (int ic = 0; ic < in_c; ++ic)
              acc += wp[static_cast<size_t>(ic) * k * k] * ip[ic];
          }
        }
        out.at(orow, ocol, f) = acc;
      }
    }
  });
  return out;
}

void conv2d_backward(const Tensor& w, const Grid& in, const Grid& gout, int stride,
                     Tensor& gw, Tensor& gb, Grid* gin) {
  const int out_c = w.dim(0), in_c = w.dim(1), k = w.dim(2), pad = k / 2;
  for (int orow = 0; orow < gout.h; ++orow) {
    for (int ocol = 0; ocol < gout.w; ++ocol) {
      for (int f = 0; f < out_c; ++f) {
        const double g = gout.at(orow, ocol, f);
        if (g == 0.0) continue;
        gb.v[f] += g;
        for (int i = 0; i < k; ++i) {
          const int r = orow * stride + i - pad;
          if (r < 0 || r >= in.h) continue;
          for (int j = 0; j < k; ++j) {
            const int c = ocol * stride + j - pad;
            if (c < 0 || c >= in.w) continue;
            const size_t wbase = ((static_cast<size_t>(f) * in_c) * k + i) * k + j;
            const double* ip = in.v.data() + in.idx(r, c, 0);
            for (int ic = 0; ic < in_c; ++ic) {
              gw.v[wbase + static_cast<size_t>(ic) * k * k] += g * ip[ic];
              if (gin)
                gin->at(r, c, ic) += g * w.v[wbase + static_cast<size_t>(ic) * k * k];
            }
          }
        }
      }
    }
  }
}

Grid masked_conv2d_forward(const Tensor& w, const Tensor& b, const Grid& in,
                           const std::vector<uint8_t>& occ, int stride) {
  check_conv_shapes(w, b, in);
  if (occ.size() != static_cast<size_t>(in.h) * in.w)
    throw std::invalid_argument("masked_conv2d: occupancy size mismatch");
  const int out_c = w.dim(0), in_c = w.dim(1), k = w.dim(2), pad = k / 2;
  const int taps_total = k * k;
  Grid out(ceil_div(in.h, stride), ceil_div(in.w, stride), out_c);
  parallel_for(static_cast<size_t>(out.h), [&](size_t orr) {
    const int orow = static_cast<int>(orr);
    std::vector<double> acc(out_c);
    for (int ocol = 0; ocol < out.w; ++ocol) {
      int taps_valid = 0;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int i = 0; i < k; ++i) {
        const int r = orow * stride + i - pad;
        for (int j = 0; j < k; ++j) {
          const int c = ocol * stride + j - pad;
          if (r < 0 || r >= in.h || c < 0 || c >= in.w) {
            ++taps_valid;  // zero padding counts as a valid (zero) tap
            continue;
          }
          if (!occ[static_cast<size_t>(r) * in.w + c]) continue;
          ++taps_valid;
          const double* ip = in.v.data() + in.idx(r, c, 0);
          for (int f = 0; f < out_c; ++f) {
            const double* wp = w.v.data() + ((static_cast<size_t>(f) * in_c) * k + i) * k + j;
            double a = 0.0;
            for (int ic = 0; ic < in_c; ++ic) a += wp[static_cast<size_t>(ic) * k * k] * ip[ic];
            acc[f] += a;
          }
        }
      }
      if (taps_valid == 0) {
        for (int f = 0; f < out_c; ++f) out.at(orow, ocol, f) = 0.0;
      } else {
        const double scale = static_cast<double>(taps_total) / taps_valid;
        for (int f = 0; f < out_c; ++f) out.at(orow, ocol, f) = scale * acc[f] + b.v[f];
      }
    }
  });
  return out;
}

void masked_conv2d_backward(const Tensor& w, const Grid& in, const std::vector<uint8_t>& occ,
                            const Grid& gout, int stride, Tensor& gw, Tensor& gb, Grid* gin) {
  const int out_c = w.dim(0), in_c = w.dim(1), k = w.dim(2), pad = k / 2;
  const int taps_total = k * k;
  for (int orow = 0; orow < gout.h; ++orow) {
    for (int ocol = 0; ocol < gout.w; ++ocol) {
      int taps_valid = 0;
      for (int i = 0; i < k; ++i) {
        const int r = orow * stride + i - pad;
        for (int j = 0; j < k; ++j) {
          const int c = ocol * stride + j - pad;
          if (r < 0 || r >= in.h || c < 0 || c >= in.w) {
            ++taps_valid;
            continue;
          }
          if (occ[static_cast<size_t>(r) * in.w + c]) ++taps_valid;
        }
      }
      if (taps_valid == 0) continue;
      const double scale = static_cast<double>(taps_total) / taps_valid;
      for (int f = 0; f < out_c; ++f) {
        const double g = gout.at(orow, ocol, f);
        if (g == 0.0) continue;
        gb.v[f] += g;
        const double gs = g * scale;
        for (int i = 0; i < k; ++i) {
          const int r = orow * stride + i - pad;
          if (r < 0 || r >= in.h) continue;
          for (int j = 0; j < k; ++j) {
            const int c = ocol * stride + j - pad;
            if (c < 0 || c >= in.w) continue;
            if (!occ[static_cast<size_t>(r) * in.w + c]) continue;
            const size_t wbase = ((static_cast<size_t>(f) * in_c) * k + i) * k + j;
            const double* ip = in.v.data() + in.idx(r, c, 0);
            for (int ic = 0; ic < in_c; ++ic) {
              gw.v[wbase + static_cast<size_t>(ic) * k * k] += gs * ip[ic];
              if (gin)
                gin->at(r, c, ic) += gs * w.v[wbase + static_cast<size_t>(ic) * k * k];
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Bilinear sampling

RowMatrix bilinear_sample(const Grid& grid, const RowMatrix& coords) {
  if (coords.c != 2) throw std::invalid_argument("bilinear_sample: coords must be N x 2");
  RowMatrix out(coords.n, grid.c);
  for (int i = 0; i < coords.n; ++i) {
    const double x = coords.at(i, 0), y = coords.at(i, 1);
    if (!std::isfinite(x) || !std::isfinite(y))
      throw std::invalid_argument("bilinear_sample: non-finite coordinate");
    const double xc = std::clamp(x, 0.0, static_cast<double>(grid.w - 1));
    const double yc = std::clamp(y, 0.0, static_cast<double>(grid.h - 1));
    const int x0 = std::min(static_cast<int>(std::floor(xc)), grid.w - 1);
    const int y0 = std::min(static_cast<int>(std::floor(yc)), grid.h - 1);
    const int x1 = std::min(x0 + 1, grid.w - 1);
    const int y1 = std::min(y0 + 1, grid.h - 1);
    const double fx = xc - x0, fy = yc - y0;
    for (int ch = 0; ch < grid.c; ++ch) {
      const double top = (1.0 - fx) * grid.at(y0, x0, ch) + fx * grid.at(y0, x1, ch);
      const double bot = (1.0 - fx) * grid.at(y1, x0, ch) + fx * grid.at(y1, x1, ch);
      out.at(i, ch) = (1.0 - fy) * top + fy * bot;
    }
  }
  return out;
}

void bilinear_sample_backward(const Grid& grid, const RowMatrix& coords, const RowMatrix& gout,
                              Grid* ggrid, RowMatrix* gcoords) {
  for (int i = 0; i < coords.n; ++i) {
    const double x = coords.at(i, 0), y = coords.at(i, 1);
    const double xc = std::clamp(x, 0.0, static_cast<double>(grid.w - 1));
    const double yc = std::clamp(y, 0.0, static_cast<double>(grid.h - 1));
    const bool x_clamped = (x != xc), y_clamped = (y != yc);
    const int x0 = std::min(static_cast<int>(std::floor(xc)), grid.w - 1);
    const int y0 = std::min(static_cast<int>(std::floor(yc)), grid.h - 1);
    const int x1 = std::min(x0 + 1, grid.w - 1);
    const int y1 = std::min(y0 + 1, grid.h - 1);
    const double fx = xc - x0, fy = yc - y0;
    double gx = 0.0, gy = 0.0;
    for (int ch = 0; ch < grid.c; ++ch) {
      const double g = gout.at(i, ch);
      if (ggrid) {
        ggrid->at(y0, x0, ch) += g * (1.0 - fx) * (1.0 - fy);
        ggrid->at(y0, x1, ch) += g * fx * (1.0 - fy);
        ggrid->at(y1, x0, ch) += g * (1.0 - fx) * fy;
        ggrid->at(y1, x1, ch) += g * fx * fy;
      }
      const double top = grid.at(y0, x1, ch) - grid.at(y0, x0, ch);
      const double bot = grid.at(y1, x1, ch) - grid.at(y1, x0, ch);
      gx += g * ((1.0 - fy) * top + fy * bot);
      const double left = grid.at(y1, x0, ch) - grid.at(y0, x0, ch);
      const double right = grid.at(y1, x1, ch) - grid.at(y0, x1, ch);
      gy += g * ((1.0 - fx) * left + fx * right);
    }
    if (gcoords) {
      gcoords->at(i, 0) += x_clamped ? 0.0 : gx;
      gcoords->at(i, 1) += y_clamped ? 0.0 : gy;
    }
  }
}

// ---------------------------------------------------------------------------
// Pyramids

void register_pyramid(ParamStore& ps, Rng& rng, const PyramidSpec& spec) {
  int in_c = spec.in_channels;
  for (int l = 0; l < spec.levels(); ++l) {
    register_conv2d(ps, rng, spec.conv_a(l), spec.channels[l], in_c, spec.kernel);
    register_conv2d(ps, rng, spec.conv_b(l), spec.channels[l], spec.channels[l], spec.kernel);
    in_c = spec.channels[l];
  }
}

namespace {

Grid apply_leaky(const Grid& g) {
  Grid out = g;
  for (double& v : out.v) v = leaky_relu(v);
  return out;
}

void leaky_backward_inplace(const Grid& pre, Grid& g) {
  for (size_t i = 0; i < g.v.size(); ++i) g.v[i] *= leaky_relu_grad(pre.v[i]);
}

void zero_unoccupied(Grid& g, const std::vector<uint8_t>& occ) {
  for (int r = 0; r < g.h; ++r)
    for (int c = 0; c < g.w; ++c)
      if (!occ[static_cast<size_t>(r) * g.w + c])
        for (int ch = 0; ch < g.c; ++ch) g.at(r, c, ch) = 0.0;
}

}  // namespace

std::vector<Grid> image_pyramid_forward(const ParamStore& ps, const PyramidSpec& spec,
                                        const Grid& image, int pad_h, int pad_w,
                                        ImagePyramidCache* cache) {
  if (image.h != pad_h || image.w != pad_w)
    throw std::invalid_argument("image_pyramid: image does not match configured pad size");
  if (image.c != spec.in_channels)
    throw std::invalid_argument("image_pyramid: channel mismatch");
  std::vector<Grid> outputs;
  if (cache) {
    cache->input = image;
    cache->pre_a.clear();
    cache->post_a.clear();
    cache->pre_b.clear();
    cache->outputs.clear();
  }
  const Grid* cur = &image;
  for (int l = 0; l < spec.levels(); ++l) {
    Grid pre_a = conv2d_forward(ps.at(spec.conv_a(l) + ".weight"), ps.at(spec.conv_a(l) + ".bias"),
                                *cur, 2);
    Grid post_a = apply_leaky(pre_a);
    Grid pre_b = conv2d_forward(ps.at(spec.conv_b(l) + ".weight"), ps.at(spec.conv_b(l) + ".bias"),
                                post_a, 1);
    Grid out = apply_leaky(pre_b);
    if (cache) {
      cache->pre_a.push_back(std::move(pre_a));
      cache->post_a.push_back(post_a);
      cache->pre_b.push_back(std::move(pre_b));
      cache->outputs.push_back(out);
    }
    outputs.push_back(std::move(out));
    cur = &outputs.back();
  }
  return outputs;
}

void image_pyramid_backward(const ParamStore& ps, const PyramidSpec& spec,
                            const ImagePyramidCache& cache, std::vector<Grid>& gouts,
                            ParamStore& grads, Grid* gimage) {
  for (int l = spec.levels() - 1; l >= 0; --l) {
    Grid g = gouts[l];
    leaky_backward_inplace(cache.pre_b[l], g);
    Grid g_post_a(cache.post_a[l].h, cache.post_a[l].w, cache.post_a[l].c);
    conv2d_backward(ps.at(spec.conv_b(l) + ".weight"), cache.post_a[l], g, 1,
                    grads.at(spec.conv_b(l) + ".weight"), grads.at(spec.conv_b(l) + ".bias"),
                    &g_post_a);
    leaky_backward_inplace(cache.pre_a[l], g_post_a);
    const Grid& in = (l == 0) ? cache.input : cache.outputs[l - 1];
    Grid* gin = nullptr;
    Grid gin_store;
    if (l > 0) {
      gin = &gouts[l - 1];  // accumulate into the finer level's output grad
    } else if (gimage) {
      gin_store = Grid(in.h, in.w, in.c);
      gin = &gin_store;
    }
    conv2d_backward(ps.at(spec.conv_a(l) + ".weight"), in, g_post_a, 2,
                    grads.at(spec.conv_a(l) + ".weight"), grads.at(spec.conv_a(l) + ".bias"),
                    gin);
    if (l == 0 && gimage) {
      for (size_t i = 0; i < gin_store.v.size(); ++i) gimage->v[i] += gin_store.v[i];
    }
  }
}

PseudoImage decimate_pseudo_image(const PseudoImage& in) {
  PseudoImage out(ceil_div(in.h, 2), ceil_div(in.w, 2));
  for (int r = 0; r < out.h; ++r) {
    for (int c = 0; c < out.w; ++c) {
      double best = 0.0;
      int best_idx = -1;
      Vec3 best_p = Vec3::Zero();
      for (int dr = 0; dr < 2; ++dr) {
        for (int dc = 0; dc < 2; ++dc) {
          const int rr = 2 * r + dr, cc = 2 * c + dc;
          if (rr >= in.h || cc >= in.w) continue;
          if (!in.occupied(rr, cc)) continue;
          const Vec3 p = in.point_at(rr, cc);
          const double range = p.norm();
          const int idx = in.index_at(rr, cc);
          if (best_idx < 0 || range < best || (range == best && idx < best_idx)) {
            best = range;
            best_idx = idx;
            best_p = p;
          }
        }
      }
      if (best_idx >= 0) {
        const size_t cell = static_cast<size_t>(r) * out.w + c;
        out.occupancy[cell] = 1;
        out.point_index[cell] = best_idx;
        out.xyz.at(r, c, 0) = best_p.x();
        out.xyz.at(r, c, 1) = best_p.y();
        out.xyz.at(r, c, 2) = best_p.z();
      }
    }
  }
  return out;
}

std::vector<PointLevel> point_pyramid_forward(const ParamStore& ps, const PyramidSpec& spec,
                                              const PseudoImage& base,
                                              PointPyramidCache* cache) {
  if (base.count_occupied() == 0)
    throw std::invalid_argument("point_pyramid: empty pseudo image");
  std::vector<PointLevel> levels(spec.levels());
  Grid scaled_input = base.xyz;
  if (spec.input_scale != 1.0)
    for (double& v : scaled_input.v) v *= spec.input_scale;
  if (cache) {
    cache->input = scaled_input;
    cache->pre_a.clear();
    cache->post_a.clear();
    cache->pre_b.clear();
    cache->outputs.clear();
    cache->in_occ.clear();
  }
  const Grid* cur = &scaled_input;
  const std::vector<uint8_t>* cur_occ = &base.occupancy;
  const PseudoImage* cur_pseudo = &base;
  for (int l = 0; l < spec.levels(); ++l) {
    PointLevel& lvl = levels[l];
    lvl.pseudo = decimate_pseudo_image(*cur_pseudo);
    Grid pre_a = masked_conv2d_forward(ps.at(spec.conv_a(l) + ".weight"),
                                       ps.at(spec.conv_a(l) + ".bias"), *cur, *cur_occ, 2);
    Grid post_a = apply_leaky(pre_a);
    zero_unoccupied(post_a, lvl.pseudo.occupancy);
    Grid pre_b = masked_conv2d_forward(ps.at(spec.conv_b(l) + ".weight"),
                                       ps.at(spec.conv_b(l) + ".bias"), post_a,
                                       lvl.pseudo.occupancy, 1);
    Grid out = apply_leaky(pre_b);
    zero_unoccupied(out, lvl.pseudo.occupancy);
    if (cache) {
      cache->in_occ.push_back(*cur_occ);
      cache->pre_a.push_back(std::move(pre_a));
      cache->post_a.push_back(post_a);
      cache->pre_b.push_back(std::move(pre_b));
      cache->outputs.push_back(out);
    }
    lvl.features = std::move(out);
    for (int r = 0; r < lvl.pseudo.h; ++r) {
      for (int c = 0; c < lvl.pseudo.w; ++c) {
        if (!lvl.pseudo.occupied(r, c)) continue;
        lvl.coords.push_back(lvl.pseudo.point_at(r, c));
        lvl.scan_index.push_back(lvl.pseudo.index_at(r, c));
      }
    }
    cur = &lvl.features;
    cur_occ = &lvl.pseudo.occupancy;
    cur_pseudo = &lvl.pseudo;
  }
  return levels;
}

void point_pyramid_backward(const ParamStore& ps, const PyramidSpec& spec,
                            const std::vector<PointLevel>& levels,
                            const PointPyramidCache& cache, std::vector<Grid>& gouts,
                            ParamStore& grads) {
  for (int l = spec.levels() - 1; l >= 0; --l) {
    Grid g = gouts[l];
    zero_unoccupied(g, levels[l].pseudo.occupancy);
    leaky_backward_inplace(cache.pre_b[l], g);
    Grid g_post_a(cache.post_a[l].h, cache.post_a[l].w, cache.post_a[l].c);
    masked_conv2d_backward(ps.at(spec.conv_b(l) + ".weight"), cache.post_a[l],
                           levels[l].pseudo.occupancy, g, 1,
                           grads.at(spec.conv_b(l) + ".weight"),
                           grads.at(spec.conv_b(l) + ".bias"), &g_post_a);
    zero_unoccupied(g_post_a, levels[l].pseudo.occupancy);
    leaky_backward_inplace(cache.pre_a[l], g_post_a);
    const Grid& in = (l == 0) ? cache.input : cache.outputs[l - 1];
    Grid* gin = (l > 0) ? &gouts[l - 1] : nullptr;
    masked_conv2d_backward(ps.at(spec.conv_a(l) + ".weight"), in, cache.in_occ[l], g_post_a, 2,
                           grads.at(spec.conv_a(l) + ".weight"),
                           grads.at(spec.conv_a(l) + ".bias"), gin);
  }
}

// ---------------------------------------------------------------------------
// Softmax

void softmax_inplace(double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    sum += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= sum;
}

void softmax_backward(const double* y, const double* gy, double* gx, int n) {
  double dot = 0.0;
  for (int i = 0; i < n; ++i) dot += y[i] * gy[i];
  for (int i = 0; i < n; ++i) gx[i] += y[i] * (gy[i] - dot);
}

}  // namespace vlo

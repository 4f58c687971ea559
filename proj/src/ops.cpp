#include "dcfmn/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>

namespace dcfmn {

void ConvSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0 || groups <= 0) {
    throw ConfigError("conv: channel counts and groups must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("conv: groups=" + std::to_string(groups) + " does not divide channels " +
                      std::to_string(in_channels) + "->" + std::to_string(out_channels));
  }
  if (kernel <= 0 || kernel % 2 == 0) {
    throw ConfigError("conv: kernel must be odd and positive, got " + std::to_string(kernel));
  }
  if (dilation < 1) throw ConfigError("conv: dilation must be >= 1");
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
void check_conv_operands(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<std::type_identity_t<T>>* bias,
                         const ConvSpec& spec) {
  spec.validate();
  if (x.c() != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(x.c()) + " channels, conv expects " +
                     std::to_string(spec.in_channels));
  }
  if (weight.shape() != spec.weight_shape()) {
    throw ShapeError("conv2d: weight extents " + weight.shape().str() + ", expected " +
                     spec.weight_shape().str());
  }
  if (bias != nullptr && bias->shape() != Shape4{1, spec.out_channels, 1, 1}) {
    throw ShapeError("conv2d: bias extents " + bias->shape().str());
  }
}

// Valid output range [lo, hi) along one axis for tap offset `off`.
inline void tap_range(int extent, int off, int& lo, int& hi) {
  lo = std::max(0, -off);
  hi = std::min(extent, extent - off);
}

// Unfolds one group of input channels into a (cin_g*k*k, h*w) matrix.
template <typename T>
void im2col(const T* in, int cin_g, int h, int w, const ConvSpec& spec, T* col) {
  const int k = spec.kernel;
  const int d = spec.dilation;
  const int pad = spec.padding();
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < cin_g; ++ci) {
    const T* src = in + ci * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const int oy = ky * d - pad;
        const int ox = kx * d - pad;
        int x0 = 0, x1 = 0;
        tap_range(w, ox, x0, x1);
        for (int y = 0; y < h; ++y) {
          T* row = dst + static_cast<std::size_t>(y) * w;
          const int iy = y + oy;
          if (iy < 0 || iy >= h || x0 >= x1) {
            std::fill(row, row + w, T(0));
            continue;
          }
          std::fill(row, row + x0, T(0));
          const T* srow = src + static_cast<std::size_t>(iy) * w + ox;
          for (int x = x0; x < x1; ++x) row[x] = srow[x];
          std::fill(row + x1, row + w, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int cin_g, int h, int w, const ConvSpec& spec, T* out) {
  const int k = spec.kernel;
  const int d = spec.dilation;
  const int pad = spec.padding();
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < cin_g; ++ci) {
    T* dst = out + ci * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const int oy = ky * d - pad;
        const int ox = kx * d - pad;
        int x0 = 0, x1 = 0;
        tap_range(w, ox, x0, x1);
        for (int y = 0; y < h; ++y) {
          const int iy = y + oy;
          if (iy < 0 || iy >= h) continue;
          const T* srow = src + static_cast<std::size_t>(y) * w;
          T* drow = dst + static_cast<std::size_t>(iy) * w + ox;
          for (int x = x0; x < x1; ++x) drow[x] += srow[x];
        }
      }
    }
  }
}

// One input plane, one kernel, accumulated into `out`.
template <typename T>
void depthwise_plane(const T* in, const T* kern, int h, int w, const ConvSpec& spec, T* out) {
  const int k = spec.kernel;
  const int d = spec.dilation;
  const int pad = spec.padding();
  for (int ky = 0; ky < k; ++ky) {
    const int oy = ky * d - pad;
    int y0 = 0, y1 = 0;
    tap_range(h, oy, y0, y1);
    for (int kx = 0; kx < k; ++kx) {
      const T wv = kern[ky * k + kx];
      if (wv == T(0)) continue;
      const int ox = kx * d - pad;
      int x0 = 0, x1 = 0;
      tap_range(w, ox, x0, x1);
      for (int y = y0; y < y1; ++y) {
        const T* srow = in + static_cast<std::size_t>(y + oy) * w + ox;
        T* drow = out + static_cast<std::size_t>(y) * w;
        for (int x = x0; x < x1; ++x) drow[x] += wv * srow[x];
      }
    }
  }
}

template <typename T>
bool is_depthwise(const ConvSpec& spec) {
  return spec.groups == spec.in_channels && spec.groups == spec.out_channels;
}

}  // namespace

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<std::type_identity_t<T>>* bias,
                  const ConvSpec& spec) {
  check_conv_operands(x, weight, bias, spec);
  const int n = x.n(), h = x.h(), w = x.w();
  const int g = spec.groups;
  const int cin_g = spec.in_channels / g;
  const int cout_g = spec.out_channels / g;
  const int k = spec.kernel;
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index kdim = static_cast<Eigen::Index>(cin_g) * k * k;

  Tensor4<T> out(n, spec.out_channels, h, w);
  if (is_depthwise<T>(spec)) {
    for (int in = 0; in < n; ++in) {
      for (int ch = 0; ch < spec.out_channels; ++ch) {
        depthwise_plane(x.plane(in, ch), weight.plane(ch, 0), h, w, spec, out.plane(in, ch));
      }
    }
  } else {
    const bool pointwise = (k == 1);
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim * hw));
    for (int in = 0; in < n; ++in) {
      for (int gi = 0; gi < g; ++gi) {
        const T* src = x.plane(in, gi * cin_g);
        if (!pointwise) im2col(src, cin_g, h, w, spec, col.data());
        CMapMat<T> cols(pointwise ? src : col.data(), kdim, hw);
        CMapMat<T> wmat(weight.plane(gi * cout_g, 0), cout_g, kdim);
        MapMat<T> dst(out.plane(in, gi * cout_g), cout_g, hw);
        dst.noalias() = wmat * cols;
      }
    }
  }
  if (bias != nullptr) {
    for (int in = 0; in < n; ++in) {
      for (int ch = 0; ch < spec.out_channels; ++ch) {
        const T b = (*bias)[ch];
        T* p = out.plane(in, ch);
        for (Eigen::Index i = 0; i < hw; ++i) p[i] += b;
      }
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> conv2d_vjp(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<std::type_identity_t<T>>* bias,
                        const ConvSpec& spec, const Tensor4<T>& upstream) {
  check_conv_operands(x, weight, bias, spec);
  const Shape4 out_shape{x.n(), spec.out_channels, x.h(), x.w()};
  if (upstream.shape() != out_shape) {
    throw ShapeError("conv2d_vjp: upstream extents " + upstream.shape().str() + ", expected " +
                     out_shape.str());
  }
  const int n = x.n(), h = x.h(), w = x.w();
  const int g = spec.groups;
  const int cin_g = spec.in_channels / g;
  const int cout_g = spec.out_channels / g;
  const int k = spec.kernel;
  const Eigen::Index hw = static_cast<Eigen::Index>(h) * w;
  const Eigen::Index kdim = static_cast<Eigen::Index>(cin_g) * k * k;

  ConvGrads<T> grads{Tensor4<T>(x.shape()), Tensor4<T>(weight.shape()), {}};

  if (is_depthwise<T>(spec)) {
    const int d = spec.dilation;
    const int pad = spec.padding();
    for (int in = 0; in < n; ++in) {
      for (int ch = 0; ch < spec.out_channels; ++ch) {
        const T* src = x.plane(in, ch);
        const T* up = upstream.plane(in, ch);
        const T* kern = weight.plane(ch, 0);
        T* dsrc = grads.dx.plane(in, ch);
        T* dkern = grads.dweight.plane(ch, 0);
        for (int ky = 0; ky < k; ++ky) {
          const int oy = ky * d - pad;
          int y0 = 0, y1 = 0;
          tap_range(h, oy, y0, y1);
          for (int kx = 0; kx < k; ++kx) {
            const int ox = kx * d - pad;
            int x0 = 0, x1 = 0;
            tap_range(w, ox, x0, x1);
            const T wv = kern[ky * k + kx];
            T acc = T(0);
            for (int y = y0; y < y1; ++y) {
              const std::size_t srow = static_cast<std::size_t>(y + oy) * w + ox;
              const T* urow = up + static_cast<std::size_t>(y) * w;
              for (int xx = x0; xx < x1; ++xx) {
                acc += src[srow + xx] * urow[xx];
                dsrc[srow + xx] += wv * urow[xx];
              }
            }
            dkern[ky * k + kx] += acc;
          }
        }
      }
    }
  } else {
    const bool pointwise = (k == 1);
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kdim * hw));
    std::vector<T> dcol(static_cast<std::size_t>(kdim * hw));
    for (int in = 0; in < n; ++in) {
      for (int gi = 0; gi < g; ++gi) {
        const T* src = x.plane(in, gi * cin_g);
        if (!pointwise) im2col(src, cin_g, h, w, spec, col.data());
        CMapMat<T> cols(pointwise ? src : col.data(), kdim, hw);
        CMapMat<T> up(upstream.plane(in, gi * cout_g), cout_g, hw);
        CMapMat<T> wmat(weight.plane(gi * cout_g, 0), cout_g, kdim);
        MapMat<T> dw(grads.dweight.plane(gi * cout_g, 0), cout_g, kdim);
        dw.noalias() += up * cols.transpose();
        if (pointwise) {
          MapMat<T> dx(grads.dx.plane(in, gi * cin_g), kdim, hw);
          dx.noalias() += wmat.transpose() * up;
        } else {
          MapMat<T> dc(dcol.data(), kdim, hw);
          dc.noalias() = wmat.transpose() * up;
          col2im_add(dcol.data(), cin_g, h, w, spec, grads.dx.plane(in, gi * cin_g));
        }
      }
    }
  }

  if (bias != nullptr) {
    grads.dbias = Tensor4<T>(1, spec.out_channels, 1, 1);
    for (int in = 0; in < n; ++in) {
      for (int ch = 0; ch < spec.out_channels; ++ch) {
        const T* up = upstream.plane(in, ch);
        T acc = T(0);
        for (Eigen::Index i = 0; i < hw; ++i) acc += up[i];
        grads.dbias[ch] += acc;
      }
    }
  }
  return grads;
}

template <typename T>
Tensor4<T> gelu(const Tensor4<T>& x) {
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    out[i] = v * T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
  }
  return out;
}

template <typename T>
Tensor4<T> gelu_vjp(const Tensor4<T>& x, const Tensor4<T>& upstream) {
  require_same_shape(x, upstream, "gelu_vjp");
  Tensor4<T> out(x.shape());
  const T inv_sqrt_2pi = T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x[i];
    const T cdf = T(0.5) * (T(1) + std::erf(v * T(std::numbers::sqrt2 / 2)));
    const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
    out[i] = upstream[i] * (cdf + v * pdf);
  }
  return out;
}

namespace {

template <typename T>
void check_affine(const Tensor4<T>& x, const Tensor4<T>& p, const char* what) {
  if (p.shape() != Shape4{1, x.c(), 1, 1}) {
    throw ShapeError(std::string(what) + ": affine extents " + p.shape().str() +
                     " do not match " + std::to_string(x.c()) + " channels");
  }
}

}  // namespace

template <typename T>
Tensor4<T> layer_norm(const Tensor4<T>& x, const Tensor4<T>& gain, const Tensor4<T>& bias,
                      double eps) {
  check_affine(x, gain, "layer_norm");
  check_affine(x, bias, "layer_norm");
  const int c = x.c();
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  Tensor4<T> out(x.shape());
  for (int in = 0; in < x.n(); ++in) {
    const T* src = x.plane(in, 0);
    T* dst = out.plane(in, 0);
    for (std::size_t p = 0; p < hw; ++p) {
      T mean = T(0);
      for (int ch = 0; ch < c; ++ch) mean += src[ch * hw + p];
      mean /= T(c);
      T var = T(0);
      for (int ch = 0; ch < c; ++ch) {
        const T dv = src[ch * hw + p] - mean;
        var += dv * dv;
      }
      var /= T(c);
      const T rstd = T(1) / std::sqrt(var + T(eps));
      for (int ch = 0; ch < c; ++ch) {
        dst[ch * hw + p] = (src[ch * hw + p] - mean) * rstd * gain[ch] + bias[ch];
      }
    }
  }
  return out;
}

template <typename T>
LayerNormGrads<T> layer_norm_vjp(const Tensor4<T>& x, const Tensor4<T>& gain,
                                 const Tensor4<T>& upstream, double eps) {
  check_affine(x, gain, "layer_norm_vjp");
  require_same_shape(x, upstream, "layer_norm_vjp");
  const int c = x.c();
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  LayerNormGrads<T> g{Tensor4<T>(x.shape()), Tensor4<T>(gain.shape()), Tensor4<T>(gain.shape())};
  std::vector<T> xhat(c);
  std::vector<T> dxhat(c);
  for (int in = 0; in < x.n(); ++in) {
    const T* src = x.plane(in, 0);
    const T* up = upstream.plane(in, 0);
    T* dst = g.dx.plane(in, 0);
    for (std::size_t p = 0; p < hw; ++p) {
      T mean = T(0);
      for (int ch = 0; ch < c; ++ch) mean += src[ch * hw + p];
      mean /= T(c);
      T var = T(0);
      for (int ch = 0; ch < c; ++ch) {
        const T dv = src[ch * hw + p] - mean;
        var += dv * dv;
      }
      var /= T(c);
      const T rstd = T(1) / std::sqrt(var + T(eps));
      T mean_dxhat = T(0);
      T mean_dxhat_xhat = T(0);
      for (int ch = 0; ch < c; ++ch) {
        xhat[ch] = (src[ch * hw + p] - mean) * rstd;
        const T u = up[ch * hw + p];
        dxhat[ch] = u * gain[ch];
        g.dgain[ch] += u * xhat[ch];
        g.dbias[ch] += u;
        mean_dxhat += dxhat[ch];
        mean_dxhat_xhat += dxhat[ch] * xhat[ch];
      }
      mean_dxhat /= T(c);
      mean_dxhat_xhat /= T(c);
      for (int ch = 0; ch < c; ++ch) {
        dst[ch * hw + p] = rstd * (dxhat[ch] - mean_dxhat - xhat[ch] * mean_dxhat_xhat);
      }
    }
  }
  return g;
}

template <typename T>
std::vector<Tensor4<T>> chunk_channels(const Tensor4<T>& x, int parts) {
  if (parts <= 0 || x.c() % parts != 0) {
    throw ConfigError("chunk: " + std::to_string(x.c()) + " channels not divisible into " +
                      std::to_string(parts) + " parts");
  }
  const int cc = x.c() / parts;
  const std::size_t block = static_cast<std::size_t>(cc) * x.h() * x.w();
  std::vector<Tensor4<T>> out;
  out.reserve(parts);
  for (int p = 0; p < parts; ++p) {
    Tensor4<T> part(x.n(), cc, x.h(), x.w());
    for (int in = 0; in < x.n(); ++in) {
      const T* src = x.plane(in, p * cc);
      std::copy(src, src + block, part.plane(in, 0));
    }
    out.push_back(std::move(part));
  }
  return out;
}

template <typename T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape4 first = parts.front().shape();
  int total_c = 0;
  for (const auto& p : parts) {
    if (p.n() != first.n || p.h() != first.h || p.w() != first.w) {
      throw ShapeError("concat: extents " + p.shape().str() + " vs " + first.str());
    }
    total_c += p.c();
  }
  Tensor4<T> out(first.n, total_c, first.h, first.w);
  for (int in = 0; in < first.n; ++in) {
    int offset = 0;
    for (const auto& p : parts) {
      const std::size_t block = static_cast<std::size_t>(p.c()) * p.h() * p.w();
      const T* src = p.plane(in, 0);
      std::copy(src, src + block, out.plane(in, offset));
      offset += p.c();
    }
  }
  return out;
}

template <typename T>
std::array<Tensor4<T>, 4> chunk4(const Tensor4<T>& x) {
  auto v = chunk_channels(x, 4);
  return {std::move(v[0]), std::move(v[1]), std::move(v[2]), std::move(v[3])};
}

template <typename T>
Tensor4<T> concat4(const std::array<Tensor4<T>, 4>& parts) {
  return concat_channels<T>(std::span<const Tensor4<T>>(parts.data(), parts.size()));
}

template <typename T>
Tensor4<T> pixel_shuffle(const Tensor4<T>& x, int s) {
  if (s < 1 || x.c() % (s * s) != 0) {
    throw ConfigError("pixel_shuffle: " + std::to_string(x.c()) +
                      " channels not divisible by s^2 for s=" + std::to_string(s));
  }
  const int oc = x.c() / (s * s);
  Tensor4<T> out(x.n(), oc, x.h() * s, x.w() * s);
  for (int in = 0; in < x.n(); ++in) {
    for (int o = 0; o < oc; ++o) {
      for (int y = 0; y < out.h(); ++y) {
        for (int xx = 0; xx < out.w(); ++xx) {
          out(in, o, y, xx) = x(in, o * s * s + (y % s) * s + (xx % s), y / s, xx / s);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> pixel_unshuffle(const Tensor4<T>& x, int s) {
  if (s < 1 || x.h() % s != 0 || x.w() % s != 0) {
    throw ConfigError("pixel_unshuffle: extents not divisible by s=" + std::to_string(s));
  }
  Tensor4<T> out(x.n(), x.c() * s * s, x.h() / s, x.w() / s);
  for (int in = 0; in < x.n(); ++in) {
    for (int o = 0; o < x.c(); ++o) {
      for (int y = 0; y < x.h(); ++y) {
        for (int xx = 0; xx < x.w(); ++xx) {
          out(in, o * s * s + (y % s) * s + (xx % s), y / s, xx / s) = x(in, o, y, xx);
        }
      }
    }
  }
  return out;
}

namespace {

template <typename T>
void check_se(const Tensor4<T>& x, const SeParams<T>& p) {
  const int c = x.c();
  const int mid = p.w1.n();
  if (p.w1.shape() != Shape4{mid, c, 1, 1} || p.b1.shape() != Shape4{1, mid, 1, 1} ||
      p.w2.shape() != Shape4{c, mid, 1, 1} || p.b2.shape() != Shape4{1, c, 1, 1}) {
    throw ShapeError("se_block: parameter extents do not match " + std::to_string(c) +
                     " channels");
  }
}

template <typename T>
struct SeForward {
  std::vector<T> pooled;  // C
  std::vector<T> pre1;    // C/r
  std::vector<T> hidden;  // C/r
  std::vector<T> gate;    // C
};

template <typename T>
SeForward<T> se_gate(const Tensor4<T>& x, int in, const SeParams<T>& p) {
  const int c = x.c();
  const int mid = p.w1.n();
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  SeForward<T> f{std::vector<T>(c), std::vector<T>(mid), std::vector<T>(mid), std::vector<T>(c)};
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x.plane(in, ch);
    T acc = T(0);
    for (std::size_t i = 0; i < hw; ++i) acc += src[i];
    f.pooled[ch] = acc / T(hw);
  }
  for (int m = 0; m < mid; ++m) {
    T acc = p.b1[m];
    for (int ch = 0; ch < c; ++ch) acc += p.w1[static_cast<std::size_t>(m) * c + ch] * f.pooled[ch];
    f.pre1[m] = acc;
    f.hidden[m] = acc > T(0) ? acc : T(0);
  }
  for (int ch = 0; ch < c; ++ch) {
    T acc = p.b2[ch];
    for (int m = 0; m < mid; ++m) acc += p.w2[static_cast<std::size_t>(ch) * mid + m] * f.hidden[m];
    f.gate[ch] = T(1) / (T(1) + std::exp(-acc));
  }
  return f;
}

}  // namespace

template <typename T>
Tensor4<T> se_block(const Tensor4<T>& x, const SeParams<T>& p) {
  check_se(x, p);
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  Tensor4<T> out(x.shape());
  for (int in = 0; in < x.n(); ++in) {
    const auto f = se_gate(x, in, p);
    for (int ch = 0; ch < x.c(); ++ch) {
      const T* src = x.plane(in, ch);
      T* dst = out.plane(in, ch);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] * f.gate[ch];
    }
  }
  return out;
}

template <typename T>
SeGrads<T> se_block_vjp(const Tensor4<T>& x, const SeParams<T>& p, const Tensor4<T>& upstream) {
  check_se(x, p);
  require_same_shape(x, upstream, "se_block_vjp");
  const int c = x.c();
  const int mid = p.w1.n();
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  SeGrads<T> g{Tensor4<T>(x.shape()), Tensor4<T>(p.w1.shape()), Tensor4<T>(p.b1.shape()),
               Tensor4<T>(p.w2.shape()), Tensor4<T>(p.b2.shape())};
  std::vector<T> dpre2(c), dpre1(mid), dpooled(c);
  for (int in = 0; in < x.n(); ++in) {
    const auto f = se_gate(x, in, p);
    for (int ch = 0; ch < c; ++ch) {
      const T* src = x.plane(in, ch);
      const T* up = upstream.plane(in, ch);
      T dgate = T(0);
      for (std::size_t i = 0; i < hw; ++i) dgate += up[i] * src[i];
      dpre2[ch] = dgate * f.gate[ch] * (T(1) - f.gate[ch]);
      g.db2[ch] += dpre2[ch];
    }
    for (int m = 0; m < mid; ++m) {
      T dh = T(0);
      for (int ch = 0; ch < c; ++ch) {
        g.dw2[static_cast<std::size_t>(ch) * mid + m] += dpre2[ch] * f.hidden[m];
        dh += p.w2[static_cast<std::size_t>(ch) * mid + m] * dpre2[ch];
      }
      dpre1[m] = f.pre1[m] > T(0) ? dh : T(0);
      g.db1[m] += dpre1[m];
    }
    for (int ch = 0; ch < c; ++ch) {
      T dp = T(0);
      for (int m = 0; m < mid; ++m) {
        g.dw1[static_cast<std::size_t>(m) * c + ch] += dpre1[m] * f.pooled[ch];
        dp += p.w1[static_cast<std::size_t>(m) * c + ch] * dpre1[m];
      }
      dpooled[ch] = dp / T(hw);
    }
    for (int ch = 0; ch < c; ++ch) {
      const T* up = upstream.plane(in, ch);
      T* dst = g.dx.plane(in, ch);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = up[i] * f.gate[ch] + dpooled[ch];
    }
  }
  return g;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  require_same_shape(a, b, "add");
  Tensor4<T> out(a);
  add_inplace(out, b);
  return out;
}

template <typename T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
Tensor4<T> sub(const Tensor4<T>& a, const Tensor4<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor4<T> out(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] -= b[i];
  return out;
}

template <typename T>
Tensor4<T> scale(const Tensor4<T>& a, T s) {
  Tensor4<T> out(a);
  for (auto& v : out.values()) v *= s;
  return out;
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor4<T> out(a);
  for (std::size_t i = 0; i < a.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
Tensor4<T> pad_zero(const Tensor4<T>& x, int r) {
  if (r < 0) throw ConfigError("pad_zero: negative radius");
  Tensor4<T> out(x.n(), x.c(), x.h() + 2 * r, x.w() + 2 * r);
  for (int in = 0; in < x.n(); ++in) {
    for (int ch = 0; ch < x.c(); ++ch) {
      const T* src = x.plane(in, ch);
      T* dst = out.plane(in, ch);
      for (int y = 0; y < x.h(); ++y) {
        std::copy(src + static_cast<std::size_t>(y) * x.w(),
                  src + static_cast<std::size_t>(y + 1) * x.w(),
                  dst + static_cast<std::size_t>(y + r) * out.w() + r);
      }
    }
  }
  return out;
}

template <typename T>
Tensor4<T> crop_border(const Tensor4<T>& x, int r) {
  if (r < 0 || 2 * r >= x.h() || 2 * r >= x.w()) {
    throw ShapeError("crop_border: radius " + std::to_string(r) + " too large for " +
                     x.shape().str());
  }
  Tensor4<T> out(x.n(), x.c(), x.h() - 2 * r, x.w() - 2 * r);
  for (int in = 0; in < x.n(); ++in) {
    for (int ch = 0; ch < x.c(); ++ch) {
      const T* src = x.plane(in, ch);
      T* dst = out.plane(in, ch);
      for (int y = 0; y < out.h(); ++y) {
        const T* row = src + static_cast<std::size_t>(y + r) * x.w() + r;
        std::copy(row, row + out.w(), dst + static_cast<std::size_t>(y) * out.w());
      }
    }
  }
  return out;
}

template <typename T>
bool all_finite(const Tensor4<T>& x) {
  for (T v : x.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

#define DCFMN_INSTANTIATE_OPS(T)                                                              \
  template Tensor4<T> conv2d(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>*,         \
                             const ConvSpec&);                                                \
  template ConvGrads<T> conv2d_vjp(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>*,   \
                                   const ConvSpec&, const Tensor4<T>&);                       \
  template Tensor4<T> gelu(const Tensor4<T>&);                                                \
  template Tensor4<T> gelu_vjp(const Tensor4<T>&, const Tensor4<T>&);                         \
  template Tensor4<T> layer_norm(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,     \
                                 double);                                                     \
  template LayerNormGrads<T> layer_norm_vjp(const Tensor4<T>&, const Tensor4<T>&,             \
                                            const Tensor4<T>&, double);                       \
  template std::vector<Tensor4<T>> chunk_channels(const Tensor4<T>&, int);                    \
  template Tensor4<T> concat_channels(std::span<const Tensor4<T>>);                           \
  template std::array<Tensor4<T>, 4> chunk4(const Tensor4<T>&);                               \
  template Tensor4<T> concat4(const std::array<Tensor4<T>, 4>&);                              \
  template Tensor4<T> pixel_shuffle(const Tensor4<T>&, int);                                  \
  template Tensor4<T> pixel_unshuffle(const Tensor4<T>&, int);                                \
  template Tensor4<T> se_block(const Tensor4<T>&, const SeParams<T>&);                        \
  template SeGrads<T> se_block_vjp(const Tensor4<T>&, const SeParams<T>&, const Tensor4<T>&); \
  template Tensor4<T> add(const Tensor4<T>&, const Tensor4<T>&);                              \
  template void add_inplace(Tensor4<T>&, const Tensor4<T>&);                                  \
  template Tensor4<T> sub(const Tensor4<T>&, const Tensor4<T>&);                              \
  template Tensor4<T> scale(const Tensor4<T>&, T);                                            \
  template Tensor4<T> mul(const Tensor4<T>&, const Tensor4<T>&);                              \
  template Tensor4<T> pad_zero(const Tensor4<T>&, int);                                       \
  template Tensor4<T> crop_border(const Tensor4<T>&, int);                                    \
  template bool all_finite(const Tensor4<T>&);

DCFMN_INSTANTIATE_OPS(float)
DCFMN_INSTANTIATE_OPS(double)

}  // namespace dcfmn

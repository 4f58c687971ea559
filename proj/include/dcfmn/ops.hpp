#pragma once

#include <array>
#include <span>
#include <type_traits>
#include <vector>

#include "dcfmn/tensor.hpp"

namespace dcfmn {

/// Square, stride-1 convolution with zero "same" padding.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int dilation = 1;
  int groups = 1;

  // Zero padding on each side that keeps output extents equal to input.
  int padding() const { return dilation * (kernel - 1) / 2; }
  Shape4 weight_shape() const {
    return {out_channels, in_channels / groups, kernel, kernel};
  }
  // Throws ConfigError when geometry is illegal.
  void validate() const;
};

template <typename T>
struct ConvGrads {
  Tensor4<T> dx;
  Tensor4<T> dweight;
  Tensor4<T> dbias;  // (1, out_channels, 1, 1); empty when the conv has no bias
};

// `bias` may be null.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<std::type_identity_t<T>>* bias,
                  const ConvSpec& spec);

template <typename T>
ConvGrads<T> conv2d_vjp(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<std::type_identity_t<T>>* bias,
                        const ConvSpec& spec, const Tensor4<T>& upstream);

// Exact GELU, x * Phi(x).
template <typename T>
Tensor4<T> gelu(const Tensor4<T>& x);
template <typename T>
Tensor4<T> gelu_vjp(const Tensor4<T>& x, const Tensor4<T>& upstream);

inline constexpr double kLayerNormEps = 1e-6;

/// Normalizes across channels at every (n, y, x) position, then applies a
/// per-channel affine map. `gain` and `bias` have extents (1, C, 1, 1).
template <typename T>
Tensor4<T> layer_norm(const Tensor4<T>& x, const Tensor4<T>& gain, const Tensor4<T>& bias,
                      double eps = kLayerNormEps);

template <typename T>
struct LayerNormGrads {
  Tensor4<T> dx;
  Tensor4<T> dgain;
  Tensor4<T> dbias;
};

template <typename T>
LayerNormGrads<T> layer_norm_vjp(const Tensor4<T>& x, const Tensor4<T>& gain,
                                 const Tensor4<T>& upstream, double eps = kLayerNormEps);

// Splits channels into `parts` contiguous equal ranges.
template <typename T>
std::vector<Tensor4<T>> chunk_channels(const Tensor4<T>& x, int parts);
template <typename T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>> parts);

template <typename T>
std::array<Tensor4<T>, 4> chunk4(const Tensor4<T>& x);
template <typename T>
Tensor4<T> concat4(const std::array<Tensor4<T>, 4>& parts);

// Depth-to-space: out(o, y, x) = in(o*s*s + (y%s)*s + (x%s), y/s, x/s).
template <typename T>
Tensor4<T> pixel_shuffle(const Tensor4<T>& x, int s);
// Exact inverse index map of pixel_shuffle; also its vjp.
template <typename T>
Tensor4<T> pixel_unshuffle(const Tensor4<T>& x, int s);

inline constexpr int kSeReduction = 4;

template <typename T>
struct SeParams {
  const Tensor4<T>& w1;  // (C/r, C, 1, 1)
  const Tensor4<T>& b1;  // (1, C/r, 1, 1)
  const Tensor4<T>& w2;  // (C, C/r, 1, 1)
  const Tensor4<T>& b2;  // (1, C, 1, 1)
};

template <typename T>
struct SeGrads {
  Tensor4<T> dx;
  Tensor4<T> dw1;
  Tensor4<T> db1;
  Tensor4<T> dw2;
  Tensor4<T> db2;
};

/// Squeeze-excitation gating: global average pool, 1x1 bottleneck, ReLU,
/// 1x1 expansion, logistic sigmoid, per-channel rescale of `x`.
template <typename T>
Tensor4<T> se_block(const Tensor4<T>& x, const SeParams<T>& p);
template <typename T>
SeGrads<T> se_block_vjp(const Tensor4<T>& x, const SeParams<T>& p, const Tensor4<T>& upstream);

// Elementwise helpers. Their vjps are trivial (identity, negation, scaling)
// and are written inline by callers.
template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b);
template <typename T>
Tensor4<T> sub(const Tensor4<T>& a, const Tensor4<T>& b);
template <typename T>
Tensor4<T> scale(const Tensor4<T>& a, T s);
template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b);
// a += b
template <typename T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b);

// Zero-pads every plane by `r` on all sides; crop_border is its adjoint.
template <typename T>
Tensor4<T> pad_zero(const Tensor4<T>& x, int r);
template <typename T>
Tensor4<T> crop_border(const Tensor4<T>& x, int r);

template <typename T>
bool all_finite(const Tensor4<T>& x);

}  // namespace dcfmn

#include "dcfmn/reparam.hpp"

#include <string>

namespace dcfmn {

void DilatedStackSpec::validate() const {
  if (stages.empty()) throw ConfigError("dilated stack: no stages");
  if (channels <= 0) throw ConfigError("dilated stack: channels must be positive");
  for (const auto& s : stages) {
    if (s.kernel <= 0 || s.kernel % 2 == 0) {
      throw ConfigError("dilated stack: stage kernel must be odd, got " + std::to_string(s.kernel));
    }
    if (s.dilation < 1) throw ConfigError("dilated stack: dilation must be >= 1");
  }
}

int effective_kernel_size(const DilatedStackSpec& spec) {
  int k = 1;
  for (const auto& s : spec.stages) k += s.dilation * (s.kernel - 1);
  return k;
}

DilatedStackSpec stack_for_target(int target_kernel, int channels) {
  DilatedStackSpec spec;
  spec.channels = channels;
  switch (target_kernel) {
    case 3: spec.stages = {{3, 1}}; break;
    case 5: spec.stages = {{3, 1}, {3, 1}}; break;
    case 7: spec.stages = {{3, 1}, {3, 2}}; break;
    case 13: spec.stages = {{3, 2}, {3, 2}, {3, 2}}; break;
    case 17: spec.stages = {{3, 2}, {3, 3}, {3, 3}}; break;
    default:
      throw ConfigError("no dilated stack registered for kernel size " +
                        std::to_string(target_kernel) + " (supported: 3, 5, 7, 13, 17)");
  }
  spec.validate();
  return spec;
}

template <typename T>
DenseKernel<T> dilate_kernel_to_dense(const Tensor4<T>& weight, int d) {
  if (weight.c() != 1 || weight.h() != weight.w() || weight.h() % 2 == 0) {
    throw ShapeError("dilate_kernel_to_dense: expected (C, 1, k, k) odd kernel, got " +
                     weight.shape().str());
  }
  if (d < 1) throw ConfigError("dilate_kernel_to_dense: dilation must be >= 1");
  const int k = weight.h();
  const int kd = d * (k - 1) + 1;
  DenseKernel<T> out{Tensor4<T>(weight.n(), 1, kd, kd), {}};
  for (int ch = 0; ch < weight.n(); ++ch) {
    for (int y = 0; y < k; ++y) {
      for (int x = 0; x < k; ++x) out.weight(ch, 0, y * d, x * d) = weight(ch, 0, y, x);
    }
  }
  return out;
}

namespace {

// Full 2-D convolution of two centred kernels, per channel.
template <typename T>
Tensor4<T> compose_kernels(const Tensor4<T>& a, const Tensor4<T>& b) {
  const int ka = a.h();
  const int kb = b.h();
  Tensor4<T> c(a.n(), 1, ka + kb - 1, ka + kb - 1);
  for (int ch = 0; ch < a.n(); ++ch) {
    for (int ay = 0; ay < ka; ++ay) {
      for (int ax = 0; ax < ka; ++ax) {
        const T av = a(ch, 0, ay, ax);
        if (av == T(0)) continue;
        for (int by = 0; by < kb; ++by) {
          for (int bx = 0; bx < kb; ++bx) c(ch, 0, ay + by, ax + bx) += av * b(ch, 0, by, bx);
        }
      }
    }
  }
  return c;
}

template <typename T>
void check_stack_params(const DilatedStackSpec& spec, std::span<const Tensor4<T>> weights,
                        std::span<const Tensor4<T>> biases, const char* what) {
  spec.validate();
  if (weights.size() != spec.stages.size()) {
    throw ShapeError(std::string(what) + ": " + std::to_string(weights.size()) +
                     " stage weights for " + std::to_string(spec.stages.size()) + " stages");
  }
  if (!biases.empty() && biases.size() != spec.stages.size()) {
    throw ShapeError(std::string(what) + ": bias count does not match stage count");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const int k = spec.stages[i].kernel;
    if (weights[i].shape() != Shape4{spec.channels, 1, k, k}) {
      throw ShapeError(std::string(what) + ": stage " + std::to_string(i) + " weight extents " +
                       weights[i].shape().str());
    }
    if (!biases.empty() && biases[i].shape() != Shape4{1, spec.channels, 1, 1}) {
      throw ShapeError(std::string(what) + ": stage " + std::to_string(i) + " bias extents " +
                       biases[i].shape().str());
    }
  }
}

}  // namespace

template <typename T>
DenseKernel<T> compose_stack_to_dense(const DilatedStackSpec& spec,
                                      std::span<const Tensor4<T>> weights,
                                      std::span<const Tensor4<T>> biases) {
  if (spec.nonlinear_between_stages) {
    throw UnsupportedError("compose_stack_to_dense: stacks with activations between stages "
                           "have no single-kernel equivalent");
  }
  check_stack_params(spec, weights, biases, "compose_stack_to_dense");
  const int c = spec.channels;

  // Start from a 1x1 identity kernel and fold stages in order.
  Tensor4<T> kernel(c, 1, 1, 1, T(1));
  Tensor4<T> bias(1, c, 1, 1);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto dense = dilate_kernel_to_dense(weights[i], spec.stages[i].dilation);
    kernel = compose_kernels(kernel, dense.weight);
    if (!biases.empty()) {
      for (int ch = 0; ch < c; ++ch) {
        T sum = T(0);
        const T* kp = weights[i].plane(ch, 0);
        for (int j = 0; j < weights[i].h() * weights[i].w(); ++j) sum += kp[j];
        bias[ch] = bias[ch] * sum + biases[i][ch];
      }
    }
  }
  DenseKernel<T> out{std::move(kernel), {}};
  if (!biases.empty()) out.bias = std::move(bias);
  return out;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> fuse_parallel_3x3(std::span<const Tensor4<T>> weights,
                                                    std::span<const Tensor4<T>> biases,
                                                    bool include_identity) {
  if (weights.empty()) throw ShapeError("fuse_parallel_3x3: no branches");
  const Shape4 ws = weights.front().shape();
  if (ws.h != 3 || ws.w != 3) {
    throw ShapeError("fuse_parallel_3x3: branches must be 3x3, got " + ws.str());
  }
  if (!biases.empty() && biases.size() != weights.size()) {
    throw ShapeError("fuse_parallel_3x3: bias count does not match branch count");
  }
  Tensor4<T> w(ws);
  Tensor4<T> b(1, ws.n, 1, 1);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i].shape() != ws) {
      throw ShapeError("fuse_parallel_3x3: branch extents " + weights[i].shape().str() + " vs " +
                       ws.str());
    }
    add_inplace(w, weights[i]);
    if (!biases.empty()) {
      if (biases[i].shape() != b.shape()) {
        throw ShapeError("fuse_parallel_3x3: bias extents " + biases[i].shape().str());
      }
      add_inplace(b, biases[i]);
    }
  }
  if (include_identity) {
    if (ws.n != ws.c) {
      throw ShapeError("fuse_parallel_3x3: identity branch needs equal in/out channels");
    }
    for (int ch = 0; ch < ws.n; ++ch) w(ch, ch, 1, 1) += T(1);
  }
  return {std::move(w), std::move(b)};
}

template <typename T>
Tensor4<T> dilated_stack_forward(const Tensor4<T>& x, const DilatedStackSpec& spec,
                                 std::span<const Tensor4<T>> weights,
                                 std::span<const Tensor4<T>> biases) {
  check_stack_params(spec, weights, biases, "dilated_stack_forward");
  if (spec.nonlinear_between_stages) {
    throw UnsupportedError("dilated_stack_forward: activations between stages are not supported");
  }
  const int r = (effective_kernel_size(spec) - 1) / 2;
  Tensor4<T> y = pad_zero(x, r);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    y = conv2d(y, weights[i], biases.empty() ? nullptr : &biases[i], spec.stage_conv(i));
  }
  return crop_border(y, r);
}

template <typename T>
StackGrads<T> dilated_stack_vjp(const Tensor4<T>& x, const DilatedStackSpec& spec,
                                std::span<const Tensor4<T>> weights,
                                std::span<const Tensor4<T>> biases, const Tensor4<T>& upstream) {
  check_stack_params(spec, weights, biases, "dilated_stack_vjp");
  require_same_shape(x, upstream, "dilated_stack_vjp");
  const int r = (effective_kernel_size(spec) - 1) / 2;
  std::vector<Tensor4<T>> inputs;
  inputs.reserve(weights.size());
  inputs.push_back(pad_zero(x, r));
  for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
    inputs.push_back(conv2d(inputs.back(), weights[i], biases.empty() ? nullptr : &biases[i],
                            spec.stage_conv(i)));
  }
  StackGrads<T> g;
  g.dweights.resize(weights.size());
  if (!biases.empty()) g.dbiases.resize(weights.size());
  Tensor4<T> up = pad_zero(upstream, r);
  for (std::size_t i = weights.size(); i-- > 0;) {
    auto cg = conv2d_vjp(inputs[i], weights[i], biases.empty() ? nullptr : &biases[i],
                         spec.stage_conv(i), up);
    g.dweights[i] = std::move(cg.dweight);
    if (!biases.empty()) g.dbiases[i] = std::move(cg.dbias);
    up = std::move(cg.dx);
  }
  g.dx = crop_border(up, r);
  return g;
}

#define DCFMN_INSTANTIATE_REPARAM(T)                                                         \
  template DenseKernel<T> dilate_kernel_to_dense(const Tensor4<T>&, int);                    \
  template DenseKernel<T> compose_stack_to_dense(const DilatedStackSpec&,                    \
                                                 std::span<const Tensor4<T>>,                \
                                                 std::span<const Tensor4<T>>);               \
  template std::pair<Tensor4<T>, Tensor4<T>> fuse_parallel_3x3(std::span<const Tensor4<T>>,  \
                                                               std::span<const Tensor4<T>>,  \
                                                               bool);                        \
  template Tensor4<T> dilated_stack_forward(const Tensor4<T>&, const DilatedStackSpec&,      \
                                            std::span<const Tensor4<T>>,                     \
                                            std::span<const Tensor4<T>>);                    \
  template StackGrads<T> dilated_stack_vjp(const Tensor4<T>&, const DilatedStackSpec&,       \
                                           std::span<const Tensor4<T>>,                      \
                                           std::span<const Tensor4<T>>, const Tensor4<T>&);

DCFMN_INSTANTIATE_REPARAM(float)
DCFMN_INSTANTIATE_REPARAM(double)

}  // namespace dcfmn

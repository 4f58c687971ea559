#pragma once

#include <span>
#include <utility>
#include <vector>

#include "dcfmn/ops.hpp"
#include "dcfmn/tensor.hpp"

namespace dcfmn {

struct StackStage {
  int kernel = 3;
  int dilation = 1;
  friend bool operator==(const StackStage&, const StackStage&) = default;
};

/// A depthwise sequence of dilated convolutions with no activation between
/// stages, so that it collapses to one dense kernel.
struct DilatedStackSpec {
  std::vector<StackStage> stages;
  int channels = 1;
  // Set only to exercise the rejection path; stacks used by the model are linear.
  bool nonlinear_between_stages = false;

  void validate() const;
  ConvSpec stage_conv(std::size_t i) const {
    return {channels, channels, stages[i].kernel, stages[i].dilation, channels};
  }
};

/// K = 1 + sum_i d_i * (k_i - 1).
int effective_kernel_size(const DilatedStackSpec& spec);

/// Stack realizing a target dense kernel size. Supported targets are 3 (a
/// single 3x3) and 5, 7, 13, 17:
///   5: k=(3,3)   d=(1,1)
///   7: k=(3,3)   d=(1,2)
///  13: k=(3,3,3) d=(2,2,2)
///  17: k=(3,3,3) d=(2,3,3)
DilatedStackSpec stack_for_target(int target_kernel, int channels);

template <typename T>
struct DenseKernel {
  Tensor4<T> weight;  // (C, 1, K, K)
  Tensor4<T> bias;    // (1, C, 1, 1), or empty
  int kernel_size() const { return weight.h(); }
};

/// Spreads the taps of a (C, 1, k, k) kernel to stride `d` in a dense
/// (C, 1, d*(k-1)+1, ...) kernel filled with zeros elsewhere.
template <typename T>
DenseKernel<T> dilate_kernel_to_dense(const Tensor4<T>& weight, int d);

/// Collapses a depthwise stack into one dense depthwise kernel by composing
/// the densified stage kernels. Biases (may be empty) fold as
/// b <- b * sum(stage kernel) + b_stage, channel by channel.
template <typename T>
DenseKernel<T> compose_stack_to_dense(const DilatedStackSpec& spec,
                                      std::span<const Tensor4<T>> weights,
                                      std::span<const Tensor4<T>> biases);

/// Sums parallel 3x3 branches sharing an input into one kernel; the identity
/// branch embeds as a centre-tap identity map.
template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> fuse_parallel_3x3(std::span<const Tensor4<T>> weights,
                                                    std::span<const Tensor4<T>> biases,
                                                    bool include_identity);

/// Stack forward as used by the model: the input is zero-padded once by the
/// stack radius (K-1)/2, every stage runs on the enlarged domain, and the
/// centre is cropped back. The result equals conv2d with the composed dense
/// kernel over the whole image, borders included.
template <typename T>
Tensor4<T> dilated_stack_forward(const Tensor4<T>& x, const DilatedStackSpec& spec,
                                 std::span<const Tensor4<T>> weights,
                                 std::span<const Tensor4<T>> biases);

template <typename T>
struct StackGrads {
  Tensor4<T> dx;
  std::vector<Tensor4<T>> dweights;
  std::vector<Tensor4<T>> dbiases;
};

template <typename T>
StackGrads<T> dilated_stack_vjp(const Tensor4<T>& x, const DilatedStackSpec& spec,
                                std::span<const Tensor4<T>> weights,
                                std::span<const Tensor4<T>> biases, const Tensor4<T>& upstream);

}  // namespace dcfmn

#pragma once

#include <complex>
#include <span>
#include <vector>

#include "dcfmn/tensor.hpp"

namespace dcfmn {

/// Row-major h x w grid of complex bins for one image plane.
struct ComplexGrid {
  int h = 0;
  int w = 0;
  std::vector<std::complex<double>> bins;

  std::complex<double>& at(int u, int v) { return bins[static_cast<std::size_t>(u) * w + v]; }
  std::complex<double> at(int u, int v) const {
    return bins[static_cast<std::size_t>(u) * w + v];
  }
};

enum class DftPath {
  automatic,  // radix-2 when both extents are powers of two, otherwise direct
  radix2,
  direct,
};

bool is_power_of_two(int n);

/// Unnormalized forward transform, X(u,v) = sum x(y,x) exp(-2 pi i (uy/h + vx/w)).
ComplexGrid dft2d(std::span<const double> plane, int h, int w,
                  DftPath path = DftPath::automatic);

/// Inverse of dft2d, including the 1/(h w) factor; returns the real part.
std::vector<double> idft2d(const ComplexGrid& grid, DftPath path = DftPath::automatic);

/// In-place 1-D transform of a power-of-two length sequence.
void fft_radix2(std::span<std::complex<double>> a, bool inverse);

struct LossWeights {
  double lambda1 = 1.0;
  double lambda2 = 0.05;
  void validate() const;
};

template <typename T>
struct LossResult {
  double l1 = 0.0;
  double freq = 0.0;
  double total = 0.0;
  Tensor4<T> grad;  // d total / d sr
};

/// Mean absolute difference over every element.
template <typename T>
double l1_loss(const Tensor4<T>& sr, const Tensor4<T>& hr);
template <typename T>
Tensor4<T> l1_loss_grad(const Tensor4<T>& sr, const Tensor4<T>& hr);

/// sqrt(mean |F(hr) - F(sr)|^2), the mean running over every bin of every
/// (n, c) plane.
template <typename T>
double freq_loss(const Tensor4<T>& sr, const Tensor4<T>& hr);
template <typename T>
Tensor4<T> freq_loss_grad(const Tensor4<T>& sr, const Tensor4<T>& hr);

/// lambda1 * l1 + lambda2 * freq together with its gradient.
template <typename T>
LossResult<T> composite_loss(const Tensor4<T>& sr, const Tensor4<T>& hr, const LossWeights& w);

}  // namespace dcfmn

#include "dcfmn/loss.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace dcfmn {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

void fft_radix2(std::span<std::complex<double>> a, bool inverse) {
  const std::size_t n = a.size();
  if (!is_power_of_two(static_cast<int>(n))) {
    throw ShapeError("fft_radix2: length " + std::to_string(n) + " is not a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Twiddle from the exact angle.
      const std::complex<double> wk =
          std::polar(1.0, sign * 2.0 * std::numbers::pi * static_cast<double>(k) / len);
      for (std::size_t i = 0; i < n; i += len) {
        const auto u = a[i + k];
        const auto v = a[i + k + half] * wk;
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

namespace {

void dft_direct(std::span<std::complex<double>> a, bool inverse) {
  const std::size_t n = a.size();
  const double sign = inverse ? 1.0 : -1.0;
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      // k*j reduced mod n.
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>((k * j) % n) / n;
      acc += a[j] * std::polar(1.0, ang);
    }
    out[k] = acc;
  }
  std::copy(out.begin(), out.end(), a.begin());
}

bool use_radix2(DftPath path, int h, int w) {
  switch (path) {
    case DftPath::radix2:
      if (!is_power_of_two(h) || !is_power_of_two(w)) {
        throw ShapeError("radix-2 transform needs power-of-two extents");
      }
      return true;
    case DftPath::direct: return false;
    case DftPath::automatic: return is_power_of_two(h) && is_power_of_two(w);
  }
  return false;
}

// Separable 2-D transform: rows then columns.
void transform2d(ComplexGrid& g, bool inverse, DftPath path) {
  const bool fast = use_radix2(path, g.h, g.w);
  const auto line = [&](std::span<std::complex<double>> s) {
    fast ? fft_radix2(s, inverse) : dft_direct(s, inverse);
  };
  for (int y = 0; y < g.h; ++y) {
    line(std::span(g.bins).subspan(static_cast<std::size_t>(y) * g.w, g.w));
  }
  std::vector<std::complex<double>> col(g.h);
  for (int x = 0; x < g.w; ++x) {
    for (int y = 0; y < g.h; ++y) col[y] = g.at(y, x);
    line(col);
    for (int y = 0; y < g.h; ++y) g.at(y, x) = col[y];
  }
}

}  // namespace

ComplexGrid dft2d(std::span<const double> plane, int h, int w, DftPath path) {
  if (h <= 0 || w <= 0 || plane.size() != static_cast<std::size_t>(h) * w) {
    throw ShapeError("dft2d: plane length does not match " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  ComplexGrid g{h, w, std::vector<std::complex<double>>(plane.begin(), plane.end())};
  transform2d(g, false, path);
  return g;
}

std::vector<double> idft2d(const ComplexGrid& grid, DftPath path) {
  ComplexGrid g = grid;
  transform2d(g, true, path);
  const double norm = 1.0 / (static_cast<double>(g.h) * g.w);
  std::vector<double> out(g.bins.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = g.bins[i].real() * norm;
  return out;
}

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (lambda1 == 0.0 && lambda2 == 0.0) throw ConfigError("loss weights are both zero");
}

namespace {

template <typename T>
std::vector<double> plane_diff(const Tensor4<T>& sr, const Tensor4<T>& hr, int n, int c) {
  const std::size_t hw = static_cast<std::size_t>(sr.h()) * sr.w();
  std::vector<double> d(hw);
  const T* a = sr.plane(n, c);
  const T* b = hr.plane(n, c);
  for (std::size_t i = 0; i < hw; ++i) d[i] = static_cast<double>(a[i]) - b[i];
  return d;
}

// Value and (optionally) gradient of the frequency term.
template <typename T>
double freq_impl(const Tensor4<T>& sr, const Tensor4<T>& hr, Tensor4<T>* grad) {
  require_same_shape(sr, hr, "freq_loss");
  const int h = sr.h(), w = sr.w();
  std::vector<ComplexGrid> spectra;
  double energy = 0.0;
  for (int n = 0; n < sr.n(); ++n) {
    for (int c = 0; c < sr.c(); ++c) {
      spectra.push_back(dft2d(plane_diff(sr, hr, n, c), h, w));
      for (const auto& z : spectra.back().bins) energy += std::norm(z);
    }
  }
  const double bins = static_cast<double>(sr.size());
  const double value = std::sqrt(energy / bins);
  if (grad == nullptr) return value;
  *grad = Tensor4<T>(sr.shape());
  if (value == 0.0) return value;
  // d|F d|^2 / d d = 2 Re(F^H F d) and F^H = h w * inverse transform.
  const double k = static_cast<double>(h) * w / (bins * value);
  std::size_t p = 0;
  for (int n = 0; n < sr.n(); ++n) {
    for (int c = 0; c < sr.c(); ++c) {
      const auto back = idft2d(spectra[p++]);
      T* g = grad->plane(n, c);
      for (std::size_t i = 0; i < back.size(); ++i) g[i] = static_cast<T>(k * back[i]);
    }
  }
  return value;
}

}  // namespace

template <typename T>
double l1_loss(const Tensor4<T>& sr, const Tensor4<T>& hr) {
  require_same_shape(sr, hr, "l1_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < sr.size(); ++i) {
    s += std::abs(static_cast<double>(sr[i]) - hr[i]);
  }
  return s / static_cast<double>(sr.size());
}

template <typename T>
Tensor4<T> l1_loss_grad(const Tensor4<T>& sr, const Tensor4<T>& hr) {
  require_same_shape(sr, hr, "l1_loss");
  Tensor4<T> g(sr.shape());
  const T inv = T(1) / static_cast<T>(sr.size());
  for (std::size_t i = 0; i < sr.size(); ++i) {
    g[i] = sr[i] > hr[i] ? inv : (sr[i] < hr[i] ? -inv : T(0));
  }
  return g;
}

template <typename T>
double freq_loss(const Tensor4<T>& sr, const Tensor4<T>& hr) {
  return freq_impl<T>(sr, hr, nullptr);
}

template <typename T>
Tensor4<T> freq_loss_grad(const Tensor4<T>& sr, const Tensor4<T>& hr) {
  Tensor4<T> g;
  freq_impl<T>(sr, hr, &g);
  return g;
}

template <typename T>
LossResult<T> composite_loss(const Tensor4<T>& sr, const Tensor4<T>& hr, const LossWeights& w) {
  w.validate();
  LossResult<T> r;
  r.l1 = l1_loss(sr, hr);
  r.grad = l1_loss_grad(sr, hr);
  for (auto& v : r.grad.values()) v *= static_cast<T>(w.lambda1);
  if (w.lambda2 != 0.0) {
    Tensor4<T> gf;
    r.freq = freq_impl<T>(sr, hr, &gf);
    for (std::size_t i = 0; i < gf.size(); ++i) r.grad[i] += static_cast<T>(w.lambda2) * gf[i];
  } else {
    r.freq = freq_impl<T>(sr, hr, nullptr);
  }
  r.total = w.lambda1 * r.l1 + w.lambda2 * r.freq;
  return r;
}

#define DCFMN_INSTANTIATE_LOSS(T)                                                  \
  template double l1_loss(const Tensor4<T>&, const Tensor4<T>&);                   \
  template Tensor4<T> l1_loss_grad(const Tensor4<T>&, const Tensor4<T>&);          \
  template double freq_loss(const Tensor4<T>&, const Tensor4<T>&);                 \
  template Tensor4<T> freq_loss_grad(const Tensor4<T>&, const Tensor4<T>&);        \
  template LossResult<T> composite_loss(const Tensor4<T>&, const Tensor4<T>&,      \
                                        const LossWeights&);

DCFMN_INSTANTIATE_LOSS(float)
DCFMN_INSTANTIATE_LOSS(double)

}  // namespace dcfmn

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dcfmn/rng.hpp"
#include "dcfmn/tensor.hpp"

namespace dcfmn {

/// 8-bit RGB image, samples interleaved row-major.
struct Image8 {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> rgb;

  Image8() = default;
  Image8(int height, int width, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
  friend bool operator==(const Image8&, const Image8&) = default;
};

/// Reads an 8-bit RGB or grayscale PNG; grayscale is promoted to RGB.
/// Other bit depths, palettes and alpha raise UnsupportedError.
Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

/// (1, 3, h, w) tensor with samples divided by 255.
template <typename T>
Tensor4<T> to_real(const Image8& image);

/// Clamps to [0, 1], scales by 255 and rounds half away from zero.
template <typename T>
Image8 to_image8(const Tensor4<T>& x, int batch_index = 0);

/// Separable cubic convolution (Keys, a = -0.5) with half-pixel centres and
/// replicated edges. When shrinking and `antialias` is set the kernel is
/// stretched by the inverse scale factor.
template <typename T>
Tensor4<T> bicubic_resize(const Tensor4<T>& x, int out_h, int out_w, bool antialias = true);

/// Keys cubic kernel with a = -0.5.
double cubic_kernel(double t);

/// Crops bottom and right edges so both extents divide by `scale`.
Image8 modcrop(const Image8& image, int scale);

/// Bicubic downscale by `scale`, re-quantized. Extents must divide by `scale`.
Image8 degrade(const Image8& hr, int scale);

/// Bicubic upscale by `scale`, re-quantized.
Image8 bicubic_upscale(const Image8& lr, int scale);

Image8 crop(const Image8& image, int y0, int x0, int h, int w);

/// Dihedral transform: bit 0 flips horizontally, bits 1-2 give the number of
/// clockwise quarter turns applied afterwards.
Image8 augment(const Image8& image, int code);

struct PatchPair {
  Image8 hr;
  Image8 lr;
};

/// Aligned random crop of an LR patch and its HR counterpart, with one random
/// dihedral transform applied to both.
PatchPair sample_patch_pair(const Image8& hr, const Image8& lr, int scale, int patch, Rng& rng,
                            bool augmentation = true);

struct ManifestEntry {
  std::string hr_path;
  std::string lr_path;
  int scale = 4;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Tab-separated `hr_path<TAB>lr_path<TAB>scale` lines.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Sorted list of *.png files directly inside `dir`.
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir);

}  // namespace dcfmn

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dcfmn/image.hpp"
#include "dcfmn/model.hpp"

namespace dcfmn {

/// BT.601 studio-swing luma, Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255,
/// as a (1, 1, h, w) plane on the 0..255 scale.
Tensor4<double> rgb_to_y(const Image8& image);

/// Reported for identical inputs in place of +infinity.
inline constexpr double kPsnrCap = 99.0;

/// 10 log10(255^2 / MSE) over the plane with `crop` pixels trimmed per side.
double psnr(const Tensor4<double>& a, const Tensor4<double>& b, int crop);

/// Mean SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03,
/// L = 255, valid windows only, after trimming `crop` pixels per side.
double ssim(const Tensor4<double>& a, const Tensor4<double>& b, int crop);

inline constexpr int kMacOutputHeight = 720;
inline constexpr int kMacOutputWidth = 1280;

/// Multiply-accumulates of one stride-1 "same" convolution on an h x w map.
std::uint64_t conv_macs(int h, int w, const ConvSpec& spec);

struct LayerCost {
  std::string name;
  std::string kind;  // conv, dwconv, layernorm, se
  std::string geometry;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct CostReport {
  int lr_h = 0;
  int lr_w = 0;
  std::vector<LayerCost> layers;
  std::uint64_t total_params = 0;
  std::uint64_t total_macs = 0;
};

/// Per-layer parameter and MAC table for an output of out_h x out_w. The LR
/// input is ceil(out / scale) on each axis. Convolutions cost
/// h w C_out (C_in / groups) k^2; LayerNorm 2 per element; SE one per element
/// for pooling, one per element for rescaling, plus its two matrix products.
/// Activations, additions and pixel shuffle are free.
CostReport count_costs(const ModelConfig& config, bool fused, int out_h = kMacOutputHeight,
                       int out_w = kMacOutputWidth);

std::uint64_t count_macs(const ModelConfig& config, bool fused, int out_h = kMacOutputHeight,
                         int out_w = kMacOutputWidth);

/// Parameter counts (thousands) listed for the S and L presets in the
/// reference results table, for side-by-side calibration only.
std::optional<int> reference_params_k(std::string_view preset, int scale);

struct ImageScore {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricsReport {
  std::string method;
  std::string dataset;
  int scale = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
  std::vector<ImageScore> images;
};

/// Maps an LR image to an SR image `scale` times larger.
using Upscaler = std::function<Image8(const Image8&)>;

Upscaler bicubic_upscaler(int scale);
Upscaler model_upscaler(const Model<float>& model);

/// For every entry: modcrop HR, take the listed LR (or degrade when the LR
/// path is empty or missing), super-resolve, and score Y-PSNR / SSIM with
/// crop = scale. Entries are processed in manifest order.
MetricsReport evaluate(const std::vector<ManifestEntry>& entries, int scale,
                       const Upscaler& upscaler, const std::string& method,
                       const std::string& dataset,
                       const std::optional<std::filesystem::path>& sr_dump_dir = std::nullopt);

/// method,scale,dataset,params,macs,psnr,ssim
void write_report_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports);
/// method,scale,dataset,image,psnr,ssim
void write_per_image_csv(const std::filesystem::path& path,
                         const std::vector<MetricsReport>& reports);
/// One row per (method, scale); one PSNR/SSIM column per dataset.
void write_report_markdown(const std::filesystem::path& path,
                           const std::vector<MetricsReport>& reports);

}  // namespace dcfmn

#include "dcfmn/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace dcfmn {

Tensor4<double> rgb_to_y(const Image8& image) {
  Tensor4<double> y(1, 1, image.h, image.w);
  for (int i = 0; i < image.h; ++i)
    for (int j = 0; j < image.w; ++j) {
      y(0, 0, i, j) = 16.0 + (65.481 * image.at(i, j, 0) + 128.553 * image.at(i, j, 1) +
                              24.966 * image.at(i, j, 2)) /
                                 255.0;
    }
  return y;
}

namespace {

void check_planes(const Tensor4<double>& a, const Tensor4<double>& b, int crop, const char* what) {
  require_same_shape(a, b, what);
  if (a.n() != 1 || a.c() != 1) throw ShapeError(std::string(what) + ": expected one plane");
  if (crop < 0 || 2 * crop >= a.h() || 2 * crop >= a.w()) {
    throw ShapeError(std::string(what) + ": crop " + std::to_string(crop) + " exceeds " +
                     std::to_string(a.h()) + "x" + std::to_string(a.w()) + " plane");
  }
}

}  // namespace

double psnr(const Tensor4<double>& a, const Tensor4<double>& b, int crop) {
  check_planes(a, b, crop, "psnr");
  double se = 0.0;
  std::size_t count = 0;
  for (int y = crop; y < a.h() - crop; ++y)
    for (int x = crop; x < a.w() - crop; ++x) {
      const double d = a(0, 0, y, x) - b(0, 0, y, x);
      se += d * d;
      ++count;
    }
  if (se == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / (se / count)));
}

double ssim(const Tensor4<double>& a, const Tensor4<double>& b, int crop) {
  check_planes(a, b, crop, "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  const int h = a.h() - 2 * crop;
  const int w = a.w() - 2 * crop;
  if (h < kWin || w < kWin) throw ShapeError("ssim: cropped plane smaller than the 11x11 window");
  std::array<double, kWin> g{};
  double gs = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double t = i - kWin / 2;
    g[i] = std::exp(-t * t / (2.0 * kSigma * kSigma));
    gs += g[i];
  }
  for (auto& v : g) v /= gs;

  // Separable Gaussian filtering of x, y, x^2, y^2, xy, valid region only.
  const int oh = h - kWin + 1, ow = w - kWin + 1;
  std::array<std::vector<double>, 5> rows;
  for (auto& r : rows) r.assign(static_cast<std::size_t>(h) * ow, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s[5] = {0, 0, 0, 0, 0};
      for (int k = 0; k < kWin; ++k) {
        const double p = a(0, 0, y + crop, x + k + crop);
        const double q = b(0, 0, y + crop, x + k + crop);
        s[0] += g[k] * p;
        s[1] += g[k] * q;
        s[2] += g[k] * p * p;
        s[3] += g[k] * q * q;
        s[4] += g[k] * p * q;
      }
      for (int m = 0; m < 5; ++m) rows[m][static_cast<std::size_t>(y) * ow + x] = s[m];
    }
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  double total = 0.0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s[5] = {0, 0, 0, 0, 0};
      for (int k = 0; k < kWin; ++k)
        for (int m = 0; m < 5; ++m) s[m] += g[k] * rows[m][static_cast<std::size_t>(y + k) * ow + x];
      const double va = s[2] - s[0] * s[0];
      const double vb = s[3] - s[1] * s[1];
      const double cov = s[4] - s[0] * s[1];
      total += ((2.0 * s[0] * s[1] + c1) * (2.0 * cov + c2)) /
               ((s[0] * s[0] + s[1] * s[1] + c1) * (va + vb + c2));
    }
  return total / (static_cast<double>(oh) * ow);
}

std::uint64_t conv_macs(int h, int w, const ConvSpec& spec) {
  spec.validate();
  return static_cast<std::uint64_t>(h) * w * spec.out_channels *
         (spec.in_channels / spec.groups) * spec.kernel * spec.kernel;
}

namespace {

class CostBuilder {
 public:
  CostBuilder(int h, int w) : h_(h), w_(w) {}

  void conv(const std::string& name, const ConvSpec& s) {
    std::ostringstream geo;
    geo << s.in_channels << "->" << s.out_channels << " k" << s.kernel;
    if (s.dilation > 1) geo << " d" << s.dilation;
    if (s.groups > 1) geo << " g" << s.groups;
    const std::uint64_t params =
        static_cast<std::uint64_t>(s.out_channels) * (s.in_channels / s.groups) * s.kernel *
            s.kernel +
        s.out_channels;
    add({name, s.groups > 1 ? "dwconv" : "conv", geo.str(), params, conv_macs(h_, w_, s)});
  }

  void layer_norm(const std::string& name, int c) {
    add({name, "layernorm", "C=" + std::to_string(c), 2ull * c, 2ull * c * area()});
  }

  void se(const std::string& name, int c) {
    const std::uint64_t hidden = c / kSeReduction;
    const std::uint64_t params = 2 * hidden * c + hidden + c;
    add({name, "se", std::to_string(c) + "->" + std::to_string(hidden) + "->" + std::to_string(c),
         params, 2ull * c * area() + 2 * hidden * c});
  }

  CostReport finish() && { return std::move(report_); }
  CostReport& report() { return report_; }

 private:
  std::uint64_t area() const { return static_cast<std::uint64_t>(h_) * w_; }
  void add(LayerCost l) {
    report_.total_params += l.params;
    report_.total_macs += l.macs;
    report_.layers.push_back(std::move(l));
  }
  int h_, w_;
  CostReport report_;
};

int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace

CostReport count_costs(const ModelConfig& config, bool fused, int out_h, int out_w) {
  config.validate();
  if (out_h <= 0 || out_w <= 0) throw ConfigError("output extents must be positive");
  const int h = ceil_div(out_h, config.scale);
  const int w = ceil_div(out_w, config.scale);
  const int c = config.channels;
  const int cc = c / 4;
  const int c2 = 2 * c;
  CostBuilder b(h, w);
  b.report().lr_h = h;
  b.report().lr_w = w;
  b.conv("head", {3, c, 3, 1, 1});
  for (int k = 0; k < config.num_blocks; ++k) {
    const std::string p = block_prefix(k);
    b.layer_norm(p + "ln1", c);
    for (int i = 0; i < 4; ++i) {
      const auto stack = chunk_stack(config, i);
      const std::string chunk = p + "dsmu.chunk" + std::to_string(i);
      if (fused) {
        b.conv(chunk + ".dense", {cc, cc, effective_kernel_size(stack), 1, cc});
      } else {
        for (std::size_t j = 0; j < stack.stages.size(); ++j) {
          b.conv(chunk + ".stage" + std::to_string(j), stack.stage_conv(j));
        }
      }
    }
    b.conv(p + "dsmu.mix1x1", {c, c, 1, 1, 1});
    b.layer_norm(p + "ln2", c);
    b.conv(p + "lfem.expand", {c, c2, 1, 1, 1});
    if (fused) {
      b.conv(p + "lfem.rep3x3", {c2, c2, 3, 1, 1});
    } else {
      for (int j = 0; j < config.lfem_branches; ++j) {
        b.conv(p + "lfem.branch" + std::to_string(j), {c2, c2, 3, 1, 1});
      }
    }
    if (!config.variants.lfem_without_se) b.se(p + "lfem.se", c2);
    b.conv(p + "lfem.reduce", {c2, c, 1, 1, 1});
  }
  b.conv("tail", {c, 3 * config.scale * config.scale, 3, 1, 1});
  return std::move(b).finish();
}

std::uint64_t count_macs(const ModelConfig& config, bool fused, int out_h, int out_w) {
  return count_costs(config, fused, out_h, out_w).total_macs;
}

std::optional<int> reference_params_k(std::string_view preset, int scale) {
  static const std::map<std::pair<std::string_view, int>, int> table = {
      {{"S", 2}, 224}, {{"S", 3}, 230}, {{"S", 4}, 239},
      {{"L", 2}, 354}, {{"L", 3}, 360}, {{"L", 4}, 369}};
  auto it = table.find({preset, scale});
  if (it == table.end()) return std::nullopt;
  return it->second;
}

Upscaler bicubic_upscaler(int scale) {
  return [scale](const Image8& lr) { return bicubic_upscale(lr, scale); };
}

Upscaler model_upscaler(const Model<float>& model) {
  return [model](const Image8& lr) { return to_image8(model_forward(model, to_real<float>(lr))); };
}

MetricsReport evaluate(const std::vector<ManifestEntry>& entries, int scale,
                       const Upscaler& upscaler, const std::string& method,
                       const std::string& dataset,
                       const std::optional<std::filesystem::path>& sr_dump_dir) {
  if (entries.empty()) throw ConfigError("evaluate: dataset '" + dataset + "' is empty");
  if (scale < 2) throw ConfigError("evaluate: scale must be at least 2");
  if (sr_dump_dir) std::filesystem::create_directories(*sr_dump_dir);
  MetricsReport r;
  r.method = method;
  r.dataset = dataset;
  r.scale = scale;
  for (const auto& e : entries) {
    if (e.scale != scale) {
      throw ConfigError("manifest entry '" + e.hr_path + "' has scale " + std::to_string(e.scale) +
                        ", expected " + std::to_string(scale));
    }
    const Image8 hr = modcrop(read_png(e.hr_path), scale);
    Image8 lr;
    if (!e.lr_path.empty() && std::filesystem::exists(e.lr_path)) {
      lr = read_png(e.lr_path);
    } else {
      lr = degrade(hr, scale);
    }
    if (lr.h * scale != hr.h || lr.w * scale != hr.w) {
      throw ShapeError("LR image '" + e.lr_path + "' does not match HR extents at scale " +
                       std::to_string(scale));
    }
    const Image8 sr = upscaler(lr);
    if (sr.h != hr.h || sr.w != hr.w) throw ShapeError("upscaler returned wrong extents");
    const auto ys = rgb_to_y(sr);
    const auto yh = rgb_to_y(hr);
    const std::string name = std::filesystem::path(e.hr_path).stem().string();
    r.images.push_back({name, psnr(ys, yh, scale), ssim(ys, yh, scale)});
    if (sr_dump_dir) write_png(*sr_dump_dir / (name + "_x" + std::to_string(scale) + ".png"), sr);
  }
  for (const auto& s : r.images) {
    r.psnr += s.psnr;
    r.ssim += s.ssim;
  }
  r.psnr /= static_cast<double>(r.images.size());
  r.ssim /= static_cast<double>(r.images.size());
  return r;
}

namespace {

std::ofstream open_report(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << std::fixed;
  return out;
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const std::vector<MetricsReport>& reports) {
  auto out = open_report(path);
  out << "method,scale,dataset,params,macs,psnr,ssim\n";
  for (const auto& r : reports) {
    out << r.method << ',' << r.scale << ',' << r.dataset << ',' << r.params << ',' << r.macs
        << ',' << std::setprecision(4) << r.psnr << ',' << std::setprecision(6) << r.ssim << '\n';
  }
}

void write_per_image_csv(const std::filesystem::path& path,
                         const std::vector<MetricsReport>& reports) {
  auto out = open_report(path);
  out << "method,scale,dataset,image,psnr,ssim\n";
  for (const auto& r : reports)
    for (const auto& s : r.images) {
      out << r.method << ',' << r.scale << ',' << r.dataset << ',' << s.name << ','
          << std::setprecision(4) << s.psnr << ',' << std::setprecision(6) << s.ssim << '\n';
    }
}

void write_report_markdown(const std::filesystem::path& path,
                           const std::vector<MetricsReport>& reports) {
  std::vector<std::string> datasets;
  std::vector<std::pair<std::string, int>> rows;
  for (const auto& r : reports) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
      datasets.push_back(r.dataset);
    }
    const std::pair<std::string, int> key{r.method, r.scale};
    if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
  }
  auto out = open_report(path);
  out << "| Method | Scale | #Params[K] | #MACs[G] |";
  for (const auto& d : datasets) out << ' ' << d << " PSNR/SSIM |";
  out << "\n|---|---|---|---|";
  for (std::size_t i = 0; i < datasets.size(); ++i) out << "---|";
  out << '\n';
  for (const auto& [method, scale] : rows) {
    const MetricsReport* any = nullptr;
    for (const auto& r : reports)
      if (r.method == method && r.scale == scale) any = &r;
    out << "| " << method << " | x" << scale << " | ";
    if (any->params) {
      out << std::setprecision(1) << any->params / 1000.0 << " | " << std::setprecision(2)
          << any->macs / 1e9 << " |";
    } else {
      out << "- | - |";
    }
    for (const auto& d : datasets) {
      const MetricsReport* cell = nullptr;
      for (const auto& r : reports)
        if (r.method == method && r.scale == scale && r.dataset == d) cell = &r;
      if (cell) {
        out << ' ' << std::setprecision(2) << cell->psnr << '/' << std::setprecision(4)
            << cell->ssim << " |";
      } else {
        out << " - |";
      }
    }
    out << '\n';
  }
}

}  // namespace dcfmn

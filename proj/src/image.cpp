#include "dcfmn/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

namespace dcfmn {

Image8::Image8(int height, int width, std::uint8_t fill) : h(height), w(width) {
  if (height <= 0 || width <= 0) {
    throw ShapeError("image extents must be positive, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  rgb.assign(static_cast<std::size_t>(h) * w * 3, fill);
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

struct PngMessage {
  char text[160] = "";
};

void png_on_error(png_structp png, png_const_charp msg) {
  auto* m = static_cast<PngMessage*>(png_get_error_ptr(png));
  std::snprintf(m->text, sizeof m->text, "%s", msg);
  png_longjmp(png, 1);
}

void png_on_warning(png_structp, png_const_charp) {}

// Runs libpng calls with the error jump target set; false when libpng bailed out.
// `f` must not own any objects with destructors.
template <typename F>
bool png_guarded(png_structp png, F&& f) {
  if (setjmp(png_jmpbuf(png))) return false;
  f();
  return true;
}

}  // namespace

Image8 read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }
  PngMessage msg;
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &msg, png_on_error, png_on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialisation failed");
  }
  const auto fail = [&] {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG '" + path.string() + "': " + msg.text);
  };
  std::FILE* fp = file.get();
  if (!png_guarded(png, [&] {
        png_init_io(png, fp);
        png_set_sig_bytes(png, 8);
        png_read_info(png, info);
      })) {
    fail();
  }
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  std::string problem;
  if (depth != 8 && !(color == PNG_COLOR_TYPE_GRAY && depth < 8)) {
    problem = std::to_string(depth) + "-bit samples";
  } else if (color == PNG_COLOR_TYPE_PALETTE) {
    problem = "palette colour";
  } else if (color & PNG_COLOR_MASK_ALPHA) {
    problem = "alpha channel";
  } else if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    problem = "transparency chunk";
  }
  if (!problem.empty()) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw UnsupportedError("'" + path.string() + "': " + problem +
                           " not supported (8-bit RGB or grayscale only)");
  }
  Image8 out(height, width);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) {
    rows[y] = out.rgb.data() + static_cast<std::size_t>(y) * width * 3;
  }
  png_bytepp row_ptrs = rows.data();
  if (!png_guarded(png, [&] {
        if (color == PNG_COLOR_TYPE_GRAY) {
          if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
          png_set_gray_to_rgb(png);
        }
        png_read_update_info(png, info);
        png_read_image(png, row_ptrs);
        png_read_end(png, nullptr);
      })) {
    fail();
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
  if (image.h <= 0 || image.w <= 0 ||
      image.rgb.size() != static_cast<std::size_t>(image.h) * image.w * 3) {
    throw ShapeError("write_png: malformed image");
  }
  FilePtr file = open_file(path, "wb");
  PngMessage msg;
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, &msg, png_on_error, png_on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialisation failed");
  }
  std::vector<png_bytep> rows(image.h);
  for (int y = 0; y < image.h; ++y) {
    rows[y] = const_cast<png_bytep>(image.rgb.data() + static_cast<std::size_t>(y) * image.w * 3);
  }
  std::FILE* fp = file.get();
  png_bytepp row_ptrs = rows.data();
  const bool ok = png_guarded(png, [&] {
    png_init_io(png, fp);
    png_set_IHDR(png, info, image.w, image.h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, row_ptrs);
    png_write_end(png, nullptr);
  });
  if (!ok) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing '" + path.string() + "': " + msg.text);
  }
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("failed writing '" + path.string() + "'");
}

template <typename T>
Tensor4<T> to_real(const Image8& image) {
  Tensor4<T> t(1, 3, image.h, image.w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.h; ++y)
      for (int x = 0; x < image.w; ++x) t(0, c, y, x) = static_cast<T>(image.at(y, x, c) / 255.0);
  return t;
}

template <typename T>
Image8 to_image8(const Tensor4<T>& x, int batch_index) {
  if (x.c() != 3) throw ShapeError("to_image8 expects 3 channels, got " + x.shape().str());
  Image8 img(x.h(), x.w());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < x.h(); ++y)
      for (int xx = 0; xx < x.w(); ++xx) {
        const double v = std::clamp(static_cast<double>(x(batch_index, c, y, xx)), 0.0, 1.0);
        img.at(y, xx, c) = static_cast<std::uint8_t>(std::round(v * 255.0));
      }
  return img;
}

double cubic_kernel(double t) {
  constexpr double a = -0.5;
  const double x = std::abs(t);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  std::vector<int> index;
  std::vector<double> weight;
};

// Source taps and normalized weights for every output position along one axis.
std::vector<Taps> axis_taps(int in, int out, bool antialias) {
  const double scale = static_cast<double>(out) / in;
  const double stretch = (antialias && scale < 1.0) ? scale : 1.0;
  const double support = 2.0 / stretch;
  std::vector<Taps> taps(out);
  for (int i = 0; i < out; ++i) {
    const double centre = (i + 0.5) / scale - 0.5;
    const int lo = static_cast<int>(std::floor(centre - support));
    const int hi = static_cast<int>(std::ceil(centre + support));
    double sum = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double wgt = stretch * cubic_kernel(stretch * (centre - j));
      if (wgt == 0.0) continue;
      taps[i].index.push_back(std::clamp(j, 0, in - 1));
      taps[i].weight.push_back(wgt);
      sum += wgt;
    }
    for (auto& wgt : taps[i].weight) wgt /= sum;
  }
  return taps;
}

}  // namespace

template <typename T>
Tensor4<T> bicubic_resize(const Tensor4<T>& x, int out_h, int out_w, bool antialias) {
  if (out_h <= 0 || out_w <= 0) {
    throw ConfigError("bicubic_resize: target extents must be positive");
  }
  if (out_h == x.h() && out_w == x.w()) return x;
  const auto ty = axis_taps(x.h(), out_h, antialias);
  const auto tx = axis_taps(x.w(), out_w, antialias);
  Tensor4<T> out(x.n(), x.c(), out_h, out_w);
  std::vector<double> rows(static_cast<std::size_t>(x.h()) * out_w);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* src = x.plane(n, c);
      for (int y = 0; y < x.h(); ++y) {
        for (int i = 0; i < out_w; ++i) {
          double acc = 0.0;
          for (std::size_t k = 0; k < tx[i].index.size(); ++k) {
            acc += tx[i].weight[k] * src[static_cast<std::size_t>(y) * x.w() + tx[i].index[k]];
          }
          rows[static_cast<std::size_t>(y) * out_w + i] = acc;
        }
      }
      T* dst = out.plane(n, c);
      for (int j = 0; j < out_h; ++j) {
        for (int i = 0; i < out_w; ++i) {
          double acc = 0.0;
          for (std::size_t k = 0; k < ty[j].index.size(); ++k) {
            acc += ty[j].weight[k] * rows[static_cast<std::size_t>(ty[j].index[k]) * out_w + i];
          }
          dst[static_cast<std::size_t>(j) * out_w + i] = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

Image8 modcrop(const Image8& image, int scale) {
  if (scale < 1) throw ConfigError("modcrop: scale must be positive");
  const int h = image.h - image.h % scale;
  const int w = image.w - image.w % scale;
  if (h == 0 || w == 0) {
    throw ShapeError("modcrop: " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                     " image is smaller than scale " + std::to_string(scale));
  }
  return crop(image, 0, 0, h, w);
}

namespace {

Image8 resize8(const Image8& img, int out_h, int out_w) {
  return to_image8(bicubic_resize(to_real<double>(img), out_h, out_w, true));
}

}  // namespace

Image8 degrade(const Image8& hr, int scale) {
  if (scale < 1 || hr.h % scale != 0 || hr.w % scale != 0) {
    throw ShapeError("degrade: " + std::to_string(hr.h) + "x" + std::to_string(hr.w) +
                     " is not divisible by scale " + std::to_string(scale) + " (modcrop first)");
  }
  return resize8(hr, hr.h / scale, hr.w / scale);
}

Image8 bicubic_upscale(const Image8& lr, int scale) {
  if (scale < 1) throw ConfigError("bicubic_upscale: scale must be positive");
  return resize8(lr, lr.h * scale, lr.w * scale);
}

Image8 crop(const Image8& image, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > image.h || x0 + w > image.w) {
    throw ShapeError("crop window outside " + std::to_string(image.h) + "x" +
                     std::to_string(image.w) + " image");
  }
  Image8 out(h, w);
  for (int y = 0; y < h; ++y) {
    const auto* src = &image.rgb[(static_cast<std::size_t>(y0 + y) * image.w + x0) * 3];
    std::copy(src, src + static_cast<std::size_t>(w) * 3,
              out.rgb.begin() + static_cast<std::ptrdiff_t>(y) * w * 3);
  }
  return out;
}

Image8 augment(const Image8& image, int code) {
  Image8 cur = image;
  if (code & 1) {
    for (int y = 0; y < cur.h; ++y)
      for (int x = 0; x < cur.w / 2; ++x)
        for (int c = 0; c < 3; ++c) std::swap(cur.at(y, x, c), cur.at(y, cur.w - 1 - x, c));
  }
  for (int turn = 0; turn < ((code >> 1) & 3); ++turn) {
    Image8 r(cur.w, cur.h);
    for (int y = 0; y < cur.h; ++y)
      for (int x = 0; x < cur.w; ++x)
        for (int c = 0; c < 3; ++c) r.at(x, cur.h - 1 - y, c) = cur.at(y, x, c);
    cur = std::move(r);
  }
  return cur;
}

PatchPair sample_patch_pair(const Image8& hr, const Image8& lr, int scale, int patch, Rng& rng,
                            bool augmentation) {
  if (patch <= 0) throw ConfigError("patch size must be positive");
  if (lr.h < patch || lr.w < patch) {
    throw ShapeError("patch " + std::to_string(patch) + " exceeds LR image " +
                     std::to_string(lr.h) + "x" + std::to_string(lr.w));
  }
  if (hr.h < lr.h * scale || hr.w < lr.w * scale) {
    throw ShapeError("HR image is smaller than LR image times scale");
  }
  const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(lr.h - patch + 1)));
  const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(lr.w - patch + 1)));
  PatchPair p{crop(hr, y0 * scale, x0 * scale, patch * scale, patch * scale),
              crop(lr, y0, x0, patch, patch)};
  if (augmentation) {
    const int code = static_cast<int>(rng.below(8));
    p.hr = augment(p.hr, code);
    p.lr = augment(p.lr, code);
  }
  return p;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  const auto base = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path q(p);
    return (q.is_relative() ? base / q : q).string();
  };
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string col; std::getline(ss, col, '\t');) cols.push_back(col);
    if (cols.size() != 3) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected hr_path<TAB>lr_path<TAB>scale");
    }
    ManifestEntry e{resolve(cols[0]), resolve(cols[1]), 0};
    try {
      std::size_t used = 0;
      e.scale = std::stoi(cols[2], &used);
      if (used != cols[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": bad scale '" +
                        cols[2] + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  for (const auto& e : entries) out << e.hr_path << '\t' << e.lr_path << '\t' << e.scale << '\n';
  if (!out) throw IoError("failed writing manifest '" + path.string() + "'");
}

std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("'" + dir.string() + "' is not a directory");
  }
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

template Tensor4<float> to_real<float>(const Image8&);
template Tensor4<double> to_real<double>(const Image8&);
template Image8 to_image8(const Tensor4<float>&, int);
template Image8 to_image8(const Tensor4<double>&, int);
template Tensor4<float> bicubic_resize(const Tensor4<float>&, int, int, bool);
template Tensor4<double> bicubic_resize(const Tensor4<double>&, int, int, bool);

}  // namespace dcfmn

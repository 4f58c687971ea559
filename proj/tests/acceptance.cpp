// Acceptance checks C1..C8. Usage: acceptance <n|all> [--cli PATH]
// Prints one "C<n> PASS|FAIL|SKIP" line per criterion. Exit status: 0 pass,
// 1 any failure, 77 when a single requested criterion is skipped.

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "dcfmn/checkpoint.hpp"
#include "dcfmn/fuse_model.hpp"
#include "dcfmn/image.hpp"
#include "dcfmn/loss.hpp"
#include "dcfmn/metrics.hpp"
#include "dcfmn/model.hpp"
#include "dcfmn/ops.hpp"
#include "dcfmn/reparam.hpp"
#include "dcfmn/train.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace dcfmn;
using dcfmn::testing::max_abs_diff_interior;
using dcfmn::testing::max_vjp_error;
using dcfmn::testing::random_tensor;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) {
  return {ok ? Status::pass : Status::fail, std::move(detail)};
}

std::string fmt(const char* format, double v) {
  char buf[96];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Perturbs every parameter of a freshly initialised model so that biases and
// norm affines are exercised too.
template <typename T>
void perturb(Model<T>& m, Rng& rng, double amp) {
  for (auto& [path, t] : m.params) {
    const bool weight = path.ends_with(".weight");
    for (auto& v : t.values()) {
      v = static_cast<T>(v + (weight ? 0.0 : rng.uniform(-amp, amp)));
    }
  }
}

// ------------------------------------------------------------------ C1

Outcome c1_bicubic() {
  const char* dir = std::getenv("DCFMN_SET5_DIR");
  if (dir == nullptr || *dir == '\0') {
    return {Status::skip, "DCFMN_SET5_DIR not set (folder of the five Set5 HR PNGs)"};
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto files = list_pngs(dir);
  if (files.size() != 5) {
    return {Status::fail, "expected 5 PNGs in " + std::string(dir) + ", found " +
                              std::to_string(files.size())};
  }
  auto run = [&](int scale) {
    std::vector<ManifestEntry> entries;
    for (const auto& f : files) entries.push_back({f.string(), "", scale});
    return evaluate(entries, scale, bicubic_upscaler(scale), "Bicubic", "Set5");
  };
  const auto x4 = run(4);
  const auto x2 = run(2);
  const double secs = seconds_since(t0);
  const bool ok4 = std::abs(x4.psnr - 28.42) <= 0.35 && std::abs(x4.ssim - 0.8104) <= 0.012;
  const bool ok2 = std::abs(x2.psnr - 33.66) <= 0.35;
  return verdict(ok4 && ok2 && secs < 10.0,
                 "x4 " + fmt("%.2f", x4.psnr) + "/" + fmt("%.4f", x4.ssim) +
                     " (target 28.42/0.8104), x2 " + fmt("%.2f", x2.psnr) + "/" +
                     fmt("%.4f", x2.ssim) + " (target 33.66 dB), " + fmt("%.1f s", secs));
}

// ------------------------------------------------------------------ C2

Outcome c2_fusion() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst_model = 0.0;
  double worst_lfem = 0.0;
  int inputs = 0;
  for (int m = 0; m < 10; ++m) {
    const int scale = 2 + m % 3;
    auto model = init_model<float>(ModelConfig::preset("tiny", scale), 100 + m);
    perturb(model, rng, 0.1);
    const auto fused = fuse_model(model);
    int max_k = 0;
    for (int t : model.config.chunk_targets) max_k = std::max(max_k, t);
    const int margin = (max_k / 2) * scale;
    for (int i = 0; i < 10; ++i, ++inputs) {
      const auto x = random_tensor<float>({1, 3, 28, 28}, rng, 0.0, 1.0);
      worst_model = std::max(worst_model, max_abs_diff_interior(model_forward(model, x),
                                                                model_forward(fused, x), margin));
      const auto feat = random_tensor<float>({1, model.config.channels, 20, 20}, rng);
      const int block = i % model.config.num_blocks;
      worst_lfem = std::max(worst_lfem, max_abs_diff_interior(lfem_forward(model, block, feat),
                                                              lfem_forward(fused, block, feat), 0));
    }
  }
  const double secs = seconds_since(t0);
  return verdict(worst_model <= 1e-4 && worst_lfem <= 1e-5 && inputs == 100 && secs < 30.0,
                 std::to_string(inputs) + " inputs over 10 models: interior max diff " +
                     fmt("%.2e", worst_model) + " (<= 1e-4), LFEM everywhere " +
                     fmt("%.2e", worst_lfem) + " (<= 1e-5), " + fmt("%.1f s", secs));
}

// ------------------------------------------------------------------ C3

using T4 = Tensor4<double>;

T4 positive_bias(int c, Rng& rng) { return random_tensor<double>({1, c, 1, 1}, rng, 0.2, 1.0); }

double op_level_worst(Rng& rng) {
  double worst = 0.0;
  auto track = [&](double e) { worst = std::max(worst, e); };

  struct Geo { int cin, cout, k, d, g; };
  for (const Geo& c : {Geo{3, 4, 3, 1, 1}, Geo{4, 4, 3, 2, 4}, Geo{4, 4, 5, 3, 4},
                       Geo{6, 2, 1, 1, 1}, Geo{4, 6, 3, 1, 2}}) {
    auto x = random_tensor<double>({2, c.cin, 7, 6}, rng);
    auto w = random_tensor<double>({c.cout, c.cin / c.g, c.k, c.k}, rng);
    auto b = random_tensor<double>({1, c.cout, 1, 1}, rng);
    auto up = random_tensor<double>({2, c.cout, 7, 6}, rng);
    const ConvSpec spec{c.cin, c.cout, c.k, c.d, c.g};
    auto g = conv2d_vjp(x, w, &b, spec, up);
    track(max_vjp_error([&] { return conv2d(x, w, &b, spec); }, up,
                        {{&x, &g.dx}, {&w, &g.dweight}, {&b, &g.dbias}}));
  }
  {
    auto x = random_tensor<double>({1, 3, 4, 4}, rng, -3, 3);
    auto up = random_tensor<double>({1, 3, 4, 4}, rng);
    auto dx = gelu_vjp(x, up);
    track(max_vjp_error([&] { return gelu(x); }, up, {{&x, &dx}}));
  }
  {
    auto x = random_tensor<double>({2, 5, 3, 3}, rng, -2, 2);
    auto gain = random_tensor<double>({1, 5, 1, 1}, rng, 0.5, 1.5);
    auto bias = random_tensor<double>({1, 5, 1, 1}, rng);
    auto up = random_tensor<double>({2, 5, 3, 3}, rng);
    auto g = layer_norm_vjp(x, gain, up);
    track(max_vjp_error([&] { return layer_norm(x, gain, bias); }, up,
                        {{&x, &g.dx}, {&gain, &g.dgain}, {&bias, &g.dbias}}));
  }
  {
    auto x = random_tensor<double>({2, 8, 3, 3}, rng);
    auto w1 = random_tensor<double>({2, 8, 1, 1}, rng);
    auto b1 = positive_bias(2, rng);
    auto w2 = random_tensor<double>({8, 2, 1, 1}, rng);
    auto b2 = random_tensor<double>({1, 8, 1, 1}, rng);
    auto up = random_tensor<double>({2, 8, 3, 3}, rng);
    const SeParams<double> p{w1, b1, w2, b2};
    auto g = se_block_vjp(x, p, up);
    track(max_vjp_error([&] { return se_block(x, p); }, up,
                        {{&x, &g.dx}, {&w1, &g.dw1}, {&b1, &g.db1}, {&w2, &g.dw2}, {&b2, &g.db2}}));
  }
  for (int target : {5, 7, 13, 17}) {
    DilatedStackSpec spec = stack_for_target(target, 3);
    std::vector<T4> ws, bs;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
      ws.push_back(random_tensor<double>(spec.stage_conv(i).weight_shape(), rng));
      bs.push_back(random_tensor<double>({1, 3, 1, 1}, rng));
    }
    auto x = random_tensor<double>({1, 3, 9, 8}, rng);
    auto up = random_tensor<double>({1, 3, 9, 8}, rng);
    auto g = dilated_stack_vjp<double>(x, spec, ws, bs, up);
    std::vector<dcfmn::testing::GradTarget> targets{{&x, &g.dx}};
    for (std::size_t i = 0; i < ws.size(); ++i) {
      targets.push_back({&ws[i], &g.dweights[i]});
      targets.push_back({&bs[i], &g.dbiases[i]});
    }
    track(max_vjp_error([&] { return dilated_stack_forward<double>(x, spec, ws, bs); }, up,
                        targets));
  }
  {
    auto x = random_tensor<double>({1, 8, 3, 2}, rng);
    auto up = random_tensor<double>({1, 2, 6, 4}, rng);
    auto dx = pixel_unshuffle(up, 2);
    track(max_vjp_error([&] { return pixel_shuffle(x, 2); }, up, {{&x, &dx}}));
  }
  {
    auto hr = random_tensor<double>({2, 3, 8, 6}, rng);
    auto sr = random_tensor<double>({2, 3, 8, 6}, rng);
    T4 one(Shape4{1, 1, 1, 1}, 1.0);
    auto as_tensor = [](double v) { return T4(Shape4{1, 1, 1, 1}, v); };
    auto g1 = l1_loss_grad(sr, hr);
    track(max_vjp_error([&] { return as_tensor(l1_loss(sr, hr)); }, one, {{&sr, &g1}}));
    auto g2 = freq_loss_grad(sr, hr);
    track(max_vjp_error([&] { return as_tensor(freq_loss(sr, hr)); }, one, {{&sr, &g2}}));
    const LossWeights w{0.7, 0.3};
    auto g3 = composite_loss(sr, hr, w).grad;
    track(max_vjp_error([&] { return as_tensor(composite_loss(sr, hr, w).total); }, one,
                        {{&sr, &g3}}));
  }
  return worst;
}

Outcome c3_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(3);
  const double op_worst = op_level_worst(rng);

  ModelConfig cfg = ModelConfig::preset("tiny", 2);
  cfg.channels = 8;
  auto model = init_model<double>(cfg, 33);
  perturb(model, rng, 0.2);
  auto image = random_tensor<double>({1, 3, 8, 8}, rng, 0.0, 1.0);
  auto up = random_tensor<double>({1, 3, 16, 16}, rng);
  const auto grads = model_backward(model, image, up);
  std::vector<std::pair<std::string, std::size_t>> slots;
  for (const auto& [path, t] : model.params) {
    for (std::size_t i = 0; i < t.size(); ++i) slots.emplace_back(path, i);
  }
  double model_worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const auto& [path, i] = slots[rng.below(slots.size())];
    const auto loss = [&] { return dcfmn::testing::dot(model_forward(model, image), up); };
    const double numeric =
        dcfmn::testing::central_difference(loss, model.params.at(path)[i], 1e-5);
    model_worst = std::max(model_worst, dcfmn::testing::relative_error(
                                            grads.at(path)[i], numeric, dcfmn::testing::kGradFloor));
  }
  const double secs = seconds_since(t0);
  return verdict(op_worst <= 1e-4 && model_worst <= 1e-3 && secs < 120.0,
                 "op-level worst relative error " + fmt("%.2e", op_worst) +
                     " (<= 1e-4), whole model 50 params " + fmt("%.2e", model_worst) +
                     " (<= 1e-3), " + fmt("%.1f s", secs));
}

// ------------------------------------------------------------------ C4

Outcome c4_dft() {
  Rng rng(4);
  double worst = 0.0;
  double worst_round = 0.0;
  for (int size : {8, 16}) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> plane(size * size);
      for (auto& v : plane) v = rng.uniform(-1, 1);
      const auto fast = dft2d(std::span<const double>(plane), size, size, DftPath::radix2);
      const auto slow = dcfmn::testing::naive_dft2d(plane, size, size);
      for (int u = 0; u < size; ++u) {
        for (int v = 0; v < size; ++v) {
          worst = std::max(worst, std::abs(fast.at(u, v) - slow[u * size + v]));
        }
      }
      const auto back = idft2d(fast, DftPath::radix2);
      for (std::size_t i = 0; i < plane.size(); ++i) {
        worst_round = std::max(worst_round, std::abs(back[i] - plane[i]));
      }
    }
  }
  return verdict(worst <= 1e-9 && worst_round <= 1e-6,
                 "40 planes: fast vs naive " + fmt("%.2e", worst) + " (<= 1e-9), round trip " +
                     fmt("%.2e", worst_round) + " (<= 1e-6)");
}

// ------------------------------------------------------------------ C5

// Flat background with overlapping coloured discs and bars.
Image8 shapes_image(int size, int seed) {
  Image8 img(size, size);
  Rng r(1000 + seed);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<std::uint8_t>(90 + 40 * c);
    }
  }
  for (int k = 0; k < 14; ++k) {
    const int cx = static_cast<int>(r.below(size));
    const int cy = static_cast<int>(r.below(size));
    const int rad = 4 + static_cast<int>(r.below(14));
    const bool disc = r.below(2) == 1;
    std::uint8_t col[3];
    for (auto& v : col) v = static_cast<std::uint8_t>(r.below(256));
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const bool inside = disc ? (x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad
                                 : std::abs(x - cx) <= rad && std::abs(y - cy) <= rad / 2;
        if (inside) {
          for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
        }
      }
    }
  }
  return img;
}

Outcome c5_overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kScale = 2;
  std::vector<TrainingPair> data;
  for (int i = 0; i < 8; ++i) {
    TrainingPair p;
    p.hr = shapes_image(64, i);
    p.lr = degrade(p.hr, kScale);
    data.push_back(std::move(p));
  }
  const auto model = init_model<float>(ModelConfig::preset("tiny", kScale), 1);
  TrainConfig cfg;
  cfg.total_iters = 2000;
  cfg.batch_size = 8;
  cfg.patch_size = 32;
  cfg.seed = 1;
  const auto result = train(model, data, cfg);

  double early = 0.0;
  int early_n = 0;
  for (const auto& r : result.trace) {
    if (r.iteration >= 5 && r.iteration <= 50) {
      early += r.total;
      ++early_n;
    }
  }
  early /= early_n;
  double late = 0.0;
  const int tail = 20;
  for (std::size_t i = result.trace.size() - tail; i < result.trace.size(); ++i) {
    late += result.trace[i].total;
  }
  late /= tail;

  auto mean_psnr = [&](const Upscaler& up) {
    double s = 0.0;
    for (const auto& p : data) s += psnr(rgb_to_y(up(p.lr)), rgb_to_y(p.hr), kScale);
    return s / static_cast<double>(data.size());
  };
  const double bicubic = mean_psnr(bicubic_upscaler(kScale));
  const double trained = mean_psnr(model_upscaler(result.model));
  const double ema = mean_psnr(model_upscaler(result.ema));
  const double secs = seconds_since(t0);
  const bool loss_ok = late <= 0.5 * early;
  const bool psnr_ok = trained >= bicubic + 0.3;
  return verdict(loss_ok && psnr_ok && secs < 900.0,
                 "loss " + fmt("%.4f", late) + " vs iter 5-50 mean " + fmt("%.4f", early) +
                     " (ratio " + fmt("%.3f", late / early) + ", <= 0.5); training-set PSNR " +
                     fmt("%.2f", trained) + " dB (EMA " + fmt("%.2f", ema) + ") vs bicubic " +
                     fmt("%.2f", bicubic) + " (needs +0.3); " + fmt("%.0f s", secs));
}

// ------------------------------------------------------------------ C6

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string shell_quote(const fs::path& p) { return "'" + p.string() + "'"; }

Outcome c6_determinism(const std::string& cli) {
  if (cli.empty() || !fs::exists(cli)) return {Status::fail, "CLI binary not found: " + cli};
  const fs::path root = fs::temp_directory_path() / "dcfmn_acceptance_c6";
  fs::remove_all(root);
  fs::create_directories(root / "hr");
  for (int i = 0; i < 4; ++i) {
    write_png(root / "hr" / ("img" + std::to_string(i) + ".png"), shapes_image(48, i));
  }
  const std::string quiet = " > /dev/null 2>&1";
  if (std::system((shell_quote(cli) + " degrade --in " + shell_quote(root / "hr") + " --out " +
                   shell_quote(root / "lr") + " --scale 2" + quiet)
                      .c_str()) != 0) {
    return {Status::fail, "degrade command failed"};
  }
  for (const char* run : {"run1", "run2"}) {
    const std::string cmd = shell_quote(cli) + " train --manifest " + shell_quote(root / "lr" / "manifest.tsv") +
                            " --model tiny --scale 2 --seed 5 --iters 20 --batch 2 --patch 12" +
                            " --checkpoint-every 10 --out " + shell_quote(root / run) + quiet;
    if (std::system(cmd.c_str()) != 0) return {Status::fail, std::string("train failed: ") + run};
  }
  int compared = 0;
  for (const auto& entry : fs::directory_iterator(root / "run1")) {
    const auto name = entry.path().filename();
    if (name.extension() != ".csv" && name.extension() != ".ckpt") continue;
    if (!fs::exists(root / "run2" / name) ||
        slurp(entry.path()) != slurp(root / "run2" / name)) {
      return {Status::fail, "differs: " + name.string()};
    }
    ++compared;
  }
  fs::remove_all(root);
  return verdict(compared == 5, std::to_string(compared) +
                                    " files byte-identical (loss.csv, final and periodic "
                                    "checkpoints, raw and EMA)");
}

// ------------------------------------------------------------------ C7

struct HandCount {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

// Layer-by-layer tally for C = 16, 2 blocks, written out from the layer list:
// head 3x3 3->C; per block LN(C), four depthwise chunks of C/4, 1x1 C->C,
// LN(C), 1x1 C->2C, two 3x3 2C->2C branches (one when fused), SE 2C->2C/4->2C,
// 1x1 2C->C; tail 3x3 C->3 s^2. LR extents are ceil(720 / s) x ceil(1280 / s).
HandCount tiny_hand_count(int s, bool fused) {
  const std::uint64_t c = 16, cc = 4, c2 = 32, hid = 8;
  const std::uint64_t pix = static_cast<std::uint64_t>((720 + s - 1) / s) * ((1280 + s - 1) / s);
  HandCount h;
  auto conv = [&](std::uint64_t cout, std::uint64_t cin_per_group, std::uint64_t k) {
    h.params += cout * cin_per_group * k * k + cout;
    h.macs += pix * cout * cin_per_group * k * k;
  };
  auto norm = [&] {
    h.params += 2 * c;
    h.macs += 2 * c * pix;
  };
  conv(c, 3, 3);
  for (int b = 0; b < 2; ++b) {
    norm();
    if (fused) {
      for (std::uint64_t k : {5, 7, 13, 17}) conv(cc, 1, k);
    } else {
      // (3,1)(3,1) | (3,1)(3,2) | (3,2)x3 | (3,2)(3,3)(3,3): ten 3x3 depthwise stages.
      for (int stage = 0; stage < 10; ++stage) conv(cc, 1, 3);
    }
    conv(c, c, 1);
    norm();
    conv(c2, c, 1);
    for (int j = 0; j < (fused ? 1 : 2); ++j) conv(c2, c2, 3);
    h.params += (hid * c2 + hid) + (c2 * hid + c2);
    h.macs += 2 * c2 * pix + 2 * hid * c2;
    conv(c, c2, 1);
  }
  conv(3 * s * s, c, 3);
  return h;
}

Outcome c7_accounting() {
  std::string detail;
  bool ok = true;
  for (int s : {2, 3, 4}) {
    for (bool fused : {false, true}) {
      const auto cfg = ModelConfig::preset("tiny", s);
      const HandCount hand = tiny_hand_count(s, fused);
      const auto p = count_params(cfg, fused);
      const auto m = count_macs(cfg, fused);
      ok = ok && p == hand.params && m == hand.macs;
      if (s == 2) {
        detail += std::string(fused ? "fused" : "training") + " x2 " + std::to_string(p) +
                  " params / " + std::to_string(m) + " MACs; ";
      }
    }
  }
  return verdict(ok, detail + "x2/x3/x4 both forms equal the hand tally at 1280x720 output");
}

// ------------------------------------------------------------------ C8

Outcome c8_ablation() {
  const auto base_cfg = ModelConfig::preset("tiny", 2);
  const auto base = count_params(base_cfg, false);
  std::vector<TrainingPair> data;
  for (int i = 0; i < 2; ++i) {
    TrainingPair p;
    p.hr = shapes_image(32, i);
    p.lr = degrade(p.hr, 2);
    data.push_back(std::move(p));
  }
  TrainConfig tc;
  tc.total_iters = 1;
  tc.batch_size = 2;
  tc.patch_size = 12;

  const std::uint64_t blocks = base_cfg.num_blocks;
  const std::uint64_t c2 = 2 * base_cfg.channels;
  const std::uint64_t hid = c2 / 4;
  const std::uint64_t se_total = blocks * ((hid * c2 + hid) + (c2 * hid + c2));
  // Ten 3x3 stages per block become four.
  const std::uint64_t plain_saving = blocks * 6 * (base_cfg.channels / 4) * 10;

  struct Case {
    const char* name;
    Variants v;
    std::int64_t expected_delta;
  };
  const Case cases[] = {
      {"dsmu_plain3x3", {true, false, false}, -static_cast<std::int64_t>(plain_saving)},
      {"no_se", {false, true, false}, -static_cast<std::int64_t>(se_total)},
      {"no_self_residual", {false, false, true}, 0},
  };
  bool ok = true;
  std::string detail = "base " + std::to_string(base) + "; ";
  for (const auto& c : cases) {
    ModelConfig cfg = base_cfg;
    cfg.variants = c.v;
    const auto model = init_model<float>(cfg, 8);
    const auto out = train(model, data, tc);
    const bool trained = out.trace.size() == 1 && std::isfinite(out.trace[0].total) &&
                         !(out.model.params == model.params);
    const auto fused = fuse_model(out.model);
    const auto n = static_cast<std::int64_t>(count_params(cfg, false));
    const std::int64_t delta = n - static_cast<std::int64_t>(base);
    const bool fused_ok = count_params(fused) == count_params(cfg, true);
    ok = ok && trained && fused_ok && delta == c.expected_delta;
    detail += std::string(c.name) + " " + std::to_string(delta) + " (expected " +
              std::to_string(c.expected_delta) + ")" + (trained ? "" : " NOT TRAINED") + "; ";
  }
  return verdict(ok, detail + "each variant built, trained one step and fused");
}

}  // namespace

int main(int argc, char** argv) {
  std::string which = argc > 1 ? argv[1] : "all";
  std::string cli;
  for (int i = 2; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--cli") cli = argv[i + 1];
  }
  const std::vector<std::function<Outcome()>> checks = {
      c1_bicubic, c2_fusion,    c3_gradients, c4_dft, c5_overfit,
      [&] { return c6_determinism(cli); }, c7_accounting, c8_ablation};

  std::vector<int> selected;
  if (which == "all") {
    for (int i = 1; i <= 8; ++i) selected.push_back(i);
  } else {
    const int n = std::atoi(which.c_str());
    if (n < 1 || n > 8) {
      std::fprintf(stderr, "usage: acceptance <1-8|all> [--cli PATH]\n");
      return 2;
    }
    selected.push_back(n);
  }

  bool any_fail = false;
  bool any_skip = false;
  for (int n : selected) {
    Outcome o;
    try {
      o = checks[n - 1]();
    } catch (const std::exception& e) {
      o = {Status::fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::skip ? "SKIP" : "FAIL";
    std::printf("C%d %s: %s\n", n, tag, o.detail.c_str());
    std::fflush(stdout);
    any_fail = any_fail || o.status == Status::fail;
    any_skip = any_skip || o.status == Status::skip;
  }
  if (any_fail) return 1;
  if (any_skip && selected.size() == 1) return 77;
  return 0;
}

// dcfmn command-line front end: degrade, train, fuse, eval, sr, summary.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dcfmn/checkpoint.hpp"
#include "dcfmn/fuse_model.hpp"
#include "dcfmn/image.hpp"
#include "dcfmn/metrics.hpp"
#include "dcfmn/model.hpp"
#include "dcfmn/train.hpp"

namespace fs = std::filesystem;
using namespace dcfmn;

namespace {

const std::vector<std::string> kVariantNames = {"dsmu_plain3x3", "no_se", "no_self_residual"};

bool is_preset(const std::string& name) { return name == "S" || name == "L" || name == "tiny"; }

Variants parse_variants(const std::vector<std::string>& names) {
  Variants v;
  for (const auto& n : names) {
    if (n == "dsmu_plain3x3") {
      v.dsmu_plain3x3 = true;
    } else if (n == "no_se") {
      v.lfem_without_se = true;
    } else if (n == "no_self_residual") {
      v.lfem_without_self_residual = true;
    } else {
      throw ConfigError("unknown variant '" + n + "'");
    }
  }
  return v;
}

std::string variant_string(const Variants& v) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ",";
    out += name;
  };
  add(v.dsmu_plain3x3, "dsmu_plain3x3");
  add(v.lfem_without_se, "no_se");
  add(v.lfem_without_self_residual, "no_self_residual");
  return out.empty() ? "none" : out;
}

std::string fmt(const char* format, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, a);
  return buf;
}

// Echoes the fully resolved options of `app` and, when `dir` is set, stores them there.
void log_resolved_config(const CLI::App& app, const std::optional<fs::path>& dir) {
  const std::string text = app.config_to_str(true, false);
  std::cerr << "# resolved " << app.get_name() << " config\n" << text;
  if (dir) {
    fs::create_directories(*dir);
    std::ofstream out(*dir / (app.get_name() + "_config.ini"), std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write resolved config into " + dir->string());
  }
}

Model<float> load_model(const std::string& spec) {
  if (is_preset(spec)) throw ConfigError("expected a checkpoint path, got preset '" + spec + "'");
  return load_checkpoint(spec).model;
}

int manifest_scale(const std::vector<ManifestEntry>& entries) {
  if (entries.empty()) throw ConfigError("manifest has no entries");
  const int scale = entries.front().scale;
  for (const auto& e : entries) {
    if (e.scale != scale) throw ConfigError("manifest mixes scales " + std::to_string(scale) +
                                            " and " + std::to_string(e.scale));
  }
  return scale;
}

// Deterministic test card used for the fusion parity spot check.
Image8 test_card(int h, int w) {
  Image8 img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = static_cast<std::uint8_t>((x * 9 + y * 3) % 256);
      img.at(y, x, 1) = static_cast<std::uint8_t>(((x / 5 + y / 4) % 2) * 200 + 20);
      img.at(y, x, 2) = static_cast<std::uint8_t>(128 + 100 * std::sin(0.3 * x) * std::cos(0.2 * y));
    }
  }
  return img;
}

// ---------------------------------------------------------------- degrade

struct DegradeOptions {
  std::string in_dir;
  std::string out_dir;
  int scale = 4;
};

int cmd_degrade(const DegradeOptions& o) {
  const auto files = list_pngs(o.in_dir);
  if (files.empty()) throw ConfigError("no PNG files in " + o.in_dir);
  const fs::path out = o.out_dir;
  fs::create_directories(out);
  std::vector<ManifestEntry> entries;
  int failures = 0;
  for (const auto& hr_path : files) {
    try {
      const Image8 hr = modcrop(read_png(hr_path), o.scale);
      if (hr.h == 0 || hr.w == 0) throw ShapeError("image smaller than the scale factor");
      const fs::path lr_path = out / hr_path.filename();
      write_png(lr_path, degrade(hr, o.scale));
      entries.push_back({fs::relative(fs::absolute(hr_path), fs::absolute(out)).generic_string(),
                         lr_path.filename().generic_string(), o.scale});
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << "skipped " << hr_path.string() << ": " << e.what() << "\n";
    }
  }
  if (entries.empty()) throw IoError("no readable PNG files in " + o.in_dir);
  write_manifest(out / "manifest.tsv", entries);
  std::cout << "wrote " << entries.size() << " LR images and " << (out / "manifest.tsv").string()
            << (failures ? " (" + std::to_string(failures) + " skipped)" : std::string()) << "\n";
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string manifest;
  std::string model = "S";
  int scale = 4;
  std::uint64_t seed = 0;
  int iters = 2000;
  int batch = 8;
  int patch = 32;
  double lambda1 = 1.0;
  double lambda2 = 0.05;
  std::string out = "run";
  std::vector<std::string> variants;
  int checkpoint_every = 500;
  int log_every = 1;
  bool no_augment = false;
};

int cmd_train(const TrainOptions& o) {
  Model<float> initial;
  if (is_preset(o.model)) {
    ModelConfig cfg = ModelConfig::preset(o.model, o.scale);
    cfg.variants = parse_variants(o.variants);
    initial = init_model<float>(cfg, o.seed);
  } else {
    initial = load_model(o.model);
    if (initial.fused) throw UnsupportedError("cannot train an inference-form checkpoint");
    if (initial.config.scale != o.scale) {
      throw ConfigError("checkpoint scale " + std::to_string(initial.config.scale) +
                        " does not match --scale " + std::to_string(o.scale));
    }
  }
  const auto entries = read_manifest(o.manifest);
  const int mscale = manifest_scale(entries);
  if (mscale != o.scale) {
    throw ConfigError("manifest scale " + std::to_string(mscale) + " does not match --scale " +
                      std::to_string(o.scale));
  }
  const auto pairs = load_pairs(entries, o.scale);

  TrainConfig tc;
  tc.total_iters = o.iters;
  tc.batch_size = o.batch;
  tc.patch_size = o.patch;
  tc.seed = o.seed;
  tc.loss.lambda1 = o.lambda1;
  tc.loss.lambda2 = o.lambda2;
  tc.augment = !o.no_augment;
  tc.log_every = o.log_every;
  tc.validate();

  const fs::path out = o.out;
  fs::create_directories(out);
  const std::map<std::string, std::string> meta = {
      {"seed", std::to_string(o.seed)},
      {"iterations", std::to_string(o.iters)},
      {"variants", variant_string(initial.config.variants)}};
  auto save_pair = [&](const std::string& tag, const ParamStore<float>& params,
                       const ParamStore<float>& ema) {
    save_checkpoint(out / (tag + ".ckpt"), Model<float>{initial.config, false, params}, meta);
    save_checkpoint(out / (tag + "_ema.ckpt"), Model<float>{initial.config, false, ema}, meta);
  };

  const auto start = std::chrono::steady_clock::now();
  const TrainObserver<float> observer = [&](const LossRecord& r, const TrainState<float>& s) {
    if (o.checkpoint_every > 0 && r.iteration % o.checkpoint_every == 0 &&
        r.iteration != o.iters) {
      save_pair("iter_" + std::to_string(r.iteration), s.params, s.ema);
    }
    if (r.iteration % 100 == 0 || r.iteration == o.iters) {
      const double sec =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "iter " << r.iteration << " lr " << fmt("%.3e", r.lr) << " loss "
                << fmt("%.5f", r.total) << " (" << fmt("%.1f", sec) << " s)\n";
    }
  };
  const auto result = train(initial, pairs, tc, observer);
  write_loss_csv(out / "loss.csv", result.trace);
  save_pair("final", result.model.params, result.ema.params);
  std::cout << "wrote " << (out / "final.ckpt").string() << ", "
            << (out / "final_ema.ckpt").string() << " and " << (out / "loss.csv").string()
            << "\n";
  return 0;
}

// ---------------------------------------------------------------- fuse

struct FuseOptions {
  std::string in;
  std::string out;
};

int cmd_fuse(const FuseOptions& o) {
  const Checkpoint ck = load_checkpoint(o.in);
  const ModelConfig& cfg = ck.model.config;
  if (ck.model.fused) {
    std::cout << "already fused; copied unchanged\n";
    if (fs::absolute(o.in) != fs::absolute(o.out)) {
      fs::copy_file(o.in, o.out, fs::copy_options::overwrite_existing);
    }
    return 0;
  }
  const Model<float> fused = fuse_model(ck.model);
  save_checkpoint(o.out, fused, ck.meta);
  std::cout << "params " << count_params(cfg, false) << " -> " << count_params(cfg, true) << "\n"
            << "macs   " << count_macs(cfg, false) << " -> " << count_macs(cfg, true) << "\n";

  const Image8 card = test_card(48, 48);
  const auto a = model_forward(ck.model, to_real<float>(card));
  const auto b = model_forward(fused, to_real<float>(card));
  int margin = 0;
  for (int i = 0; i < 4; ++i) margin = std::max(margin, cfg.chunk_targets[i] / 2);
  margin *= cfg.scale;
  double diff = 0;
  for (int c = 0; c < a.c(); ++c) {
    for (int y = margin; y < a.h() - margin; ++y) {
      for (int x = margin; x < a.w() - margin; ++x) {
        diff = std::max(diff, static_cast<double>(std::abs(a(0, c, y, x) - b(0, c, y, x))));
      }
    }
  }
  std::cout << "parity max abs diff (interior, test card) " << fmt("%.3e", diff) << "\n";
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string model;
  std::string manifest;
  int scale = 0;
  std::string out = "eval";
  std::string dataset;
  std::string method;
  std::string dump_sr;
  bool raw = false;
  bool flops = false;
};

int cmd_eval(const EvalOptions& o) {
  const auto entries = read_manifest(o.manifest);
  const int mscale = manifest_scale(entries);
  if (mscale < 2) throw ConfigError("manifest scale must be at least 2");
  if (o.scale != 0 && o.scale != mscale) {
    throw ConfigError("manifest scale " + std::to_string(mscale) + " does not match --scale " +
                      std::to_string(o.scale));
  }
  const std::string dataset = o.dataset.empty() ? fs::path(o.manifest).stem().string() : o.dataset;
  std::optional<fs::path> dump;
  if (!o.dump_sr.empty()) dump = fs::path(o.dump_sr);

  MetricsReport report;
  if (o.model == "bicubic") {
    report = evaluate(entries, mscale, bicubic_upscaler(mscale), "Bicubic", dataset, dump);
  } else {
    Model<float> model = load_model(o.model);
    if (model.config.scale != mscale) {
      throw ConfigError("checkpoint scale " + std::to_string(model.config.scale) +
                        " does not match manifest scale " + std::to_string(mscale));
    }
    if (!o.raw) model = fuse_model(model);
    const std::string method = o.method.empty() ? fs::path(o.model).stem().string() : o.method;
    report = evaluate(entries, mscale, model_upscaler(model), method, dataset, dump);
    report.params = count_params(model);
    report.macs = count_macs(model.config, model.fused);
  }
  if (o.flops) report.macs *= 2;

  const fs::path out = o.out;
  fs::create_directories(out);
  write_report_csv(out / "report.csv", {report});
  write_per_image_csv(out / "per_image.csv", {report});
  write_report_markdown(out / "report.md", {report});
  std::cout << report.method << " x" << report.scale << " " << report.dataset << ": PSNR "
            << fmt("%.2f", report.psnr) << " dB, SSIM " << fmt("%.4f", report.ssim) << " over "
            << report.images.size() << " images\n";
  return 0;
}

// ---------------------------------------------------------------- sr

struct SrOptions {
  std::string model;
  std::string in;
  std::string out;
  bool raw = false;
};

int cmd_sr(const SrOptions& o) {
  Model<float> model = load_model(o.model);
  if (!o.raw) model = fuse_model(model);
  const Image8 lr = read_png(o.in);
  const Image8 sr = model_upscaler(model)(lr);
  write_png(o.out, sr);
  std::cout << "wrote " << o.out << " (" << sr.w << "x" << sr.h << ")\n";
  return 0;
}

// ---------------------------------------------------------------- summary

struct SummaryOptions {
  std::string model = "S";
  int scale = 4;
  std::vector<std::string> variants;
  bool fused = false;
  bool json = false;
  int out_h = kMacOutputHeight;
  int out_w = kMacOutputWidth;
};

int cmd_summary(const SummaryOptions& o) {
  ModelConfig cfg;
  bool fused = o.fused;
  std::string name = o.model;
  if (is_preset(o.model)) {
    cfg = ModelConfig::preset(o.model, o.scale);
    cfg.variants = parse_variants(o.variants);
  } else {
    const Checkpoint ck = load_checkpoint(o.model);
    cfg = ck.model.config;
    fused = fused || ck.model.fused;
  }
  const CostReport cost = count_costs(cfg, fused, o.out_h, o.out_w);

  if (o.json) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : cost.layers) {
      layers.push_back({{"name", l.name},
                        {"kind", l.kind},
                        {"geometry", l.geometry},
                        {"params", l.params},
                        {"macs", l.macs}});
    }
    const nlohmann::json doc{{"model", name},
                             {"config", nlohmann::json::parse(config_to_json(cfg))},
                             {"fused", fused},
                             {"output", {o.out_h, o.out_w}},
                             {"input", {cost.lr_h, cost.lr_w}},
                             {"layers", layers},
                             {"total_params", cost.total_params},
                             {"total_macs", cost.total_macs}};
    std::cout << doc.dump(2) << "\n";
    return 0;
  }

  std::printf("model %s  scale x%d  C=%d  blocks=%d  variants=%s  form=%s\n", name.c_str(),
              cfg.scale, cfg.channels, cfg.num_blocks, variant_string(cfg.variants).c_str(),
              fused ? "fused" : "training");
  std::printf("input %dx%d -> output %dx%d\n\n", cost.lr_w, cost.lr_h, o.out_w, o.out_h);
  std::printf("%-34s %-10s %-26s %10s %16s\n", "layer", "kind", "geometry", "params", "macs");
  for (const auto& l : cost.layers) {
    std::printf("%-34s %-10s %-26s %10llu %16llu\n", l.name.c_str(), l.kind.c_str(),
                l.geometry.c_str(), static_cast<unsigned long long>(l.params),
                static_cast<unsigned long long>(l.macs));
  }
  std::printf("\ntotal params %llu (%.1f K)\ntotal macs   %llu (%.3f G)\n",
              static_cast<unsigned long long>(cost.total_params), cost.total_params / 1e3,
              static_cast<unsigned long long>(cost.total_macs), cost.total_macs / 1e9);
  if (is_preset(o.model) && o.model != "tiny") {
    if (auto ref = reference_params_k(o.model, o.scale)) {
      std::printf("reference table lists %d K for %s x%d\n", *ref, o.model.c_str(), o.scale);
    }
  }
  return 0;
}

// Turns a flat key=value file into flags for `sub`, skipping keys already given
// on the command line.
std::vector<std::string> config_arguments(const CLI::App& sub, const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file " + path + " not found");
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  std::vector<std::string> args;
  for (const auto& item : items) {
    if (!item.parents.empty() || item.name == "config") {
      throw ConfigError(path + ": unknown key '" + item.fullname() + "'");
    }
    const CLI::Option* opt = sub.get_option_no_throw("--" + item.name);
    if (opt == nullptr) throw ConfigError(path + ": unknown key '" + item.name + "'");
    if (opt->count() > 0) continue;
    for (const auto& value : item.inputs) args.push_back("--" + item.name + "=" + value);
  }
  return args;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const UnsupportedError*>(&e)) return "unsupported";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  return "internal";
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dilated contextual feature modulation network for image super-resolution"};
  app.require_subcommand(1);

  std::string config_file;
  auto add_config = [&config_file](CLI::App* sub) {
    sub->add_option("--config", config_file,
                    "flat key=value file; command-line flags take precedence");
  };
  const auto scale_check = CLI::IsMember({2, 3, 4});
  const auto variant_check = CLI::IsMember(kVariantNames);

  DegradeOptions dg;
  auto* degrade_cmd = app.add_subcommand("degrade", "modcrop and bicubic-downscale a PNG folder");
  degrade_cmd->add_option("--in", dg.in_dir, "input folder of HR PNGs")->required();
  degrade_cmd->add_option("--out", dg.out_dir, "output folder for LR PNGs and manifest.tsv")
      ->required();
  degrade_cmd->add_option("--scale", dg.scale, "downscale factor")->check(scale_check)
      ->capture_default_str();
  add_config(degrade_cmd);

  TrainOptions tr;
  auto* train_cmd = app.add_subcommand("train", "train from a manifest");
  train_cmd->add_option("--manifest", tr.manifest, "training manifest")->required();
  train_cmd->add_option("--model", tr.model, "preset S, L, tiny, or a checkpoint to continue")
      ->capture_default_str();
  train_cmd->add_option("--scale", tr.scale, "upscale factor")->check(scale_check)
      ->capture_default_str();
  train_cmd->add_option("--seed", tr.seed, "seed for init, sampling and augmentation")
      ->capture_default_str();
  train_cmd->add_option("--iters", tr.iters, "optimizer steps")->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--batch", tr.batch, "patches per step")->check(CLI::PositiveNumber)
      ->capture_default_str();
  train_cmd->add_option("--patch", tr.patch, "LR patch size in pixels")
      ->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--lambda1", tr.lambda1, "weight of the L1 term")->capture_default_str();
  train_cmd->add_option("--lambda2", tr.lambda2, "weight of the frequency term")
      ->capture_default_str();
  train_cmd->add_option("--out", tr.out, "run folder")->capture_default_str();
  train_cmd->add_option("--variant", tr.variants, "ablation switch (repeatable)")
      ->check(variant_check);
  train_cmd->add_option("--checkpoint-every", tr.checkpoint_every,
                        "periodic checkpoint interval; 0 disables")
      ->capture_default_str();
  train_cmd->add_option("--log-every", tr.log_every, "loss trace interval")
      ->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_flag("--no-augment", tr.no_augment, "disable flips and rotations");
  add_config(train_cmd);

  FuseOptions fu;
  auto* fuse_cmd = app.add_subcommand("fuse", "convert a checkpoint to inference form");
  fuse_cmd->add_option("--in", fu.in, "training-form checkpoint")->required();
  fuse_cmd->add_option("--out", fu.out, "fused checkpoint")->required();
  add_config(fuse_cmd);

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Y-channel PSNR/SSIM over a manifest");
  eval_cmd->add_option("--model", ev.model, "checkpoint path or 'bicubic'")->required();
  eval_cmd->add_option("--manifest", ev.manifest, "evaluation manifest")->required();
  eval_cmd->add_option("--scale", ev.scale, "expected scale; 0 takes it from the manifest")
      ->capture_default_str();
  eval_cmd->add_option("--out", ev.out, "report folder")->capture_default_str();
  eval_cmd->add_option("--dataset", ev.dataset, "dataset label (default: manifest name)");
  eval_cmd->add_option("--method", ev.method, "method label (default: checkpoint name)");
  eval_cmd->add_option("--dump-sr", ev.dump_sr, "folder for SR PNGs");
  eval_cmd->add_flag("--raw", ev.raw, "evaluate the training form without fusing");
  eval_cmd->add_flag("--flops", ev.flops, "report 2 x MACs");
  add_config(eval_cmd);

  SrOptions so;
  auto* sr_cmd = app.add_subcommand("sr", "super-resolve one PNG");
  sr_cmd->add_option("--model", so.model, "checkpoint path")->required();
  sr_cmd->add_option("--in", so.in, "LR PNG")->required();
  sr_cmd->add_option("--out", so.out, "SR PNG")->required();
  sr_cmd->add_flag("--raw", so.raw, "run the training form without fusing");
  add_config(sr_cmd);

  SummaryOptions su;
  auto* summary_cmd = app.add_subcommand("summary", "layer table with params and MACs");
  summary_cmd->add_option("--model", su.model, "preset S, L, tiny, or a checkpoint")
      ->capture_default_str();
  summary_cmd->add_option("--scale", su.scale, "upscale factor for presets")->check(scale_check)
      ->capture_default_str();
  summary_cmd->add_option("--variant", su.variants, "ablation switch (repeatable)")
      ->check(variant_check);
  summary_cmd->add_flag("--fused", su.fused, "count the inference form");
  summary_cmd->add_flag("--json", su.json, "machine-readable output");
  summary_cmd->add_option("--height", su.out_h, "output height for MACs")->capture_default_str();
  summary_cmd->add_option("--width", su.out_w, "output width for MACs")->capture_default_str();
  add_config(summary_cmd);

  try {
    app.parse(argc, argv);
    if (!config_file.empty()) {
      CLI::App* sub = app.get_subcommands().front();
      const auto extra = config_arguments(*sub, config_file);
      std::vector<std::string> args;
      for (int i = argc - 1; i > 1; --i) args.emplace_back(argv[i]);
      args.insert(args.end(), extra.rbegin(), extra.rend());
      args.push_back(sub->get_name());
      app.parse(args);
    }
  } catch (const ConfigError& e) {
    std::cerr << "dcfmn: error: config: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "dcfmn: error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (*degrade_cmd) {
      log_resolved_config(*degrade_cmd, fs::path(dg.out_dir));
      return cmd_degrade(dg);
    }
    if (*train_cmd) {
      log_resolved_config(*train_cmd, fs::path(tr.out));
      return cmd_train(tr);
    }
    if (*fuse_cmd) {
      log_resolved_config(*fuse_cmd, std::nullopt);
      return cmd_fuse(fu);
    }
    if (*eval_cmd) {
      log_resolved_config(*eval_cmd, fs::path(ev.out));
      return cmd_eval(ev);
    }
    if (*sr_cmd) {
      log_resolved_config(*sr_cmd, std::nullopt);
      return cmd_sr(so);
    }
    if (*summary_cmd) {
      if (!su.json) log_resolved_config(*summary_cmd, std::nullopt);
      return cmd_summary(su);
    }
  } catch (const std::exception& e) {
    std::cerr << "dcfmn: error: " << error_kind(e) << ": " << one_line(e.what()) << "\n";
    return 1;
  }
  return 1;
}

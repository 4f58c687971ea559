#include "dcfmn/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace dcfmn {

void TrainConfig::validate() const {
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in (0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be positive");
  if (!(lr_min >= 0.0 && lr_min <= lr_init)) throw ConfigError("need 0 <= lr_min <= lr_init");
  if (total_iters < 1) throw ConfigError("total_iters must be at least 1");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("ema_decay must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (patch_size < 1) throw ConfigError("patch_size must be at least 1");
  if (log_every < 1) throw ConfigError("log_every must be at least 1");
  loss.validate();
}

double cosine_lr(int t, const TrainConfig& config) {
  if (config.total_iters < 1) throw ConfigError("total_iters must be at least 1");
  if (t < 0 || t > config.total_iters) {
    throw ConfigError("cosine_lr: t = " + std::to_string(t) + " outside [0, " +
                      std::to_string(config.total_iters) + "]");
  }
  const double phase = std::numbers::pi * t / config.total_iters;
  return config.lr_min + 0.5 * (config.lr_init - config.lr_min) * (1.0 + std::cos(phase));
}

template <typename T>
TrainState<T> init_train_state(const ParamStore<T>& params, std::uint64_t seed) {
  TrainState<T> state;
  state.params = params;
  state.m = params.zeros_like();
  state.v = params.zeros_like();
  state.ema = params;
  state.rng = Rng(seed);
  return state;
}

template <typename T>
void adam_step(TrainState<T>& state, const ParamStore<T>& grads, double lr,
               const TrainConfig& config) {
  if (!state.params.aligned_with(grads)) {
    throw ConfigError("adam_step: gradient store is not aligned with the parameters");
  }
  if (!state.params.aligned_with(state.m) || !state.params.aligned_with(state.v)) {
    throw ConfigError("adam_step: moment stores are not aligned with the parameters");
  }
  const std::int64_t t = state.iteration + 1;
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  auto g_it = grads.begin();
  auto m_it = state.m.begin();
  auto v_it = state.v.begin();
  for (auto& [path, theta] : state.params) {
    const Tensor4<T>& g = g_it->second;
    Tensor4<T>& m = m_it->second;
    Tensor4<T>& v = v_it->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double step = lr * (mi / c1) / (std::sqrt(vi / c2) + config.eps);
      theta[i] = static_cast<T>(theta[i] - step);
    }
    ++g_it;
    ++m_it;
    ++v_it;
  }
  state.iteration = t;
}

template <typename T>
void ema_update(TrainState<T>& state, double decay) {
  if (!state.params.aligned_with(state.ema)) {
    throw ConfigError("ema_update: shadow store is not aligned with the parameters");
  }
  auto p_it = state.params.begin();
  for (auto& [path, shadow] : state.ema) {
    const Tensor4<T>& theta = p_it->second;
    for (std::size_t i = 0; i < shadow.size(); ++i) {
      shadow[i] = static_cast<T>(decay * shadow[i] + (1.0 - decay) * theta[i]);
    }
    ++p_it;
  }
}

std::vector<TrainingPair> load_pairs(const std::vector<ManifestEntry>& entries, int scale) {
  std::vector<TrainingPair> pairs;
  pairs.reserve(entries.size());
  for (const auto& entry : entries) {
    if (entry.scale != scale) {
      throw ConfigError("manifest entry " + entry.hr_path + " has scale " +
                        std::to_string(entry.scale) + ", expected " + std::to_string(scale));
    }
    TrainingPair pair;
    pair.hr = modcrop(read_png(entry.hr_path), scale);
    if (!entry.lr_path.empty() && std::filesystem::exists(entry.lr_path)) {
      pair.lr = read_png(entry.lr_path);
      if (pair.lr.h * scale != pair.hr.h || pair.lr.w * scale != pair.hr.w) {
        throw ShapeError("LR image " + entry.lr_path + " is not HR / " + std::to_string(scale));
      }
    } else {
      pair.lr = degrade(pair.hr, scale);
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

template <typename T>
Tensor4<T> stack_images(const std::vector<Image8>& images) {
  if (images.empty()) throw ShapeError("stack_images: no images");
  const int h = images.front().h;
  const int w = images.front().w;
  Tensor4<T> out(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image8& img = images[b];
    if (img.h != h || img.w != w) throw ShapeError("stack_images: mixed extents");
    for (int c = 0; c < 3; ++c) {
      T* dst = out.plane(static_cast<int>(b), c);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) dst[y * w + x] = static_cast<T>(img.at(y, x, c) / 255.0);
      }
    }
  }
  return out;
}

template <typename T>
TrainResult<T> train(const Model<T>& initial, const std::vector<TrainingPair>& data,
                     const TrainConfig& config, const TrainObserver<T>& observer) {
  config.validate();
  validate_model(initial);
  if (initial.fused) throw UnsupportedError("train: inference-form models cannot be trained");
  if (data.empty()) throw ConfigError("train: empty dataset");
  const int scale = initial.config.scale;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].lr.h >= config.patch_size && data[i].lr.w >= config.patch_size) {
      eligible.push_back(i);
    }
  }
  if (eligible.empty()) {
    throw ConfigError("train: patch size " + std::to_string(config.patch_size) +
                      " exceeds every LR image");
  }

  TrainState<T> state = init_train_state(initial.params, config.seed);
  Model<T> work{initial.config, false, {}};
  TrainResult<T> result;
  std::vector<Image8> lr_batch(config.batch_size);
  std::vector<Image8> hr_batch(config.batch_size);

  for (int t = 1; t <= config.total_iters; ++t) {
    for (int b = 0; b < config.batch_size; ++b) {
      const auto& pair = data[eligible[state.rng.below(eligible.size())]];
      PatchPair patch = sample_patch_pair(pair.hr, pair.lr, scale, config.patch_size, state.rng,
                                          config.augment);
      lr_batch[b] = std::move(patch.lr);
      hr_batch[b] = std::move(patch.hr);
    }
    const Tensor4<T> lr = stack_images<T>(lr_batch);
    const Tensor4<T> hr = stack_images<T>(hr_batch);

    work.params = state.params;
    ModelTape<T> tape;
    const Tensor4<T> sr = model_forward_tape(work, lr, tape);
    const LossResult<T> loss = composite_loss(sr, hr, config.loss);
    const ParamStore<T> grads = model_backward_from_tape(work, tape, loss.grad);

    const double rate = cosine_lr(t - 1, config);
    adam_step(state, grads, rate, config);
    ema_update(state, config.ema_decay);

    const LossRecord record{t, rate, loss.l1, loss.freq, loss.total};
    if (t % config.log_every == 0 || t == config.total_iters) result.trace.push_back(record);
    if (observer) observer(record, state);
  }

  result.model = Model<T>{initial.config, false, state.params};
  result.ema = Model<T>{initial.config, false, state.ema};
  return result;
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,lr,l1,freq,total\n";
  char line[160];
  for (const auto& r : trace) {
    std::snprintf(line, sizeof line, "%d,%.9e,%.9e,%.9e,%.9e\n", r.iteration, r.lr, r.l1, r.freq,
                  r.total);
    out << line;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

template TrainState<float> init_train_state(const ParamStore<float>&, std::uint64_t);
template TrainState<double> init_train_state(const ParamStore<double>&, std::uint64_t);
template void adam_step(TrainState<float>&, const ParamStore<float>&, double, const TrainConfig&);
template void adam_step(TrainState<double>&, const ParamStore<double>&, double,
                        const TrainConfig&);
template void ema_update(TrainState<float>&, double);
template void ema_update(TrainState<double>&, double);
template Tensor4<float> stack_images(const std::vector<Image8>&);
template Tensor4<double> stack_images(const std::vector<Image8>&);
template TrainResult<float> train(const Model<float>&, const std::vector<TrainingPair>&,
                                  const TrainConfig&, const TrainObserver<float>&);
template TrainResult<double> train(const Model<double>&, const std::vector<TrainingPair>&,
                                   const TrainConfig&, const TrainObserver<double>&);

}  // namespace dcfmn

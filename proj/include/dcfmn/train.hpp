#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "dcfmn/image.hpp"
#include "dcfmn/loss.hpp"
#include "dcfmn/model.hpp"
#include "dcfmn/rng.hpp"

namespace dcfmn {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double lr_init = 1e-3;
  double lr_min = 1e-6;
  int total_iters = 2000;
  double ema_decay = 0.999;
  int batch_size = 8;
  int patch_size = 32;  // LR pixels; HR patches are patch_size * scale
  std::uint64_t seed = 0;
  LossWeights loss;
  bool augment = true;
  int log_every = 1;  // loss trace record interval

  void validate() const;
};

/// lr_min + (lr_init - lr_min) (1 + cos(pi t / total_iters)) / 2 for 0 <= t <= total_iters.
double cosine_lr(int t, const TrainConfig& config);

template <typename T>
struct TrainState {
  std::int64_t iteration = 0;  // completed Adam steps
  ParamStore<T> params;
  ParamStore<T> m;    // first moments
  ParamStore<T> v;    // second moments
  ParamStore<T> ema;  // shadow weights
  Rng rng;            // patch sampling and augmentation
};

/// Moments start at zero; the EMA shadow starts at `params`.
template <typename T>
TrainState<T> init_train_state(const ParamStore<T>& params, std::uint64_t seed = 0);

/// Bias-corrected Adam on every parameter; increments the iteration count.
template <typename T>
void adam_step(TrainState<T>& state, const ParamStore<T>& grads, double lr,
               const TrainConfig& config);

/// shadow <- decay * shadow + (1 - decay) * params.
template <typename T>
void ema_update(TrainState<T>& state, double decay);

struct LossRecord {
  int iteration = 0;
  double lr = 0.0;
  double l1 = 0.0;
  double freq = 0.0;
  double total = 0.0;
};

struct TrainingPair {
  Image8 hr;
  Image8 lr;
};

/// Loads every manifest entry: HR is modcropped; LR is read when listed and
/// present, otherwise degraded from HR.
std::vector<TrainingPair> load_pairs(const std::vector<ManifestEntry>& entries, int scale);

template <typename T>
struct TrainResult {
  Model<T> model;
  Model<T> ema;
  std::vector<LossRecord> trace;
};

/// Called after each iteration with the record and the live state.
template <typename T>
using TrainObserver = std::function<void(const LossRecord&, const TrainState<T>&)>;

/// Per iteration: sample a batch of aligned patches (optionally augmented),
/// forward, composite loss, backward, Adam, EMA. All randomness comes from
/// config.seed.
template <typename T>
TrainResult<T> train(const Model<T>& initial, const std::vector<TrainingPair>& data,
                     const TrainConfig& config, const TrainObserver<T>& observer = {});

/// Stacks patches into (batch, 3, h, w) tensors.
template <typename T>
Tensor4<T> stack_images(const std::vector<Image8>& images);

/// iteration,lr,l1,freq,total with fixed formatting.
void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& trace);

}  // namespace dcfmn

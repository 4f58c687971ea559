#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dcfmn/ops.hpp"
#include "dcfmn/param_store.hpp"
#include "dcfmn/reparam.hpp"

namespace dcfmn {

/// Ablation switches. All false is the full network.
struct Variants {
  bool dsmu_plain3x3 = false;               // one depthwise 3x3 per chunk instead of a stack
  bool lfem_without_se = false;             // drop squeeze-excitation in LFEM
  bool lfem_without_self_residual = false;  // drop the identity branch in LFEM
  friend bool operator==(const Variants&, const Variants&) = default;
};

enum class Precision { f32, f64 };

struct ModelConfig {
  int scale = 4;
  int channels = 32;
  int num_blocks = 10;
  std::array<int, 4> chunk_targets{5, 7, 13, 17};
  int lfem_branches = 2;
  Variants variants;
  Precision precision = Precision::f32;

  void validate() const;

  /// "S" (10 blocks), "L" (16 blocks) or "tiny" (C=16, 2 blocks).
  static ModelConfig preset(std::string_view name, int scale);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Stack used by DSMU chunk `chunk` under `config` (honours dsmu_plain3x3).
DilatedStackSpec chunk_stack(const ModelConfig& config, int chunk);

enum class ParamKind { weight, bias, gain };

struct ParamSpec {
  std::string path;
  Shape4 shape;
  ParamKind kind;
  int fan_in;  // for weights; 0 otherwise
};

/// Every parameter of the network in the requested form, sorted by path.
std::vector<ParamSpec> parameter_layout(const ModelConfig& config, bool fused);

template <typename T>
struct Model {
  ModelConfig config;
  bool fused = false;
  ParamStore<T> params;

  template <typename U>
  Model<U> cast() const {
    return Model<U>{config, fused, params.template cast<U>()};
  }
};

/// Weights ~ N(0, 1 / sqrt(3 fan_in)), biases 0, LayerNorm gain 1 / bias 0.
/// The draw sequence is independent of T.
template <typename T>
Model<T> init_model(const ModelConfig& config, std::uint64_t seed);

/// Throws ConfigError when the stored parameters do not match the layout
/// implied by (config, fused).
template <typename T>
void validate_model(const Model<T>& model);

std::size_t count_params(const ModelConfig& config, bool fused);
template <typename T>
std::size_t count_params(const Model<T>& model) {
  return model.params.total_scalars();
}

std::string block_prefix(int block);

template <typename T>
Tensor4<T> shallow_extract(const Model<T>& model, const Tensor4<T>& image);

template <typename T>
Tensor4<T> dsmu_forward(const Model<T>& model, int block, const Tensor4<T>& x);

template <typename T>
Tensor4<T> lfem_forward(const Model<T>& model, int block, const Tensor4<T>& x);

template <typename T>
Tensor4<T> dsmb_forward(const Model<T>& model, int block, const Tensor4<T>& x);

template <typename T>
Tensor4<T> upsample_reconstruct(const Model<T>& model, const Tensor4<T>& deep,
                                const Tensor4<T>& shallow);

template <typename T>
Tensor4<T> model_forward(const Model<T>& model, const Tensor4<T>& image);

/// Intermediates of one DSMB block kept for the backward pass.
template <typename T>
struct BlockTape {
  Tensor4<T> x_in;                  // block input
  Tensor4<T> normed1;               // LN1(x_in), the DSMU input
  std::array<Tensor4<T>, 4> chunks; // channel chunks of normed1
  Tensor4<T> concat;                // concatenated stack outputs
  Tensor4<T> mixed;                 // 1x1 aggregation, pre-GELU
  Tensor4<T> x_mid;                 // X' = DSMU(LN1(x_in)) + x_in
  Tensor4<T> normed2;               // LN2(x_mid), the LFEM input
  Tensor4<T> expanded;              // 1x1 expansion to 2C
  Tensor4<T> branch_sum;            // parallel 3x3 sum, pre-GELU
  Tensor4<T> activated;             // GELU(branch_sum)
  Tensor4<T> gated;                 // SE(activated), or activated when SE is off
};

template <typename T>
struct ModelTape {
  Tensor4<T> image;
  Tensor4<T> shallow;
  std::vector<BlockTape<T>> blocks;
  Tensor4<T> tail_in;  // f_k + f_0
};

/// Forward pass that records what model_backward_from_tape needs.
/// Training-form models only.
template <typename T>
Tensor4<T> model_forward_tape(const Model<T>& model, const Tensor4<T>& image,
                              ModelTape<T>& tape);

/// Pulls `upstream` (d loss / d output) back through every layer; the result
/// is aligned with model.params.
template <typename T>
ParamStore<T> model_backward_from_tape(const Model<T>& model, const ModelTape<T>& tape,
                                       const Tensor4<T>& upstream);

template <typename T>
ParamStore<T> model_backward(const Model<T>& model, const Tensor4<T>& image,
                             const Tensor4<T>& upstream) {
  ModelTape<T> tape;
  model_forward_tape(model, image, tape);
  return model_backward_from_tape(model, tape, upstream);
}

}  // namespace dcfmn

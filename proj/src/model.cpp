#include "dcfmn/model.hpp"

#include <algorithm>

#include "dcfmn/rng.hpp"

namespace dcfmn {

void ModelConfig::validate() const {
  if (scale < 2 || scale > 4) {
    throw ConfigError("scale must be 2, 3 or 4, got " + std::to_string(scale));
  }
  if (channels <= 0 || channels % 4 != 0) {
    throw ConfigError("channels must be a positive multiple of 4, got " +
                      std::to_string(channels));
  }
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  if (lfem_branches < 1) throw ConfigError("lfem_branches must be >= 1");
  for (int i = 0; i < 4; ++i) chunk_stack(*this, i);
}

ModelConfig ModelConfig::preset(std::string_view name, int scale) {
  ModelConfig c;
  c.scale = scale;
  if (name == "S") {
    c.num_blocks = 10;
  } else if (name == "L") {
    c.num_blocks = 16;
  } else if (name == "tiny") {
    c.channels = 16;
    c.num_blocks = 2;
  } else {
    throw ConfigError("unknown model preset '" + std::string(name) + "' (expected S, L or tiny)");
  }
  c.validate();
  return c;
}

DilatedStackSpec chunk_stack(const ModelConfig& config, int chunk) {
  const int cc = config.channels / 4;
  if (config.variants.dsmu_plain3x3) return stack_for_target(3, cc);
  return stack_for_target(config.chunk_targets.at(chunk), cc);
}

std::string block_prefix(int block) { return "blocks." + std::to_string(block) + "."; }

namespace {

void add_conv(std::vector<ParamSpec>& out, const std::string& name, int cout, int cin_g, int k) {
  out.push_back({name + ".weight", {cout, cin_g, k, k}, ParamKind::weight, cin_g * k * k});
  out.push_back({name + ".bias", {1, cout, 1, 1}, ParamKind::bias, 0});
}

void add_norm(std::vector<ParamSpec>& out, const std::string& name, int c) {
  out.push_back({name + ".gain", {1, c, 1, 1}, ParamKind::gain, 0});
  out.push_back({name + ".bias", {1, c, 1, 1}, ParamKind::bias, 0});
}

int se_hidden(int c) { return c / kSeReduction; }

}  // namespace

std::vector<ParamSpec> parameter_layout(const ModelConfig& config, bool fused) {
  config.validate();
  const int c = config.channels;
  const int cc = c / 4;
  const int c2 = 2 * c;
  std::vector<ParamSpec> out;
  add_conv(out, "head", c, 3, 3);
  for (int b = 0; b < config.num_blocks; ++b) {
    const std::string p = block_prefix(b);
    add_norm(out, p + "ln1", c);
    for (int i = 0; i < 4; ++i) {
      const auto stack = chunk_stack(config, i);
      const std::string chunk = p + "dsmu.chunk" + std::to_string(i);
      if (fused) {
        add_conv(out, chunk + ".dense", cc, 1, effective_kernel_size(stack));
      } else {
        for (std::size_t j = 0; j < stack.stages.size(); ++j) {
          add_conv(out, chunk + ".stage" + std::to_string(j), cc, 1, stack.stages[j].kernel);
        }
      }
    }
    add_conv(out, p + "dsmu.mix1x1", c, c, 1);
    add_norm(out, p + "ln2", c);
    add_conv(out, p + "lfem.expand", c2, c, 1);
    if (fused) {
      add_conv(out, p + "lfem.rep3x3", c2, c2, 3);
    } else {
      for (int j = 0; j < config.lfem_branches; ++j) {
        add_conv(out, p + "lfem.branch" + std::to_string(j), c2, c2, 3);
      }
    }
    if (!config.variants.lfem_without_se) {
      add_conv(out, p + "lfem.se.fc1", se_hidden(c2), c2, 1);
      add_conv(out, p + "lfem.se.fc2", c2, se_hidden(c2), 1);
    }
    add_conv(out, p + "lfem.reduce", c, c2, 1);
  }
  add_conv(out, "tail", 3 * config.scale * config.scale, c, 3);
  std::sort(out.begin(), out.end(),
            [](const ParamSpec& a, const ParamSpec& b) { return a.path < b.path; });
  return out;
}

std::size_t count_params(const ModelConfig& config, bool fused) {
  std::size_t n = 0;
  for (const auto& p : parameter_layout(config, fused)) n += p.shape.numel();
  return n;
}

template <typename T>
Model<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  Model<T> model{config, false, {}};
  Rng rng(seed);
  for (const auto& spec : parameter_layout(config, false)) {
    Tensor4<T> t(spec.shape);
    switch (spec.kind) {
      case ParamKind::weight: {
        const double stddev = std::sqrt(1.0 / (3.0 * spec.fan_in));
        for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
        break;
      }
      case ParamKind::gain: t.fill(T(1)); break;
      case ParamKind::bias: break;
    }
    model.params.set(spec.path, std::move(t));
  }
  return model;
}

template <typename T>
void validate_model(const Model<T>& model) {
  const auto layout = parameter_layout(model.config, model.fused);
  const char* form = model.fused ? "fused" : "training";
  if (layout.size() != model.params.size()) {
    throw ConfigError(std::string("parameter store does not match the ") + form +
                      "-form layout (" + std::to_string(model.params.size()) + " entries, " +
                      std::to_string(layout.size()) + " expected)");
  }
  auto it = model.params.begin();
  for (const auto& spec : layout) {
    if (it->first != spec.path || it->second.shape() != spec.shape) {
      throw ConfigError(std::string("parameter '") + it->first + "' does not match the " + form +
                        "-form layout (expected '" + spec.path + "' " + spec.shape.str() + ")");
    }
    ++it;
  }
}

namespace {

template <typename T>
ConvSpec conv_of(const Tensor4<T>& w, int groups = 1) {
  return {w.c() * groups, w.n(), w.h(), 1, groups};
}

template <typename T>
Tensor4<T> apply_conv(const ParamStore<T>& ps, const std::string& name, const Tensor4<T>& x,
                      int groups = 1) {
  const auto& w = ps.at(name + ".weight");
  return conv2d(x, w, &ps.at(name + ".bias"), conv_of(w, groups));
}

// Accumulates weight/bias gradients of a conv layer and returns dx.
template <typename T>
Tensor4<T> conv_backward(const ParamStore<T>& ps, const std::string& name, const Tensor4<T>& x,
                         const Tensor4<T>& upstream, ParamStore<T>& grads, int groups = 1) {
  const auto& w = ps.at(name + ".weight");
  auto g = conv2d_vjp(x, w, &ps.at(name + ".bias"), conv_of(w, groups), upstream);
  grads.accumulate(name + ".weight", g.dweight);
  grads.accumulate(name + ".bias", g.dbias);
  return std::move(g.dx);
}

template <typename T>
std::pair<std::vector<Tensor4<T>>, std::vector<Tensor4<T>>> stack_params(
    const ParamStore<T>& ps, const std::string& chunk, std::size_t stages) {
  std::vector<Tensor4<T>> w, b;
  for (std::size_t j = 0; j < stages; ++j) {
    const std::string s = chunk + ".stage" + std::to_string(j);
    w.push_back(ps.at(s + ".weight"));
    b.push_back(ps.at(s + ".bias"));
  }
  return {std::move(w), std::move(b)};
}

template <typename T>
Tensor4<T> chunk_forward(const Model<T>& m, int block, int i, const Tensor4<T>& x) {
  const std::string chunk = block_prefix(block) + "dsmu.chunk" + std::to_string(i);
  const auto stack = chunk_stack(m.config, i);
  if (m.fused) return apply_conv(m.params, chunk + ".dense", x, stack.channels);
  const auto [w, b] = stack_params(m.params, chunk, stack.stages.size());
  return dilated_stack_forward<T>(x, stack, w, b);
}

template <typename T>
Tensor4<T> norm(const ParamStore<T>& ps, const std::string& name, const Tensor4<T>& x) {
  return layer_norm(x, ps.at(name + ".gain"), ps.at(name + ".bias"));
}

template <typename T>
SeParams<T> se_params(const ParamStore<T>& ps, const std::string& p) {
  return {ps.at(p + "lfem.se.fc1.weight"), ps.at(p + "lfem.se.fc1.bias"),
          ps.at(p + "lfem.se.fc2.weight"), ps.at(p + "lfem.se.fc2.bias")};
}

// DSMU internals; fills the tape fields when given one.
template <typename T>
Tensor4<T> dsmu_impl(const Model<T>& m, int block, const Tensor4<T>& x, BlockTape<T>* tape) {
  const std::string p = block_prefix(block);
  auto chunks = chunk4(x);
  std::array<Tensor4<T>, 4> outs;
  for (int i = 0; i < 4; ++i) outs[i] = chunk_forward(m, block, i, chunks[i]);
  Tensor4<T> cat = concat4(outs);
  Tensor4<T> mixed = apply_conv(m.params, p + "dsmu.mix1x1", cat);
  Tensor4<T> out = gelu(mixed);
  add_inplace(out, x);
  if (tape != nullptr) {
    tape->chunks = std::move(chunks);
    tape->concat = std::move(cat);
    tape->mixed = std::move(mixed);
  }
  return out;
}

template <typename T>
Tensor4<T> lfem_impl(const Model<T>& m, int block, const Tensor4<T>& x, BlockTape<T>* tape) {
  const std::string p = block_prefix(block);
  const auto& v = m.config.variants;
  Tensor4<T> e = apply_conv(m.params, p + "lfem.expand", x);
  Tensor4<T> r;
  if (m.fused) {
    r = apply_conv(m.params, p + "lfem.rep3x3", e);
  } else {
    r = apply_conv(m.params, p + "lfem.branch0", e);
    for (int j = 1; j < m.config.lfem_branches; ++j) {
      add_inplace(r, apply_conv(m.params, p + "lfem.branch" + std::to_string(j), e));
    }
    if (!v.lfem_without_self_residual) add_inplace(r, e);
  }
  Tensor4<T> act = gelu(r);
  Tensor4<T> gated = v.lfem_without_se ? act : se_block(act, se_params(m.params, p));
  Tensor4<T> out = apply_conv(m.params, p + "lfem.reduce", gated);
  if (tape != nullptr) {
    tape->expanded = std::move(e);
    tape->branch_sum = std::move(r);
    tape->activated = std::move(act);
    tape->gated = std::move(gated);
  }
  return out;
}

template <typename T>
Tensor4<T> dsmb_impl(const Model<T>& m, int block, const Tensor4<T>& x, BlockTape<T>* tape) {
  const std::string p = block_prefix(block);
  Tensor4<T> n1 = norm(m.params, p + "ln1", x);
  Tensor4<T> mid = dsmu_impl(m, block, n1, tape);
  add_inplace(mid, x);
  Tensor4<T> n2 = norm(m.params, p + "ln2", mid);
  Tensor4<T> out = lfem_impl(m, block, n2, tape);
  add_inplace(out, mid);
  if (tape != nullptr) {
    tape->x_in = x;
    tape->normed1 = std::move(n1);
    tape->x_mid = std::move(mid);
    tape->normed2 = std::move(n2);
  }
  return out;
}

template <typename T>
void check_image(const Model<T>& m, const Tensor4<T>& image) {
  if (image.c() != 3) {
    throw ShapeError("model input must have 3 channels, got " + image.shape().str());
  }
  (void)m;
}

}  // namespace

template <typename T>
Tensor4<T> shallow_extract(const Model<T>& model, const Tensor4<T>& image) {
  check_image(model, image);
  return apply_conv(model.params, std::string("head"), image);
}

template <typename T>
Tensor4<T> dsmu_forward(const Model<T>& model, int block, const Tensor4<T>& x) {
  return dsmu_impl<T>(model, block, x, nullptr);
}

template <typename T>
Tensor4<T> lfem_forward(const Model<T>& model, int block, const Tensor4<T>& x) {
  return lfem_impl<T>(model, block, x, nullptr);
}

template <typename T>
Tensor4<T> dsmb_forward(const Model<T>& model, int block, const Tensor4<T>& x) {
  return dsmb_impl<T>(model, block, x, nullptr);
}

template <typename T>
Tensor4<T> upsample_reconstruct(const Model<T>& model, const Tensor4<T>& deep,
                                const Tensor4<T>& shallow) {
  return pixel_shuffle(apply_conv(model.params, std::string("tail"), add(deep, shallow)),
                       model.config.scale);
}

template <typename T>
Tensor4<T> model_forward(const Model<T>& model, const Tensor4<T>& image) {
  validate_model(model);
  const Tensor4<T> f0 = shallow_extract(model, image);
  Tensor4<T> f = f0;
  for (int b = 0; b < model.config.num_blocks; ++b) f = dsmb_forward(model, b, f);
  return upsample_reconstruct(model, f, f0);
}

template <typename T>
Tensor4<T> model_forward_tape(const Model<T>& model, const Tensor4<T>& image,
                              ModelTape<T>& tape) {
  if (model.fused) {
    throw UnsupportedError("backward pass requires a training-form (unfused) model");
  }
  validate_model(model);
  tape.image = image;
  tape.shallow = shallow_extract(model, image);
  tape.blocks.assign(model.config.num_blocks, {});
  Tensor4<T> f = tape.shallow;
  for (int b = 0; b < model.config.num_blocks; ++b) f = dsmb_impl(model, b, f, &tape.blocks[b]);
  tape.tail_in = add(f, tape.shallow);
  return pixel_shuffle(apply_conv(model.params, std::string("tail"), tape.tail_in),
                       model.config.scale);
}

template <typename T>
ParamStore<T> model_backward_from_tape(const Model<T>& model, const ModelTape<T>& tape,
                                       const Tensor4<T>& upstream) {
  const auto& ps = model.params;
  const auto& v = model.config.variants;
  ParamStore<T> grads;

  Tensor4<T> d_tail = pixel_unshuffle(upstream, model.config.scale);
  Tensor4<T> d_sum = conv_backward(ps, std::string("tail"), tape.tail_in, d_tail, grads);
  Tensor4<T> d_shallow = d_sum;
  Tensor4<T> d = std::move(d_sum);

  for (int b = model.config.num_blocks - 1; b >= 0; --b) {
    const auto& bt = tape.blocks[b];
    const std::string p = block_prefix(b);

    // X_out = LFEM(LN2(X')) + X'
    Tensor4<T> d_mid = d;
    Tensor4<T> d_gated = conv_backward(ps, p + "lfem.reduce", bt.gated, d, grads);
    Tensor4<T> d_act;
    if (v.lfem_without_se) {
      d_act = std::move(d_gated);
    } else {
      auto sg = se_block_vjp(bt.activated, se_params(ps, p), d_gated);
      grads.accumulate(p + "lfem.se.fc1.weight", sg.dw1);
      grads.accumulate(p + "lfem.se.fc1.bias", sg.db1);
      grads.accumulate(p + "lfem.se.fc2.weight", sg.dw2);
      grads.accumulate(p + "lfem.se.fc2.bias", sg.db2);
      d_act = std::move(sg.dx);
    }
    Tensor4<T> d_r = gelu_vjp(bt.branch_sum, d_act);
    Tensor4<T> d_e = v.lfem_without_self_residual ? Tensor4<T>(bt.expanded.shape()) : d_r;
    for (int j = 0; j < model.config.lfem_branches; ++j) {
      add_inplace(d_e, conv_backward(ps, p + "lfem.branch" + std::to_string(j), bt.expanded,
                                     d_r, grads));
    }
    Tensor4<T> d_n2 = conv_backward(ps, p + "lfem.expand", bt.normed2, d_e, grads);
    auto lg2 = layer_norm_vjp(bt.x_mid, ps.at(p + "ln2.gain"), d_n2);
    grads.accumulate(p + "ln2.gain", lg2.dgain);
    grads.accumulate(p + "ln2.bias", lg2.dbias);
    add_inplace(d_mid, lg2.dx);

    // X' = GELU(mix(concat(stacks(chunks(LN1(X_in)))))) + LN1(X_in) + X_in
    Tensor4<T> d_in = d_mid;
    Tensor4<T> d_n1 = d_mid;
    Tensor4<T> d_mixed = gelu_vjp(bt.mixed, d_mid);
    Tensor4<T> d_cat = conv_backward(ps, p + "dsmu.mix1x1", bt.concat, d_mixed, grads);
    auto d_outs = chunk4(d_cat);
    std::array<Tensor4<T>, 4> d_chunks;
    for (int i = 0; i < 4; ++i) {
      const auto stack = chunk_stack(model.config, i);
      const std::string chunk = p + "dsmu.chunk" + std::to_string(i);
      const auto [w, bias] = stack_params(ps, chunk, stack.stages.size());
      auto sg = dilated_stack_vjp<T>(bt.chunks[i], stack, w, bias, d_outs[i]);
      for (std::size_t j = 0; j < stack.stages.size(); ++j) {
        const std::string s = chunk + ".stage" + std::to_string(j);
        grads.accumulate(s + ".weight", sg.dweights[j]);
        grads.accumulate(s + ".bias", sg.dbiases[j]);
      }
      d_chunks[i] = std::move(sg.dx);
    }
    add_inplace(d_n1, concat4(d_chunks));
    auto lg1 = layer_norm_vjp(bt.x_in, ps.at(p + "ln1.gain"), d_n1);
    grads.accumulate(p + "ln1.gain", lg1.dgain);
    grads.accumulate(p + "ln1.bias", lg1.dbias);
    add_inplace(d_in, lg1.dx);
    d = std::move(d_in);
  }
  add_inplace(d_shallow, d);
  conv_backward(ps, std::string("head"), tape.image, d_shallow, grads);
  return grads;
}

#define DCFMN_INSTANTIATE_MODEL(T)                                                            \
  template Model<T> init_model<T>(const ModelConfig&, std::uint64_t);                         \
  template void validate_model(const Model<T>&);                                              \
  template Tensor4<T> shallow_extract(const Model<T>&, const Tensor4<T>&);                    \
  template Tensor4<T> dsmu_forward(const Model<T>&, int, const Tensor4<T>&);                  \
  template Tensor4<T> lfem_forward(const Model<T>&, int, const Tensor4<T>&);                  \
  template Tensor4<T> dsmb_forward(const Model<T>&, int, const Tensor4<T>&);                  \
  template Tensor4<T> upsample_reconstruct(const Model<T>&, const Tensor4<T>&,                \
                                           const Tensor4<T>&);                                \
  template Tensor4<T> model_forward(const Model<T>&, const Tensor4<T>&);                      \
  template Tensor4<T> model_forward_tape(const Model<T>&, const Tensor4<T>&, ModelTape<T>&); \
  template ParamStore<T> model_backward_from_tape(const Model<T>&, const ModelTape<T>&,       \
                                                  const Tensor4<T>&);

DCFMN_INSTANTIATE_MODEL(float)
DCFMN_INSTANTIATE_MODEL(double)

}  // namespace dcfmn

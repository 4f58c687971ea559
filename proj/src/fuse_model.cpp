#include "dcfmn/fuse_model.hpp"

namespace dcfmn {

template <typename T>
Model<T> fuse_model(const Model<T>& model) {
  validate_model(model);
  if (model.fused) return model;

  Model<T> out{model.config, true, {}};
  for (const auto& [path, t] : model.params) {
    const bool stack_stage = path.find(".dsmu.chunk") != std::string::npos;
    const bool branch = path.find(".lfem.branch") != std::string::npos;
    if (!stack_stage && !branch) out.params.set(path, t);
  }

  for (int b = 0; b < model.config.num_blocks; ++b) {
    const std::string p = block_prefix(b);
    for (int i = 0; i < 4; ++i) {
      const auto stack = chunk_stack(model.config, i);
      const std::string chunk = p + "dsmu.chunk" + std::to_string(i);
      std::vector<Tensor4<T>> w, bias;
      for (std::size_t j = 0; j < stack.stages.size(); ++j) {
        const std::string s = chunk + ".stage" + std::to_string(j);
        w.push_back(model.params.at(s + ".weight"));
        bias.push_back(model.params.at(s + ".bias"));
      }
      auto dense = compose_stack_to_dense<T>(stack, w, bias);
      out.params.set(chunk + ".dense.weight", std::move(dense.weight));
      out.params.set(chunk + ".dense.bias", std::move(dense.bias));
    }

    std::vector<Tensor4<T>> w, bias;
    for (int j = 0; j < model.config.lfem_branches; ++j) {
      const std::string s = p + "lfem.branch" + std::to_string(j);
      w.push_back(model.params.at(s + ".weight"));
      bias.push_back(model.params.at(s + ".bias"));
    }
    auto [rw, rb] = fuse_parallel_3x3<T>(w, bias, !model.config.variants.lfem_without_self_residual);
    out.params.set(p + "lfem.rep3x3.weight", std::move(rw));
    out.params.set(p + "lfem.rep3x3.bias", std::move(rb));
  }
  validate_model(out);
  return out;
}

template Model<float> fuse_model(const Model<float>&);
template Model<double> fuse_model(const Model<double>&);

}  // namespace dcfmn

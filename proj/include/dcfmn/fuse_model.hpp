#pragma once

#include "dcfmn/model.hpp"

namespace dcfmn {

/// Converts a training-form model to inference form: every DSMU stack
/// becomes one dense depthwise conv and every LFEM multi-branch block one
/// 3x3 conv. A fused model is returned unchanged.
template <typename T>
Model<T> fuse_model(const Model<T>& model);

}  // namespace dcfmn

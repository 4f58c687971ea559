#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dcfmn/train.hpp"

using namespace dcfmn;

namespace {

ParamStore<double> scalar_store(double value) {
  ParamStore<double> s;
  s.set("theta", Tensor4<double>(Shape4{1, 1, 1, 1}, value));
  return s;
}

double scalar(const ParamStore<double>& s) { return s.at("theta")[0]; }

// Smooth colour field with a few edges so that the network has something to fit.
Image8 toy_image(int h, int w, int seed) {
  Image8 img;
  img.h = h;
  img.w = w;
  img.rgb.resize(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double fx = 0.11 + 0.05 * ((seed + c) % 4);
        const double fy = 0.07 + 0.04 * ((seed * 3 + c) % 5);
        double v = 128 + 70 * std::sin(fx * x + seed) * std::cos(fy * y - c);
        if ((x / 9 + y / 7 + seed) % 3 == 0) v += 40;
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return img;
}

std::vector<TrainingPair> toy_set(int count, int hr_size, int scale) {
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < count; ++i) {
    TrainingPair p;
    p.hr = toy_image(hr_size, hr_size, i);
    p.lr = degrade(p.hr, scale);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

ModelConfig small_model(int scale) {
  ModelConfig c;
  c.channels = 8;
  c.num_blocks = 1;
  c.scale = scale;
  return c;
}

TrainConfig quick_config(int iters) {
  TrainConfig c;
  c.total_iters = iters;
  c.batch_size = 2;
  c.patch_size = 12;
  c.seed = 7;
  return c;
}

}  // namespace

TEST(CosineLr, EndpointsAndMidpoint) {
  TrainConfig c;
  c.total_iters = 1000;
  EXPECT_DOUBLE_EQ(cosine_lr(0, c), 1e-3);
  EXPECT_NEAR(cosine_lr(1000, c), 1e-6, 1e-18);
  EXPECT_NEAR(cosine_lr(500, c), 5.005e-4, 1e-15);
  for (int t = 1; t <= 1000; ++t) EXPECT_LT(cosine_lr(t, c), cosine_lr(t - 1, c));
}

TEST(CosineLr, RejectsOutOfRange) {
  TrainConfig c;
  c.total_iters = 10;
  EXPECT_THROW(cosine_lr(-1, c), ConfigError);
  EXPECT_THROW(cosine_lr(11, c), ConfigError);
}

TEST(TrainConfigCheck, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  auto bad = [](auto edit) {
    TrainConfig t;
    edit(t);
    return t;
  };
  EXPECT_THROW(bad([](TrainConfig& t) { t.beta1 = 1.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.beta2 = 0.0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.lr_min = 1e-2; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.total_iters = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.batch_size = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.patch_size = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](TrainConfig& t) { t.loss.lambda2 = -1; }).validate(), ConfigError);
}

TEST(Adam, FirstStepIsMinusLr) {
  TrainConfig c;
  auto state = init_train_state(scalar_store(0.0));
  adam_step(state, scalar_store(1.0), 1e-3, c);
  // m = 0.1, v = 0.01; m_hat = 1, v_hat = 1; step = lr / (1 + eps).
  EXPECT_NEAR(scalar(state.params), -1e-3, 1e-6);
  EXPECT_NEAR(scalar(state.m), 0.1, 1e-15);
  EXPECT_NEAR(scalar(state.v), 0.01, 1e-15);
  EXPECT_EQ(state.iteration, 1);
}

TEST(Adam, TwoStepsMatchHandRecurrence) {
  TrainConfig c;
  auto state = init_train_state(scalar_store(0.5));
  const double g[2] = {2.0, -0.5};
  const double lr[2] = {1e-2, 5e-3};
  double theta = 0.5, m = 0, v = 0;
  for (int t = 1; t <= 2; ++t) {
    adam_step(state, scalar_store(g[t - 1]), lr[t - 1], c);
    m = 0.9 * m + 0.1 * g[t - 1];
    v = 0.99 * v + 0.01 * g[t - 1] * g[t - 1];
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.99, t));
    theta -= lr[t - 1] * mh / (std::sqrt(vh) + 1e-8);
  }
  EXPECT_NEAR(scalar(state.params), theta, 1e-14);
}

TEST(Adam, ZeroGradientsKeepThetaAndDecayMoments) {
  TrainConfig c;
  auto state = init_train_state(scalar_store(0.25));
  adam_step(state, scalar_store(0.0), 1e-3, c);
  EXPECT_EQ(scalar(state.params), 0.25);
  EXPECT_EQ(scalar(state.m), 0.0);

  state.m.at("theta")[0] = 0.4;
  state.v.at("theta")[0] = 0.2;
  const double before = scalar(state.params);
  adam_step(state, scalar_store(0.0), 1e-3, c);
  EXPECT_NEAR(scalar(state.m), 0.36, 1e-15);
  EXPECT_NEAR(scalar(state.v), 0.198, 1e-15);
  EXPECT_LT(scalar(state.params), before);  // momentum still moves theta
}

TEST(Adam, PathMismatchThrows) {
  TrainConfig c;
  auto state = init_train_state(scalar_store(0.0));
  ParamStore<double> other;
  other.set("other", Tensor4<double>(Shape4{1, 1, 1, 1}));
  EXPECT_THROW(adam_step(state, other, 1e-3, c), ConfigError);
  ParamStore<double> wrong_shape;
  wrong_shape.set("theta", Tensor4<double>(Shape4{1, 1, 1, 2}));
  EXPECT_THROW(adam_step(state, wrong_shape, 1e-3, c), ConfigError);
}

TEST(Adam, StepMagnitudeBounded) {
  TrainConfig c;
  Rng rng(3);
  ParamStore<double> init;
  init.set("a", Tensor4<double>(Shape4{2, 3, 4, 5}));
  init.set("b", Tensor4<double>(Shape4{1, 1, 1, 7}));
  auto state = init_train_state(init);
  const double lr = 1e-3;
  for (int step = 0; step < 200; ++step) {
    auto g = init.zeros_like();
    for (auto& [_, t] : g) {
      for (auto& x : t.values()) x = rng.normal() * std::pow(10.0, rng.uniform(-4, 2));
    }
    const auto before = state.params;
    adam_step(state, g, lr, c);
    for (const auto& [path, t] : state.params) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        ASSERT_LE(std::abs(t[i] - before.at(path)[i]), 10 * lr);
      }
    }
  }
}

TEST(Adam, Deterministic) {
  TrainConfig c;
  auto run = [&] {
    Rng rng(11);
    ParamStore<float> init;
    init.set("w", Tensor4<float>(Shape4{1, 2, 3, 3}, 0.3f));
    auto state = init_train_state(init);
    for (int i = 0; i < 20; ++i) {
      auto g = init.zeros_like();
      for (auto& x : g.at("w").values()) x = static_cast<float>(rng.normal());
      adam_step(state, g, 1e-2, c);
    }
    return state;
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.m, b.m);
  EXPECT_EQ(a.v, b.v);
}

TEST(Ema, SingleUpdate) {
  auto state = init_train_state(scalar_store(2.0));
  state.params.at("theta")[0] = 5.0;
  ema_update(state, 0.999);
  EXPECT_NEAR(scalar(state.ema), 0.999 * 2.0 + 0.001 * 5.0, 1e-15);
}

TEST(Ema, ClosedFormForConstantTheta) {
  const double a = -1.5, b = 3.0;
  auto state = init_train_state(scalar_store(a));
  state.params.at("theta")[0] = b;
  for (int n = 1; n <= 3000; ++n) {
    ema_update(state, 0.999);
    if (n % 500 == 0) {
      EXPECT_NEAR(scalar(state.ema), b + (a - b) * std::pow(0.999, n), 1e-12) << n;
    }
  }
}

TEST(Ema, ConvexForMonotoneHistory) {
  auto state = init_train_state(scalar_store(0.0));
  for (int n = 1; n <= 100; ++n) {
    state.params.at("theta")[0] = 0.01 * n;
    ema_update(state, 0.9);
    EXPECT_GE(scalar(state.ema), 0.0);
    EXPECT_LE(scalar(state.ema), 0.01 * n);
  }
}

TEST(StackImages, Layout) {
  Image8 a = toy_image(3, 4, 0);
  Image8 b = toy_image(3, 4, 1);
  const auto t = stack_images<double>({a, b});
  EXPECT_EQ(t.shape(), (Shape4{2, 3, 3, 4}));
  EXPECT_DOUBLE_EQ(t(1, 2, 2, 3), b.at(2, 3, 2) / 255.0);
  EXPECT_DOUBLE_EQ(t(0, 0, 1, 0), a.at(1, 0, 0) / 255.0);
  EXPECT_THROW(stack_images<double>({a, toy_image(4, 4, 0)}), ShapeError);
}

TEST(Train, LrTraceMatchesSchedule) {
  const auto data = toy_set(2, 32, 2);
  const auto model = init_model<float>(small_model(2), 1);
  auto cfg = quick_config(12);
  const auto result = train(model, data, cfg);
  ASSERT_EQ(result.trace.size(), 12u);
  for (const auto& r : result.trace) {
    EXPECT_EQ(r.lr, cosine_lr(r.iteration - 1, cfg));
    EXPECT_NEAR(r.total, r.l1 * cfg.loss.lambda1 + r.freq * cfg.loss.lambda2, 1e-9);
  }
}

TEST(Train, LogInterval) {
  const auto data = toy_set(2, 32, 2);
  const auto model = init_model<float>(small_model(2), 1);
  auto cfg = quick_config(10);
  cfg.log_every = 4;
  const auto result = train(model, data, cfg);
  ASSERT_EQ(result.trace.size(), 3u);
  EXPECT_EQ(result.trace[0].iteration, 4);
  EXPECT_EQ(result.trace[1].iteration, 8);
  EXPECT_EQ(result.trace[2].iteration, 10);
}

TEST(Train, SeedReproducible) {
  const auto data = toy_set(3, 32, 2);
  const auto model = init_model<float>(small_model(2), 4);
  const auto cfg = quick_config(15);
  const auto a = train(model, data, cfg);
  const auto b = train(model, data, cfg);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  for (std::size_t i = 0; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].total, b.trace[i].total);
    EXPECT_EQ(a.trace[i].l1, b.trace[i].l1);
  }
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.ema.params, b.ema.params);

  auto other = cfg;
  other.seed = cfg.seed + 1;
  const auto c = train(model, data, other);
  EXPECT_NE(a.trace.back().total, c.trace.back().total);
}

TEST(Train, EmaLagsParameters) {
  const auto data = toy_set(2, 32, 2);
  const auto model = init_model<float>(small_model(2), 2);
  const auto result = train(model, data, quick_config(5));
  const auto& w0 = model.params.at("head.weight");
  const auto& w = result.model.params.at("head.weight");
  const auto& e = result.ema.params.at("head.weight");
  double moved = 0, ema_moved = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    moved += std::abs(w[i] - w0[i]);
    ema_moved += std::abs(e[i] - w0[i]);
  }
  EXPECT_GT(moved, 0.0);
  EXPECT_GT(ema_moved, 0.0);
  EXPECT_LT(ema_moved, 0.05 * moved);
}

TEST(Train, ToySetLossHalves) {
  const auto data = toy_set(8, 48, 2);
  const auto model = init_model<float>(small_model(2), 5);
  auto cfg = quick_config(200);
  cfg.batch_size = 4;
  cfg.patch_size = 16;
  const auto result = train(model, data, cfg);
  double early = 0, late = 0;
  for (int i = 4; i < 50; ++i) early += result.trace[i].total;
  early /= 46;
  for (int i = 190; i < 200; ++i) late += result.trace[i].total;
  late /= 10;
  EXPECT_LE(late, 0.5 * early) << "early " << early << " late " << late;
}

TEST(Train, Errors) {
  const auto model = init_model<float>(small_model(2), 1);
  EXPECT_THROW(train(model, {}, quick_config(1)), ConfigError);
  auto cfg = quick_config(1);
  cfg.patch_size = 40;
  EXPECT_THROW(train(model, toy_set(2, 32, 2), cfg), ConfigError);
  auto bad = quick_config(1);
  bad.total_iters = 0;
  EXPECT_THROW(train(model, toy_set(1, 32, 2), bad), ConfigError);
}

TEST(Train, SkipsImagesSmallerThanPatch) {
  auto data = toy_set(1, 32, 2);
  TrainingPair small;
  small.hr = toy_image(8, 8, 3);
  small.lr = degrade(small.hr, 2);
  data.push_back(small);
  const auto model = init_model<float>(small_model(2), 1);
  EXPECT_NO_THROW(train(model, data, quick_config(3)));
}

TEST(LossCsv, Format) {
  const auto path = std::filesystem::temp_directory_path() / "dcfmn_loss_trace.csv";
  write_loss_csv(path, {{1, 1e-3, 0.25, 3.5, 0.425}, {2, 5e-4, 0.125, 1.0, 0.175}});
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(),
            "iteration,lr,l1,freq,total\n"
            "1,1.000000000e-03,2.500000000e-01,3.500000000e+00,4.250000000e-01\n"
            "2,5.000000000e-04,1.250000000e-01,1.000000000e+00,1.750000000e-01\n");
  std::filesystem::remove(path);
}

TEST(LoadPairs, DegradeFallbackAndScaleCheck) {
  const auto dir = std::filesystem::temp_directory_path() / "dcfmn_load_pairs";
  std::filesystem::create_directories(dir);
  const auto hr = toy_image(30, 26, 1);
  write_png(dir / "a.png", hr);
  const auto pairs = load_pairs({{(dir / "a.png").string(), "", 4}}, 4);
  ASSERT_EQ(pairs.size(), 1u);
  EXPECT_EQ(pairs[0].hr.h, 28);
  EXPECT_EQ(pairs[0].hr.w, 24);
  EXPECT_EQ(pairs[0].lr.h, 7);
  EXPECT_EQ(pairs[0].lr.w, 6);
  EXPECT_EQ(pairs[0].lr.rgb, degrade(modcrop(hr, 4), 4).rgb);
  EXPECT_THROW(load_pairs({{(dir / "a.png").string(), "", 2}}, 4), ConfigError);
  std::filesystem::remove_all(dir);
}

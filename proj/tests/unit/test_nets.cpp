#include <gtest/gtest.h>

#include <cmath>

#include "deepstamp/nets.hpp"
#include "fixtures.hpp"

using namespace deepstamp;
using namespace deepstamp::nets;
using deepstamp::testing::random_batch;
using deepstamp::testing::random_mark;

namespace {

template <typename T>
Tensor<T> uniform(const Shape& s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<T> t(s);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

ArchitectureSpec toy(std::vector<LayerSpec> layers, Shape input) {
  return finalize(ArchitectureSpec{"toy", std::move(input), std::move(layers), {}});
}

}  // namespace

TEST(Build, WatermarkerTakesSevenChannels) {
  const auto p = build("W", 0);
  EXPECT_EQ(p.entries.front().shape, (Shape{32, 7, 3, 3}));
  EXPECT_EQ(architecture("W").output, (Shape{4, 32, 32}));
  EXPECT_EQ(architecture("V").output, (Shape{4, 32, 32}));
  EXPECT_EQ(architecture("F-small").output, (Shape{10}));
  EXPECT_EQ(architecture("F-alexnet").output, (Shape{10}));
}

TEST(Build, LayerCountsMatchTheDescription) {
  auto count = [](std::string_view id, LayerKind k) {
    const auto a = architecture(id);
    return std::count_if(a.layers.begin(), a.layers.end(), [&](const LayerSpec& l) { return l.kind == k; });
  };
  EXPECT_EQ(count("W", LayerKind::conv), 4);
  EXPECT_EQ(count("V", LayerKind::conv), 5);
  EXPECT_EQ(count("D", LayerKind::conv), 3);
  EXPECT_EQ(count("D-transposed", LayerKind::transposed_conv), 3);
  EXPECT_EQ(architecture("D").output, (Shape{1}));
  EXPECT_EQ(architecture("D-transposed").output, (Shape{1}));
}

TEST(Build, BiasesStartAtZeroAndWeightsWithinFanInBound) {
  for (const char* id : {"W", "V", "D", "D-transposed", "F-small", "F-alexnet"}) {
    const auto p = build(id, 0);
    for (const auto& e : p.entries) {
      if (e.name.ends_with(".b")) {
        for (float v : e.values) ASSERT_EQ(v, 0.0f) << id << " " << e.name;
      }
      if (e.name.ends_with(".w") && e.name.rfind("conv", 0) == 0) {
        const double bound = std::sqrt(1.0 / static_cast<double>(e.shape[1] * e.shape[2] * e.shape[3]));
        for (float v : e.values) ASSERT_LE(std::abs(v), bound + 1e-7) << id << " " << e.name;
      }
    }
  }
}

TEST(Build, DeterministicInSeed) {
  EXPECT_EQ(build("F-small", 7), build("F-small", 7));
  EXPECT_NE(build("F-small", 7).entries.front().values, build("F-small", 8).entries.front().values);
}

TEST(Build, UnknownAndUnsupportedIds) {
  EXPECT_THROW(build("F-imaginary", 0), Error);
  EXPECT_FALSE(is_known_architecture("F-imaginary"));
  EXPECT_TRUE(is_known_architecture("F-alexnet"));
}

TEST(Shapes, MismatchNamesTheLayer) {
  const ArchitectureSpec a{"bad", {3, 8, 8}, {conv(3, 4, 3, 1, 1), conv(5, 2, 3)}, {}};
  try {
    finalize(a);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(Shapes, EveryKnownArchitectureValidates) {
  for (const auto& id : known_architectures()) {
    if (id == "F-resnet50") continue;
    EXPECT_NO_THROW(finalize(architecture(id))) << id;
  }
}

TEST(Forward, ZeroWeightsGiveSigmoidHalf) {
  auto p = build("W", 0);
  for (auto& e : p.entries) std::fill(e.values.begin(), e.values.end(), 0.0f);
  // Batchnorm scales stay at one so the normalization is still defined.
  for (auto& e : p.entries) {
    if (e.name.ends_with(".gamma") || e.name.ends_with(".running_var")) std::fill(e.values.begin(), e.values.end(), 1.0f);
  }
  Network<float> w(p);
  const auto out = w.infer(Tensor<float>({2, 7, 32, 32}, 0.0f));
  ASSERT_EQ(out.shape(), (Shape{2, 4, 32, 32}));
  for (float v : out.values()) ASSERT_FLOAT_EQ(v, 0.5f);
}

TEST(Forward, ClassifierLogitShape) {
  Network<float> f(build("F-small", 1));
  EXPECT_EQ(f.infer(random_batch(8, 1).data).shape(), (Shape{8, 10}));
}

TEST(Forward, InputShapeMismatchThrows) {
  Network<float> f(build("F-small", 1));
  EXPECT_THROW(f.infer(Tensor<float>({2, 3, 16, 16})), DimensionError);
}

TEST(Forward, EvalModeIsPure) {
  Network<float> w(build("W", 3));
  const auto x = uniform<float>({2, 7, 32, 32}, 1, 0.0, 1.0);
  const auto a = w.infer(x);
  const auto b = w.infer(x);
  EXPECT_EQ(a, b);
}

// conv(stride 2, pad 1) -> relu -> flatten -> dense, against loops written
// directly from the definitions.
TEST(Forward, MatchesStraightLineReference) {
  const auto arch = toy({conv(2, 3, 3, 2, 1), activation(LayerKind::relu), activation(LayerKind::flatten),
                         dense(3 * 3 * 3, 4)},
                        {2, 5, 5});
  auto params = build(arch, 11);
  Rng rng(2);
  for (auto& e : params.entries) {
    for (auto& v : e.values) v = static_cast<float>(rng.uniform(-0.5, 0.5));
  }
  const auto x = uniform<float>({2, 2, 5, 5}, 3);
  Network<float> net(arch, params);
  const auto y = net.infer(x);
  ASSERT_EQ(y.shape(), (Shape{2, 4}));

  const auto& cw = params.at("conv1.w").values;
  const auto& cb = params.at("conv1.b").values;
  const auto& dw = params.at("dense1.w").values;
  const auto& db = params.at("dense1.b").values;
  for (std::size_t n = 0; n < 2; ++n) {
    std::vector<double> hidden(27);
    for (std::size_t o = 0; o < 3; ++o) {
      for (std::size_t oy = 0; oy < 3; ++oy) {
        for (std::size_t ox = 0; ox < 3; ++ox) {
          double s = cb[o];
          for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t ky = 0; ky < 3; ++ky) {
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const long iy = static_cast<long>(oy * 2 + ky) - 1, ix = static_cast<long>(ox * 2 + kx) - 1;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 5) continue;
                s += cw[((o * 2 + c) * 3 + ky) * 3 + kx] * x[((n * 2 + c) * 5 + iy) * 5 + ix];
              }
            }
          }
          hidden[(o * 3 + oy) * 3 + ox] = std::max(0.0, s);
        }
      }
    }
    for (std::size_t j = 0; j < 4; ++j) {
      double s = db[j];
      for (std::size_t k = 0; k < 27; ++k) s += dw[j * 27 + k] * hidden[k];
      EXPECT_NEAR(y[n * 4 + j], s, 1e-6);
    }
  }
}

TEST(Forward, TransposedConvMatchesScatterReference) {
  const auto arch = toy({transposed_conv(2, 1, 3, 2, 1, 1)}, {2, 3, 3});
  auto params = build(arch, 5);
  params.at("tconv1.b").values[0] = 0.25f;
  const auto x = uniform<float>({1, 2, 3, 3}, 4);
  Network<float> net(arch, params);
  const auto y = net.infer(x);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 6, 6}));
  std::vector<double> ref(36, 0.25);
  const auto& w = params.at("tconv1.w").values;  // [in, out, k, k]
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t iy = 0; iy < 3; ++iy) {
      for (std::size_t ix = 0; ix < 3; ++ix) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const long oy = static_cast<long>(iy * 2 + ky) - 1, ox = static_cast<long>(ix * 2 + kx) - 1;
            if (oy < 0 || oy >= 6 || ox < 0 || ox >= 6) continue;
            ref[static_cast<std::size_t>(oy * 6 + ox)] += w[(c * 3 + ky) * 3 + kx] * x[(c * 3 + iy) * 3 + ix];
          }
        }
      }
    }
  }
  for (std::size_t k = 0; k < 36; ++k) EXPECT_NEAR(y[k], ref[k], 1e-6);
}

TEST(Forward, BatchnormTrainVsEval) {
  const auto arch = toy({batchnorm(2)}, {2, 3, 3});
  Network<double> net(arch, build(arch, 0));
  const auto x = uniform<double>({4, 2, 3, 3}, 9, 2.0, 5.0);
  const auto y = net.forward(x, Mode::train, nullptr, false);
  // Batch statistics: every channel comes out zero-mean, unit-variance.
  for (std::size_t c = 0; c < 2; ++c) {
    double s = 0, s2 = 0;
    for (std::size_t n = 0; n < 4; ++n) {
      for (std::size_t p = 0; p < 9; ++p) {
        const double v = y[(n * 2 + c) * 9 + p];
        s += v;
        s2 += v * v;
      }
    }
    EXPECT_NEAR(s / 36, 0.0, 1e-9);
    EXPECT_NEAR(s2 / 36, 1.0, 1e-3);
  }
  // Fresh running statistics (0, 1) make eval mode nearly the identity.
  const auto e = net.infer(x);
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_NEAR(e[k], x[k], 1e-4);
}

TEST(Synthesize, FourChannelMarksInUnitInterval) {
  const auto x = random_batch(3, 2);
  auto dup = x;
  std::copy(x.image(0).begin(), x.image(0).end(), dup.image(1).begin());
  const auto marks = synthesize(build("W", 1), dup, random_mark(3));
  ASSERT_EQ(marks.size(), 3u);
  EXPECT_EQ(marks[0], marks[1]);
  for (const auto& m : marks) {
    EXPECT_EQ(m.rgb.shape(), (Shape{3, 32, 32}));
    m.validate();
  }
}

// Per-layer finite-difference checks on random 7-channel inputs.
namespace {

struct LayerCase {
  const char* name;
  std::vector<LayerSpec> layers;
  Shape input;
};

std::vector<LayerCase> layer_cases() {
  return {
      {"conv", {conv(7, 3, 3, 1, 1)}, {7, 5, 5}},
      {"conv_stride2", {conv(7, 2, 3, 2, 1)}, {7, 6, 6}},
      {"tconv", {transposed_conv(7, 2, 3, 2, 1, 1)}, {7, 3, 3}},
      {"dense", {activation(LayerKind::flatten), dense(7 * 2 * 2, 3)}, {7, 2, 2}},
      {"batchnorm", {batchnorm(7)}, {7, 3, 3}},
      {"relu", {conv(7, 3, 3, 1, 1), activation(LayerKind::relu)}, {7, 4, 4}},
      {"leaky_relu", {conv(7, 3, 3, 1, 1), leaky_relu(0.2)}, {7, 4, 4}},
      {"sigmoid", {conv(7, 3, 3, 1, 1), activation(LayerKind::sigmoid)}, {7, 4, 4}},
      {"tanh", {conv(7, 3, 3, 1, 1), activation(LayerKind::tanh)}, {7, 4, 4}},
      {"maxpool", {conv(7, 2, 1), maxpool(2)}, {7, 4, 4}},
      {"global_avg_pool", {conv(7, 2, 3, 1, 1), activation(LayerKind::global_avg_pool)}, {7, 4, 4}},
  };
}

// Loss = sum(out * r) for a fixed random r. Returns the worst relative error
// over every parameter entry and every input entry.
template <typename T>
double check_layer(const LayerCase& lc, double h, double floor) {
  const auto arch = toy(lc.layers, lc.input);
  Network<T> net(arch, build(arch, 3));
  Shape in{2};
  in.insert(in.end(), lc.input.begin(), lc.input.end());
  const auto x = uniform<T>(in, 4);
  Shape out{2};
  out.insert(out.end(), arch.output.begin(), arch.output.end());
  const auto r = uniform<T>(out, 5);

  auto loss = [&](const Tensor<T>& input) {
    const auto y = net.forward(input, Mode::train, nullptr, false);
    long double s = 0;
    for (std::size_t k = 0; k < y.size(); ++k) s += static_cast<long double>(y[k]) * r[k];
    return static_cast<double>(s);
  };
  Tape<T> tape;
  net.forward(x, Mode::train, &tape, false);
  auto grads = net.zero_grads();
  const auto gx = net.backward(tape, r, grads);

  double worst = 0;
  auto compare = [&](double analytic, double numeric) {
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor}));
  };
  for (std::size_t pi = 0; pi < net.params().size(); ++pi) {
    auto& p = net.params()[pi];
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const T saved = p.value[k];
      p.value[k] = static_cast<T>(saved + h);
      const double fp = loss(x);
      p.value[k] = static_cast<T>(saved - h);
      const double fm = loss(x);
      p.value[k] = saved;
      compare(grads[pi][k], (fp - fm) / (2 * h));
    }
  }
  auto xx = x;
  for (std::size_t k = 0; k < xx.size(); ++k) {
    const T saved = xx[k];
    xx[k] = static_cast<T>(saved + h);
    const double fp = loss(xx);
    xx[k] = static_cast<T>(saved - h);
    const double fm = loss(xx);
    xx[k] = saved;
    compare(gx[k], (fp - fm) / (2 * h));
  }
  return worst;
}

}  // namespace

TEST(LayerGradients, Float64) {
  for (const auto& lc : layer_cases()) {
    EXPECT_LT(check_layer<double>(lc, 1e-6, 1e-6), 1e-6) << lc.name;
  }
}

// Float32 finite differences are too coarse near kinks; instead the float32
// backward pass must match the (finite-difference checked) float64 one.
template <typename T>
std::vector<double> layer_grads(const LayerCase& lc) {
  const auto arch = toy(lc.layers, lc.input);
  Network<T> net(arch, build(arch, 3));
  Shape in{2};
  in.insert(in.end(), lc.input.begin(), lc.input.end());
  Shape out{2};
  out.insert(out.end(), arch.output.begin(), arch.output.end());
  Tape<T> tape;
  net.forward(uniform<T>(in, 4), Mode::train, &tape, false);
  auto grads = net.zero_grads();
  const auto gx = net.backward(tape, uniform<T>(out, 5), grads);
  std::vector<double> all(gx.values().begin(), gx.values().end());
  for (std::size_t pi = 0; pi < grads.size(); ++pi) {
    if (!net.params()[pi].trainable) continue;
    all.insert(all.end(), grads[pi].values().begin(), grads[pi].values().end());
  }
  return all;
}

TEST(LayerGradients, Float32MatchesFloat64) {
  for (const auto& lc : layer_cases()) {
    const auto g32 = layer_grads<float>(lc), g64 = layer_grads<double>(lc);
    ASSERT_EQ(g32.size(), g64.size()) << lc.name;
    double scale = 0;
    for (double v : g64) scale = std::max(scale, std::abs(v));
    for (std::size_t k = 0; k < g64.size(); ++k) {
      EXPECT_NEAR(g32[k], g64[k], 1e-4 * std::max(scale, 1.0)) << lc.name << " entry " << k;
    }
  }
}

#include <gtest/gtest.h>

#include <cmath>

#include "deepstamp/losses.hpp"
#include "deepstamp/nets.hpp"
#include "fixtures.hpp"

using namespace deepstamp;
using namespace deepstamp::training;
using deepstamp::testing::random_batch;
using deepstamp::testing::random_mark;

namespace {

Tensor<double> logits(std::size_t n, std::size_t k, std::initializer_list<double> v) {
  return Tensor<double>({n, k}, std::vector<double>(v));
}

// Scalar KL(softmax(a) || softmax(b)) for one row.
double kl_row(const std::vector<double>& a, const std::vector<double>& b) {
  auto softmax = [](const std::vector<double>& z) {
    double m = *std::max_element(z.begin(), z.end()), s = 0;
    std::vector<double> p(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
    for (auto& x : p) x /= s;
    return p;
  };
  const auto p = softmax(a), q = softmax(b);
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * std::log(p[i] / q[i]);
  return kl;
}

}  // namespace

TEST(Kl, IdenticalInputsGiveZero) {
  const auto z = logits(2, 3, {1, 2, 3, -1, 0, 4});
  const auto r = kl_to_reference(z, z);
  EXPECT_NEAR(r.value, 0.0, 1e-15);
  for (double g : r.grad.values()) EXPECT_NEAR(g, 0.0, 1e-15);
}

TEST(Kl, TwoClassHandComputed) {
  // Reference softmax (0.75, 0.25) against uniform.
  const auto ref = logits(1, 2, {std::log(3.0), 0.0});
  const auto cur = logits(1, 2, {0.0, 0.0});
  const double expect = 0.75 * std::log(0.75 / 0.5) + 0.25 * std::log(0.25 / 0.5);
  EXPECT_NEAR(expect, 0.1308, 5e-5);
  EXPECT_NEAR(kl_to_reference(ref, cur).value, expect, 1e-12);
}

TEST(Kl, NonNegativeAndMatchesScalarOracle) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> a(10), b(10);
    for (auto& v : a) v = rng.uniform(-5, 5);
    for (auto& v : b) v = rng.uniform(-5, 5);
    Tensor<double> ta({1, 10}, a), tb({1, 10}, b);
    const double kl = kl_to_reference(ta, tb).value;
    EXPECT_GE(kl, 0.0);
    EXPECT_NEAR(kl, kl_row(a, b), 1e-12);
  }
}

TEST(CrossEntropy, UniformLogitsGiveLogK) {
  const auto z = Tensor<double>({3, 10}, 0.0);
  const std::vector<int> y{0, 4, 9};
  EXPECT_NEAR(cross_entropy(z, std::span<const int>(y)).value, std::log(10.0), 1e-12);
  const std::vector<int> bad{0, 4, 10};
  EXPECT_THROW(cross_entropy(z, std::span<const int>(bad)), RangeError);
}

TEST(Reconstruction, IdentityStubOffsets) {
  const auto w = random_mark(1);
  const auto v = nets::build("identity", 0);
  std::vector<Watermark> same{w, w};
  EXPECT_NEAR(loss_v(v, w, same), 0.0, 1e-12);
  auto shifted = w;
  for (auto* t : {&shifted.rgb, &shifted.alpha}) {
    for (auto& x : t->values()) x = x * 0.8f;  // keep inside [0,1]
  }
  auto base = shifted;
  for (auto* t : {&base.rgb, &base.alpha}) {
    for (auto& x : t->values()) x += 0.1f;
  }
  std::vector<Watermark> off{base};
  EXPECT_NEAR(loss_v(v, shifted, off), 0.01, 1e-6);
}

TEST(Reconstruction, MatchesScalarLoop) {
  const auto w = random_mark(2);
  const std::vector<Watermark> marks{random_mark(3), random_mark(4), random_mark(5)};
  double sum = 0;
  const auto target = w.to_tensor();
  for (const auto& m : marks) {
    const auto t = m.to_tensor();
    for (std::size_t k = 0; k < t.size(); ++k) sum += (double(t[k]) - target[k]) * (double(t[k]) - target[k]);
  }
  const double expect = sum / (marks.size() * target.size());
  EXPECT_NEAR(loss_v(nets::build("identity", 0), w, marks), expect, 1e-6);
}

TEST(Adversarial, ZeroLogitsGiveLn2) {
  const auto z = Tensor<double>({4, 1}, 0.0);
  const auto l = adversarial_losses(z, z);
  EXPECT_NEAR(l.d_loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(l.g_loss, std::log(2.0), 1e-15);
}

TEST(Adversarial, PerfectDiscriminatorSaturates) {
  const auto real = Tensor<double>({3}, 20.0);
  const auto fake = Tensor<double>({3}, -20.0);
  const auto l = adversarial_losses(real, fake);
  EXPECT_NEAR(l.d_loss, 0.0, 1e-8);
  EXPECT_NEAR(l.g_loss, 20.0, 1e-8);
  EXPECT_TRUE(std::isfinite(adversarial_losses(Tensor<double>({1}, 800.0), Tensor<double>({1}, -800.0)).g_loss));
}

TEST(Adversarial, SwappingBatchesAndTargetsIsSymmetric) {
  Rng rng(4);
  Tensor<double> a({5}), b({5});
  for (auto& v : a.values()) v = rng.uniform(-3, 3);
  for (auto& v : b.values()) v = rng.uniform(-3, 3);
  // Labels swapped is the same as negating the logits.
  Tensor<double> na({5}), nb({5});
  for (std::size_t i = 0; i < 5; ++i) {
    na[i] = -a[i];
    nb[i] = -b[i];
  }
  EXPECT_NEAR(adversarial_losses(a, b).d_loss, adversarial_losses(nb, na).d_loss, 1e-14);
}

TEST(Adversarial, GradientsMatchFiniteDifferences) {
  Tensor<double> r({3}, std::vector<double>{0.3, -1.2, 2.0}), f({3}, std::vector<double>{-0.7, 0.1, 1.5});
  const auto l = adversarial_losses(r, f);
  const double h = 1e-6;
  for (std::size_t i = 0; i < 3; ++i) {
    auto rp = r, rm = r, fp = f, fm = f;
    rp[i] += h;
    rm[i] -= h;
    fp[i] += h;
    fm[i] -= h;
    EXPECT_NEAR(l.d_grad_real[i], (adversarial_losses(rp, f).d_loss - adversarial_losses(rm, f).d_loss) / (2 * h), 1e-8);
    EXPECT_NEAR(l.d_grad_fake[i], (adversarial_losses(r, fp).d_loss - adversarial_losses(r, fm).d_loss) / (2 * h), 1e-8);
    EXPECT_NEAR(l.g_grad_fake[i], (adversarial_losses(r, fp).g_loss - adversarial_losses(r, fm).g_loss) / (2 * h), 1e-8);
  }
}

TEST(Gman, SingleDiscriminatorPassesThrough) {
  const std::vector<double> g{0.42};
  const auto a = gman_aggregate<double>(g, 1.0);
  EXPECT_EQ(a.value, 0.42);
  EXPECT_EQ(a.weights[0], 1.0);
}

TEST(Gman, TemperatureLimits) {
  const std::vector<double> g{0.2, 0.5, 1.1};
  EXPECT_NEAR(gman_aggregate<double>(g, 1e9).value, (0.2 + 0.5 + 1.1) / 3, 1e-8);
  EXPECT_NEAR(gman_aggregate<double>(g, 1e-4).value, 1.1, 1e-8);
  const double mid = gman_aggregate<double>(g, 1.0).value;
  EXPECT_GT(mid, (0.2 + 0.5 + 1.1) / 3);
  EXPECT_LT(mid, 1.1);
  EXPECT_THROW(gman_aggregate<double>(g, 0.0), ConfigError);
}

TEST(Gman, WeightsAreTheDerivative) {
  const std::vector<double> g{0.3, 0.9, 0.4};
  const auto a = gman_aggregate<double>(g, 0.7);
  const double h = 1e-7;
  for (std::size_t j = 0; j < g.size(); ++j) {
    auto gp = g, gm = g;
    gp[j] += h;
    gm[j] -= h;
    const double num = (gman_aggregate<double>(gp, 0.7).value - gman_aggregate<double>(gm, 0.7).value) / (2 * h);
    EXPECT_NEAR(a.weights[j], num, 1e-7);
  }
}

TEST(Total, WeightedSum) {
  EXPECT_EQ(total_loss(0, 0, 0), 0.0);
  EXPECT_EQ(total_loss(0.5, 0.25, 0.25), 1.0);
  EXPECT_EQ(total_loss(1.0, 2.0, 3.0, {0.5, 0.0, 2.0}), 6.5);
  const LossWeights defaults;
  EXPECT_EQ(defaults.task, 1.0);
  EXPECT_EQ(defaults.visual, 1.0);
  EXPECT_EQ(defaults.discriminator, 1.0);
}

TEST(Total, IsExactSumOverRandomTriples) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const double f = rng.uniform(0, 10), v = rng.uniform(0, 1), d = rng.uniform(0, 5);
    const auto b = breakdown(f, v, d);
    ASSERT_EQ(b.l_tot, f + v + d);
    ASSERT_EQ(b.l_f, f);
  }
}

TEST(Total, NonFiniteComponentIsNumericalError) {
  EXPECT_THROW(total_loss(std::nan(""), 0, 0), NumericalError);
  EXPECT_THROW(total_loss(0, INFINITY, 0), NumericalError);
}

TEST(NetworkForms, LossFZeroOnIdenticalBatches) {
  const auto x = random_batch(4, 1);
  const auto f = nets::build("F-small", 2);
  EXPECT_NEAR(loss_f(f, x, x), 0.0, 1e-7);
  EXPECT_GE(loss_f(f, x, random_batch(4, 2)), 0.0);
}

TEST(NetworkForms, LossDOnIdenticalBatchesIsSymmetric) {
  const auto x = random_batch(4, 1);
  const auto [d, g] = loss_d(nets::build("D", 3), x, x);
  EXPECT_GT(d, 0.0);
  EXPECT_GT(g, 0.0);
}

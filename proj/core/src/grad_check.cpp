#include <cmath>
#include <functional>
#include <tuple>

#include "deepstamp/rng.hpp"
#include "deepstamp/training.hpp"
#include "stamper_graph.hpp"

namespace deepstamp::training {

namespace {

using Net = nets::Network<double>;
using Grads = nets::Gradients<double>;

// Relative-error floor, as a fraction of the largest analytic gradient
// component of the subject networks. Entries below it (e.g. conv biases
// feeding a batchnorm, whose gradient is exactly 0) are compared absolutely.
constexpr double kFloorFraction = 1e-4;

// Central differences resolve a component only when it is not swamped by the
// loss's own rounding (about 1e-15 relative, divided by h). Samples are drawn
// from the components within this factor of their tensor's largest.
constexpr double kSignificant = 0.05;

// The loss's rounding noise is measured by re-evaluating it after nudging a
// few parameters by far less than any gradient could register. A component
// is checked only if that noise, turned into a central-difference error,
// stays below this fraction of it.
constexpr double kResolution = 1e-6;
constexpr std::size_t kNoiseProbes = 8;
constexpr double kNudge = 1e-14;

struct Subject {
  std::string label;
  Net* net;
};

// Evaluates the loss; when `grads` is non-null it holds one zeroed Gradients
// per subject and receives the analytic gradients.
using Objective = std::function<double(std::vector<Grads>* grads)>;

Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = lo + (hi - lo) * rng.uniform01();
  return t;
}

Net make_net(std::string_view id, std::uint64_t seed) {
  return Net(nets::build(id, seed));
}

// A freshly initialized classifier is nearly indifferent between classes, so
// the KL it feeds back is tiny and its finite differences drown in rounding.
// Scaling the last layer spreads the logits without changing the graph.
constexpr double kSharpen = 16.0;

void sharpen(Net& f) {
  auto& ps = f.params();
  std::size_t last = ps.size();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].trainable && ps[i].value.rank() >= 2) last = i;
  }
  for (std::size_t i = last; i < ps.size(); ++i) {
    for (auto& v : ps[i].value.values()) v *= kSharpen;
  }
}

GradCheckResult compare(const std::vector<Subject>& subjects, const Objective& objective,
                        const GradCheckOptions& opts, std::uint64_t seed) {
  nets::BranchProbe probe;
  std::vector<Grads> analytic;
  for (const auto& s : subjects) analytic.push_back(s.net->zero_grads());
  const double f0 = objective(&analytic);
  const std::uint64_t base = probe.digest();

  double global_max = 0.0;
  for (const auto& g : analytic) {
    for (const auto& t : g) {
      for (double v : t.values()) global_max = std::max(global_max, std::abs(v));
    }
  }
  const double floor = std::max(kFloorFraction * global_max, 1e-300);

  Rng rng(derive_seed(seed, "grad-check-samples"));
  double noise_sq = 0.0;
  for (std::size_t k = 0; k < kNoiseProbes; ++k) {
    // One entry of every tensor moves, so rounding is reshuffled throughout
    // the graph; the (negligible) first-order change is subtracted.
    std::vector<std::tuple<nets::Param<double>*, std::size_t, double>> moved;
    double linear = 0.0;
    for (std::size_t si = 0; si < subjects.size(); ++si) {
      auto& ps = subjects[si].net->params();
      for (std::size_t pi = 0; pi < ps.size(); ++pi) {
        auto& p = ps[pi];
        if (!p.trainable || p.value.empty()) continue;
        const auto idx = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(p.value.size()) - 1));
        const double saved = p.value[idx];
        const double delta = kNudge * std::max(std::abs(saved), 1.0) * (rng.uniform01() < 0.5 ? -1.0 : 1.0);
        p.value[idx] = saved + delta;
        linear += analytic[si][pi][idx] * delta;
        moved.emplace_back(&p, idx, saved);
      }
    }
    const double d = objective(nullptr) - f0 - linear;
    for (auto& [p, idx, saved] : moved) p->value[idx] = saved;
    noise_sq += d * d;
  }
  // Both ends of a central difference carry this error; 2x for the
  // spread of a small-sample estimate.
  const double noise = 2.0 * std::sqrt(noise_sq / kNoiseProbes) / opts.step;
  const double resolvable = noise / kResolution;

  const double h = opts.step;
  GradCheckResult result;
  result.noise = noise;
  for (std::size_t si = 0; si < subjects.size(); ++si) {
    auto& params = subjects[si].net->params();
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto& p = params[pi];
      if (!p.trainable) continue;
      const auto& a_t = analytic[si][pi];
      double tensor_max = 0.0;
      for (double v : a_t.values()) tensor_max = std::max(tensor_max, std::abs(v));
      std::vector<std::size_t> pool;
      TensorCheck check{subjects[si].label, p.name, 0.0, 0, 0};
      for (std::size_t k = 0; k < a_t.size(); ++k) {
        if (std::abs(a_t[k]) < kSignificant * tensor_max) continue;
        if (std::abs(a_t[k]) >= resolvable) {
          pool.push_back(k);
        } else {
          ++check.unresolved;
        }
      }
      const std::size_t want = std::min(opts.samples_per_tensor, pool.size());
      // A step that flips a ReLU or changes a max-pool winner measures the
      // kink, not the derivative; such samples are replaced by fresh draws.
      for (std::size_t attempt = 0; check.checked < want && attempt < 4 * want + 4; ++attempt) {
        const std::size_t idx = pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))];
        const double saved = p.value[idx];
        p.value[idx] = saved + h;
        probe.reset();
        const double fp = objective(nullptr);
        const bool smooth_p = probe.digest() == base;
        p.value[idx] = saved - h;
        probe.reset();
        const double fm = objective(nullptr);
        const bool smooth_m = probe.digest() == base;
        p.value[idx] = saved;
        if (!smooth_p || !smooth_m) {
          ++check.kinks;
          continue;
        }
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = a_t[idx];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        check.max_rel_error = std::max(check.max_rel_error, rel);
        ++check.checked;
      }
      result.max_rel_error = std::max(result.max_rel_error, check.max_rel_error);
      result.tensors.push_back(std::move(check));
    }
  }
  return result;
}

}  // namespace

GradCheckResult grad_check(std::string_view arch_id, LossPath path, std::uint64_t seed,
                           const GradCheckOptions& opts) {
  if (opts.batch == 0) throw ConfigError("grad_check batch must be >= 1");
  if (!(opts.step > 0.0)) throw ConfigError("grad_check step must be > 0");
  Rng rng(derive_seed(seed, "grad-check-data"));
  const std::size_t n = opts.batch, side = kImageSide;
  const double blend = opts.blend;
  const Tensor<double> images = random_tensor({n, 3, side, side}, rng);
  const Tensor<double> mark = random_tensor({4, side, side}, rng, 0.05, 0.95);

  switch (path) {
    case LossPath::classifier: {
      Net f = make_net(arch_id, derive_seed(seed, "F"));
      std::vector<int> labels(n);
      for (auto& l : labels) l = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(kNumClasses) - 1));
      Objective obj = [&](std::vector<Grads>* g) {
        nets::Tape<double> tape;
        const auto logits = f.forward(images, nets::Mode::train, &tape, false);
        const auto ce = cross_entropy(logits, std::span<const int>(labels));
        if (g) f.backward(tape, ce.grad, (*g)[0], false);
        return ce.value;
      };
      return compare({{"F", &f}}, obj, opts, seed);
    }
    case LossPath::discriminator: {
      Net d = make_net(arch_id, derive_seed(seed, "D"));
      const Tensor<double> real = detail::composite_static(images, mark, blend);
      const Tensor<double> fake_marks = random_tensor({n, 4, side, side}, rng, 0.05, 0.95);
      const Tensor<double> fake = detail::composite(images, fake_marks, blend);
      Objective obj = [&](std::vector<Grads>* g) {
        Grads scratch = d.zero_grads();
        return detail::discriminator_pass(d, real, fake, g ? (*g)[0] : scratch).d_loss;
      };
      return compare({{"D", &d}}, obj, opts, seed);
    }
    default: break;
  }

  // Paths through the watermarker.
  Net w = make_net(nets::arch_id::watermarker, derive_seed(seed, "W"));
  Net v = make_net(path == LossPath::visual ? arch_id : nets::arch_id::autoencoder,
                   derive_seed(seed, "V"));
  Net f = make_net(path == LossPath::task ? arch_id : nets::arch_id::classifier_small,
                   derive_seed(seed, "F"));
  sharpen(f);
  std::vector<Net> ds;
  // Two discriminators so the aggregation weights are exercised.
  const std::size_t n_d = path == LossPath::generator ? 2 : 1;
  const std::string_view d_id = path == LossPath::generator ? arch_id : nets::arch_id::discriminator;
  for (std::size_t j = 0; j < n_d; ++j) ds.push_back(make_net(d_id, derive_seed(seed, 100 + j)));
  std::vector<Net*> d_ptrs;
  for (auto& d : ds) d_ptrs.push_back(&d);

  LossWeights weights{0.0, 0.0, 0.0};
  detail::GeneratorSwitches sw{false, false, false};
  std::vector<Subject> subjects{{"W", &w}};
  bool with_v = false, with_d = false;
  switch (path) {
    case LossPath::task:
      weights.task = 1.0;
      sw.task = true;
      break;
    case LossPath::visual:
      weights.visual = 1.0;
      sw.visual = true;
      with_v = true;
      break;
    case LossPath::generator:
      weights.discriminator = 1.0;
      sw.adversarial = true;
      with_d = true;
      break;
    case LossPath::total:
      if (arch_id != nets::arch_id::watermarker) {
        throw ConfigError("total loss path is checked through W; got '" + std::string(arch_id) + "'");
      }
      weights = LossWeights{1.0, 1.0, 1.0};
      sw = {true, true, true};
      with_v = true;
      break;
    default: break;
  }
  if (with_v) subjects.push_back({"V", &v});
  if (with_d) {
    for (std::size_t j = 0; j < ds.size(); ++j) subjects.push_back({"D" + std::to_string(j), &ds[j]});
  }

  Objective obj = [&](std::vector<Grads>* g) {
    Grads gw = w.zero_grads();
    Grads gv = v.zero_grads();
    std::vector<Grads> gd;
    for (auto& d : ds) gd.push_back(d.zero_grads());
    detail::GeneratorSwitches run = sw;
    run.gradients = g != nullptr;
    const auto terms = detail::generator_pass<double>(w, v, d_ptrs, f, images, mark, blend, weights,
                                                      LfMode::kl, 1.0, run, gw, &gv, &gd);
    if (g) {
      std::size_t k = 0;
      (*g)[k++] = std::move(gw);
      if (with_v) (*g)[k++] = std::move(gv);
      if (with_d) {
        for (auto& x : gd) (*g)[k++] = std::move(x);
      }
    }
    return static_cast<double>(terms.objective);
  };
  return compare(subjects, obj, opts, seed);
}

}  // namespace deepstamp::training

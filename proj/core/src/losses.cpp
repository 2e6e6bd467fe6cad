#include "deepstamp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "deepstamp/nets.hpp"

namespace deepstamp::training {

namespace {

template <typename T>
void check_logits(const Tensor<T>& logits, const char* what) {
  if (logits.rank() != 2 || logits.dim(0) == 0 || logits.dim(1) == 0) {
    throw DimensionError(std::string(what) + " logits must be [N,K], got " +
                         shape_to_string(logits.shape()));
  }
}

// Row-wise log-softmax.
template <typename T>
std::vector<T> log_softmax(const Tensor<T>& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<T> out(n * k);
  for (std::size_t i = 0; i < n; ++i) {
    const T* z = logits.data() + i * k;
    const T m = *std::max_element(z, z + k);
    T s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(z[j] - m);
    const T lse = m + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = z[j] - lse;
  }
  return out;
}

template <typename T>
T softplus(T v) {
  return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
}

template <typename T>
T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <typename T>
std::size_t flat_logit_count(const Tensor<T>& t) {
  if (t.rank() == 1) return t.dim(0);
  if (t.rank() == 2 && t.dim(1) == 1) return t.dim(0);
  throw DimensionError("discriminator logits must be [N] or [N,1], got " + shape_to_string(t.shape()));
}

template <typename T>
std::size_t argmax_row(const T* z, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (z[j] > z[best]) best = j;
  }
  return best;
}

}  // namespace

template <typename T>
LossGrad<T> kl_to_reference(const Tensor<T>& reference_logits, const Tensor<T>& logits) {
  check_logits(logits, "KL");
  if (reference_logits.shape() != logits.shape()) {
    throw DimensionError("KL reference " + shape_to_string(reference_logits.shape()) +
                         " vs logits " + shape_to_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto log_p = log_softmax(reference_logits);
  const auto log_q = log_softmax(logits);
  LossGrad<T> out{T(0), Tensor<T>(logits.shape())};
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n * k; ++i) {
    const T p = std::exp(log_p[i]);
    if (p > T(0)) out.value += p * (log_p[i] - log_q[i]);
    out.grad[i] = (std::exp(log_q[i]) - p) * inv_n;
  }
  out.value = std::max(out.value * inv_n, T(0));
  return out;
}

template <typename T>
LossGrad<T> hard_label_agreement(const Tensor<T>& reference_logits, const Tensor<T>& logits) {
  check_logits(logits, "hard-label");
  if (reference_logits.shape() != logits.shape()) throw DimensionError("hard-label shape mismatch");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<int>(argmax_row(reference_logits.data() + i * k, k));
  }
  return cross_entropy(logits, labels);
}

template <typename T>
LossGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  check_logits(logits, "cross-entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw DimensionError("cross-entropy label count mismatch");
  const auto log_q = log_softmax(logits);
  LossGrad<T> out{T(0), Tensor<T>(logits.shape())};
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw RangeError("label " + std::to_string(labels[i]) + " outside logits");
    }
    const auto y = static_cast<std::size_t>(labels[i]);
    out.value -= log_q[i * k + y];
    for (std::size_t j = 0; j < k; ++j) {
      out.grad[i * k + j] = (std::exp(log_q[i * k + j]) - (j == y ? T(1) : T(0))) * inv_n;
    }
  }
  out.value *= inv_n;
  return out;
}

template <typename T>
LossGrad<T> reconstruction_l2(const Tensor<T>& reconstruction, const Tensor<T>& target) {
  if (reconstruction.rank() != target.rank() + 1 ||
      !std::equal(target.shape().begin(), target.shape().end(), reconstruction.shape().begin() + 1) ||
      reconstruction.dim(0) == 0) {
    throw DimensionError("reconstruction " + shape_to_string(reconstruction.shape()) +
                         " does not match target " + shape_to_string(target.shape()));
  }
  const std::size_t n = reconstruction.dim(0), per = target.size();
  const T scale = T(1) / static_cast<T>(n * per);
  LossGrad<T> out{T(0), Tensor<T>(reconstruction.shape())};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < per; ++j) {
      const T d = reconstruction[i * per + j] - target[j];
      out.value += d * d;
      out.grad[i * per + j] = T(2) * d * scale;
    }
  }
  out.value *= scale;
  return out;
}

template <typename T>
AdversarialLosses<T> adversarial_losses(const Tensor<T>& real_logits, const Tensor<T>& fake_logits) {
  const std::size_t n = flat_logit_count(real_logits);
  if (flat_logit_count(fake_logits) != n || n == 0) {
    throw DimensionError("discriminator batches differ in size: " +
                         shape_to_string(real_logits.shape()) + " vs " +
                         shape_to_string(fake_logits.shape()));
  }
  AdversarialLosses<T> out{T(0), T(0), Tensor<T>(real_logits.shape()), Tensor<T>(fake_logits.shape()),
                           Tensor<T>(fake_logits.shape())};
  const T inv_2n = T(1) / static_cast<T>(2 * n);
  const T inv_n = T(1) / static_cast<T>(n);
  T real_sum = 0, fake_sum = 0, gen_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T r = real_logits[i], f = fake_logits[i];
    real_sum += softplus(-r);  // -log sigmoid(r)
    fake_sum += softplus(f);   // -log(1 - sigmoid(f))
    gen_sum += softplus(-f);
    out.d_grad_real[i] = (sigmoid(r) - T(1)) * inv_2n;
    out.d_grad_fake[i] = sigmoid(f) * inv_2n;
    out.g_grad_fake[i] = (sigmoid(f) - T(1)) * inv_n;
  }
  out.d_loss = (real_sum + fake_sum) * inv_2n;
  out.g_loss = gen_sum * inv_n;
  return out;
}

template <typename T>
Aggregate<T> gman_aggregate(std::span<const T> g_losses, double temperature) {
  if (g_losses.empty()) throw ConfigError("GMAN aggregation needs at least one discriminator");
  if (!(temperature > 0.0)) throw ConfigError("GMAN temperature must be > 0");
  Aggregate<T> out{T(0), std::vector<T>(g_losses.size())};
  if (g_losses.size() == 1) {
    out.value = g_losses[0];
    out.weights[0] = T(1);
    return out;
  }
  const T tau = static_cast<T>(temperature);
  const T m = *std::max_element(g_losses.begin(), g_losses.end());
  std::vector<T> soft(g_losses.size());
  T z = 0;
  for (std::size_t j = 0; j < g_losses.size(); ++j) {
    soft[j] = std::isinf(tau) ? T(1) : std::exp((g_losses[j] - m) / tau);
    z += soft[j];
  }
  for (std::size_t j = 0; j < g_losses.size(); ++j) {
    soft[j] /= z;
    out.value += soft[j] * g_losses[j];
  }
  for (std::size_t j = 0; j < g_losses.size(); ++j) {
    const T extra = std::isinf(tau) ? T(0) : (g_losses[j] - out.value) / tau;
    out.weights[j] = soft[j] * (T(1) + extra);
  }
  return out;
}

double total_loss(double l_f, double l_v, double l_d, const LossWeights& weights) {
  if (!std::isfinite(l_f) || !std::isfinite(l_v) || !std::isfinite(l_d)) {
    throw NumericalError("non-finite loss component (l_f=" + std::to_string(l_f) +
                         ", l_v=" + std::to_string(l_v) + ", l_d=" + std::to_string(l_d) + ")");
  }
  return weights.task * l_f + weights.visual * l_v + weights.discriminator * l_d;
}

LossBreakdown breakdown(double l_f, double l_v, double l_d, const LossWeights& weights) {
  return {l_f, l_v, l_d, total_loss(l_f, l_v, l_d, weights)};
}

double loss_f(const NetworkParams& classifier, const ImageBatch& clean, const ImageBatch& stamped,
              LfMode mode) {
  if (clean.data.shape() != stamped.data.shape()) {
    throw DimensionError("loss_f batches differ: " + shape_to_string(clean.data.shape()) + " vs " +
                         shape_to_string(stamped.data.shape()));
  }
  const nets::Network<float> f(classifier);
  const auto ref = f.infer(clean.data);
  const auto out = f.infer(stamped.data);
  return mode == LfMode::kl ? kl_to_reference(ref, out).value : hard_label_agreement(ref, out).value;
}

double loss_v(const NetworkParams& autoencoder, const Watermark& original,
              std::span<const Watermark> synthesized) {
  if (synthesized.empty()) throw DimensionError("loss_v needs at least one synthesized watermark");
  const auto target = original.to_tensor();
  Shape shape{synthesized.size()};
  shape.insert(shape.end(), target.shape().begin(), target.shape().end());
  Tensor<float> batch(shape);
  for (std::size_t i = 0; i < synthesized.size(); ++i) {
    const auto t = synthesized[i].to_tensor();
    if (t.shape() != target.shape()) throw DimensionError("loss_v watermark shape mismatch");
    std::copy(t.values().begin(), t.values().end(), batch.data() + i * target.size());
  }
  const nets::Network<float> v(autoencoder);
  return reconstruction_l2(v.infer(batch), target).value;
}

std::pair<double, double> loss_d(const NetworkParams& discriminator, const ImageBatch& static_stamped,
                                 const ImageBatch& learned_stamped) {
  if (static_stamped.data.shape() != learned_stamped.data.shape()) {
    throw DimensionError("loss_d batches differ in shape");
  }
  const nets::Network<float> d(discriminator);
  const auto l = adversarial_losses(d.infer(static_stamped.data), d.infer(learned_stamped.data));
  return {l.d_loss, l.g_loss};
}

#define DEEPSTAMP_INSTANTIATE(T)                                                              \
  template LossGrad<T> kl_to_reference<T>(const Tensor<T>&, const Tensor<T>&);                \
  template LossGrad<T> hard_label_agreement<T>(const Tensor<T>&, const Tensor<T>&);           \
  template LossGrad<T> cross_entropy<T>(const Tensor<T>&, std::span<const int>);              \
  template LossGrad<T> reconstruction_l2<T>(const Tensor<T>&, const Tensor<T>&);              \
  template AdversarialLosses<T> adversarial_losses<T>(const Tensor<T>&, const Tensor<T>&);    \
  template Aggregate<T> gman_aggregate<T>(std::span<const T>, double);

DEEPSTAMP_INSTANTIATE(float)
DEEPSTAMP_INSTANTIATE(double)

#undef DEEPSTAMP_INSTANTIATE

}  // namespace deepstamp::training

#pragma once

#include <span>
#include <utility>
#include <vector>

#include "deepstamp/dataio.hpp"
#include "deepstamp/tensor.hpp"

namespace deepstamp::training {

/// A scalar loss and its gradient w.r.t. the prediction argument.
template <typename T>
struct LossGrad {
  T value{};
  Tensor<T> grad;
};

enum class LfMode { kl, hard };

/// Mean over the batch of KL(softmax(reference) || softmax(logits)); logits [N,K].
/// The reference side is treated as a constant.
template <typename T>
LossGrad<T> kl_to_reference(const Tensor<T>& reference_logits, const Tensor<T>& logits);

/// Cross-entropy of logits against the argmax labels of the reference logits.
template <typename T>
LossGrad<T> hard_label_agreement(const Tensor<T>& reference_logits, const Tensor<T>& logits);

/// Mean softmax cross-entropy; logits [N,K].
template <typename T>
LossGrad<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

/// Mean over the batch of ||reconstruction_i - target||^2 / target.size();
/// reconstruction [N, ...target.shape].
template <typename T>
LossGrad<T> reconstruction_l2(const Tensor<T>& reconstruction, const Tensor<T>& target);

template <typename T>
struct AdversarialLosses {
  T d_loss{};            // BCE over real (target 1) and fake (target 0), mean over 2N
  T g_loss{};            // BCE of fake against target 1, mean over N
  Tensor<T> d_grad_real; // d d_loss / d real_logits
  Tensor<T> d_grad_fake; // d d_loss / d fake_logits
  Tensor<T> g_grad_fake; // d g_loss / d fake_logits
};

/// Logits are [N] or [N,1] discriminator outputs.
template <typename T>
AdversarialLosses<T> adversarial_losses(const Tensor<T>& real_logits, const Tensor<T>& fake_logits);

template <typename T>
struct Aggregate {
  T value{};
  std::vector<T> weights;  // d value / d g_j
};

/// Softmax-weighted combination of generator losses from several
/// discriminators: sum_j softmax(g/tau)_j * g_j. tau -> inf gives the mean,
/// tau -> 0 the max. A single loss passes through unchanged.
template <typename T>
Aggregate<T> gman_aggregate(std::span<const T> g_losses, double temperature);

struct LossWeights {
  double task = 1.0;           // lambda_f
  double visual = 1.0;         // lambda_v
  double discriminator = 1.0;  // lambda_d
};

struct LossBreakdown {
  double l_f = 0.0;
  double l_v = 0.0;
  double l_d = 0.0;
  double l_tot = 0.0;
};

/// lambda_f*l_f + lambda_v*l_v + lambda_d*l_d, summed left to right. Throws
/// NumericalError on a non-finite component.
double total_loss(double l_f, double l_v, double l_d, const LossWeights& weights = {});
LossBreakdown breakdown(double l_f, double l_v, double l_d, const LossWeights& weights = {});

// Network-level forms (float32, eval mode).

/// KL(softmax(F(x)) || softmax(F(x_stamped))) averaged over the batch.
double loss_f(const NetworkParams& classifier, const ImageBatch& clean, const ImageBatch& stamped,
              LfMode mode = LfMode::kl);
/// Mean ||V(w'_i) - w||^2 / (4HW).
double loss_v(const NetworkParams& autoencoder, const Watermark& original,
              std::span<const Watermark> synthesized);
std::pair<double, double> loss_d(const NetworkParams& discriminator, const ImageBatch& static_stamped,
                                 const ImageBatch& learned_stamped);

}  // namespace deepstamp::training

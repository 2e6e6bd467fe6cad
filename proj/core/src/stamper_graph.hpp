#pragma once

// Forward/backward of the stamper objective, shared by training (float) and
// gradient checking (double).

#include <algorithm>
#include <span>
#include <vector>

#include "deepstamp/losses.hpp"
#include "deepstamp/nets.hpp"

namespace deepstamp::training::detail {

/// Composites images [N,3,H,W] with per-image watermarks [N,4,H,W].
template <typename T>
Tensor<T> composite(const Tensor<T>& images, const Tensor<T>& marks, T blend) {
  const std::size_t n = images.dim(0), plane = images.dim(2) * images.dim(3);
  Tensor<T> out(images.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T* x = images.data() + i * 3 * plane;
    const T* m = marks.data() + i * 4 * plane;
    T* o = out.data() + i * 3 * plane;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const T k = blend * m[3 * plane + p];
        o[c * plane + p] = std::clamp((T(1) - k) * x[c * plane + p] + k * m[c * plane + p], T(0), T(1));
      }
    }
  }
  return out;
}

/// Same watermark [4,H,W] on every image.
template <typename T>
Tensor<T> composite_static(const Tensor<T>& images, const Tensor<T>& mark, T blend) {
  const std::size_t n = images.dim(0);
  Tensor<T> marks({n, 4, images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < n; ++i) std::copy(mark.data(), mark.data() + mark.size(), marks.data() + i * mark.size());
  return composite(images, marks, blend);
}

/// d composite / d marks, given d loss / d composite. The clamp is inactive
/// for in-range inputs and is treated as identity.
template <typename T>
Tensor<T> composite_backward(const Tensor<T>& grad_out, const Tensor<T>& images,
                             const Tensor<T>& marks, T blend) {
  const std::size_t n = images.dim(0), plane = images.dim(2) * images.dim(3);
  Tensor<T> grad(marks.shape(), T(0));
  for (std::size_t i = 0; i < n; ++i) {
    const T* x = images.data() + i * 3 * plane;
    const T* m = marks.data() + i * 4 * plane;
    const T* g = grad_out.data() + i * 3 * plane;
    T* gm = grad.data() + i * 4 * plane;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t p = 0; p < plane; ++p) {
        const T a = m[3 * plane + p];
        const T gv = g[c * plane + p];
        gm[c * plane + p] += blend * a * gv;
        gm[3 * plane + p] += blend * (m[c * plane + p] - x[c * plane + p]) * gv;
      }
    }
  }
  return grad;
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& v) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

template <typename T>
Tensor<T> scaled(Tensor<T> v, T s) {
  for (auto& e : v.values()) e *= s;
  return v;
}

template <typename T>
struct GeneratorTerms {
  T l_f{};
  T l_v{};
  T l_d{};          // aggregated generator-side BCE
  T objective{};    // weighted sum
  std::vector<T> g_losses;
  T acc_clean{};    // classifier agreement with labels, filled when labels given
  T acc_stamped{};
};

struct GeneratorSwitches {
  bool task = true;
  bool visual = true;
  bool adversarial = true;
  bool gradients = true;  // false: loss values only, no backward passes
};

/// Runs W -> stamp -> {F, V, D_j}, returns loss terms, and accumulates
/// gradients: W always; V when grad_v; D_j when grad_d is non-null.
template <typename T>
GeneratorTerms<T> generator_pass(nets::Network<T>& w_net, nets::Network<T>& v_net,
                                 std::span<nets::Network<T>*> d_nets, const nets::Network<T>& f_net,
                                 const Tensor<T>& images, const Tensor<T>& mark, T blend,
                                 const LossWeights& weights, LfMode lf_mode, double temperature,
                                 const GeneratorSwitches& terms, nets::Gradients<T>& grad_w,
                                 nets::Gradients<T>* grad_v,
                                 std::vector<nets::Gradients<T>>* grad_d,
                                 std::span<const int> labels = {}) {
  const std::size_t n = images.dim(0), h = images.dim(2), wd = images.dim(3), plane = h * wd;
  Tensor<T> input({n, 7, h, wd});
  for (std::size_t i = 0; i < n; ++i) {
    T* dst = input.data() + i * 7 * plane;
    std::copy(images.data() + i * 3 * plane, images.data() + (i + 1) * 3 * plane, dst);
    std::copy(mark.data(), mark.data() + 4 * plane, dst + 3 * plane);
  }
  nets::Tape<T> w_tape;
  const Tensor<T> marks = w_net.forward(input, nets::Mode::train, &w_tape);
  const Tensor<T> stamped = composite(images, marks, blend);

  GeneratorTerms<T> out;
  Tensor<T> grad_stamped(stamped.shape(), T(0));
  Tensor<T> grad_marks(marks.shape(), T(0));

  if (terms.task) {
    const Tensor<T> ref = f_net.infer(images);
    nets::Tape<T> f_tape;
    const Tensor<T> logits = f_net.infer(stamped, &f_tape);
    const auto lf = lf_mode == LfMode::kl ? kl_to_reference(ref, logits) : hard_label_agreement(ref, logits);
    out.l_f = lf.value;
    if (!labels.empty()) {
      const std::size_t k = logits.dim(1);
      std::size_t ok_clean = 0, ok_stamped = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto best = [&](const Tensor<T>& z) {
          return static_cast<int>(std::max_element(z.data() + i * k, z.data() + (i + 1) * k) - (z.data() + i * k));
        };
        ok_clean += best(ref) == labels[i];
        ok_stamped += best(logits) == labels[i];
      }
      out.acc_clean = T(100) * static_cast<T>(ok_clean) / static_cast<T>(n);
      out.acc_stamped = T(100) * static_cast<T>(ok_stamped) / static_cast<T>(n);
    }
    if (terms.gradients && weights.task != 0.0) {
      auto scratch = f_net.zero_grads();
      add_into(grad_stamped, f_net.backward(f_tape, scaled(lf.grad, static_cast<T>(weights.task)), scratch));
    }
  }

  if (terms.adversarial && !d_nets.empty()) {
    std::vector<nets::Tape<T>> tapes(d_nets.size());
    std::vector<Tensor<T>> gen_grads;
    out.g_losses.resize(d_nets.size());
    for (std::size_t j = 0; j < d_nets.size(); ++j) {
      const Tensor<T> fake = d_nets[j]->forward(stamped, nets::Mode::train, &tapes[j]);
      const auto adv = adversarial_losses(fake, fake);
      out.g_losses[j] = adv.g_loss;
      gen_grads.push_back(adv.g_grad_fake);
    }
    const auto agg = gman_aggregate<T>(out.g_losses, temperature);
    out.l_d = agg.value;
    if (terms.gradients && weights.discriminator != 0.0) {
      for (std::size_t j = 0; j < d_nets.size(); ++j) {
        const T s = static_cast<T>(weights.discriminator) * agg.weights[j];
        auto scratch = d_nets[j]->zero_grads();
        auto& sink = grad_d ? (*grad_d)[j] : scratch;
        add_into(grad_stamped, d_nets[j]->backward(tapes[j], scaled(gen_grads[j], s), sink));
      }
    }
  }

  if (terms.visual) {
    nets::Tape<T> v_tape;
    const Tensor<T> recon = v_net.forward(marks, nets::Mode::train, &v_tape);
    const auto lv = reconstruction_l2(recon, mark);
    out.l_v = lv.value;
    if (terms.gradients && weights.visual != 0.0) {
      auto scratch = v_net.zero_grads();
      auto& sink = grad_v ? *grad_v : scratch;
      add_into(grad_marks, v_net.backward(v_tape, scaled(lv.grad, static_cast<T>(weights.visual)), sink));
    }
  }

  out.objective = static_cast<T>(weights.task) * out.l_f + static_cast<T>(weights.visual) * out.l_v +
                  static_cast<T>(weights.discriminator) * out.l_d;

  if (!terms.gradients) return out;
  add_into(grad_marks, composite_backward(grad_stamped, images, marks, blend));
  w_net.backward(w_tape, grad_marks, grad_w, false);
  return out;
}

template <typename T>
struct DiscriminatorTerms {
  T d_loss{};
  T g_loss{};
};

/// One discriminator's d_loss on (real, fake); accumulates its parameter gradients.
template <typename T>
DiscriminatorTerms<T> discriminator_pass(nets::Network<T>& d_net, const Tensor<T>& real,
                                         const Tensor<T>& fake, nets::Gradients<T>& grads) {
  nets::Tape<T> real_tape, fake_tape;
  const Tensor<T> r = d_net.forward(real, nets::Mode::train, &real_tape);
  const Tensor<T> f = d_net.forward(fake, nets::Mode::train, &fake_tape);
  const auto adv = adversarial_losses(r, f);
  d_net.backward(real_tape, adv.d_grad_real, grads, false);
  d_net.backward(fake_tape, adv.d_grad_fake, grads, false);
  return {adv.d_loss, adv.g_loss};
}

}  // namespace deepstamp::training::detail

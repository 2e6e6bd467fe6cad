#include "deepstamp/optim.hpp"

#include <cmath>

namespace deepstamp::training {

const char* to_string(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::adam ? "adam" : "sgd-momentum";
}

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adam") return OptimizerKind::adam;
  if (name == "sgd-momentum" || name == "sgd") return OptimizerKind::sgd_momentum;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

Optimizer::Optimizer(OptimizerConfig config, const nets::Network<float>& network)
    : config_(config) {
  if (!(config_.lr >= 0.0) || !std::isfinite(config_.lr)) throw ConfigError("learning rate must be >= 0");
  for (const auto& p : network.params()) {
    first_.emplace_back(p.trainable ? p.value.size() : 0, 0.0f);
    second_.emplace_back(p.trainable && config_.kind == OptimizerKind::adam ? p.value.size() : 0, 0.0f);
  }
}

void Optimizer::step(nets::Network<float>& network, const nets::Gradients<float>& grads) {
  auto& params = network.params();
  if (grads.size() != params.size() || first_.size() != params.size()) {
    throw DimensionError("optimizer state does not match network");
  }
  ++steps_;
  const float lr = static_cast<float>(config_.lr);
  if (config_.kind == OptimizerKind::sgd_momentum) {
    const float mu = static_cast<float>(config_.momentum);
    const float wd = static_cast<float>(config_.weight_decay);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!params[i].trainable) continue;
      float* w = params[i].value.data();
      const float* g = grads[i].data();
      auto& v = first_[i];
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = mu * v[k] + (g[k] + wd * w[k]);
        w[k] -= lr * v[k];
      }
    }
    return;
  }
  const double b1 = config_.beta1, b2 = config_.beta2;
  const float c1 = static_cast<float>(1.0 - std::pow(b1, static_cast<double>(steps_)));
  const float c2 = static_cast<float>(1.0 - std::pow(b2, static_cast<double>(steps_)));
  const float fb1 = static_cast<float>(b1), fb2 = static_cast<float>(b2);
  const float eps = static_cast<float>(config_.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    float* w = params[i].value.data();
    const float* g = grads[i].data();
    auto& m = first_[i];
    auto& s = second_[i];
    for (std::size_t k = 0; k < m.size(); ++k) {
      m[k] = fb1 * m[k] + (1.0f - fb1) * g[k];
      s[k] = fb2 * s[k] + (1.0f - fb2) * g[k] * g[k];
      const float mhat = m[k] / c1;
      const float shat = s[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(shat) + eps);
    }
  }
}

}  // namespace deepstamp::training

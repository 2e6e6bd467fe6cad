#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "deepstamp/nets.hpp"

namespace deepstamp::training {

enum class OptimizerKind { sgd_momentum, adam };

const char* to_string(OptimizerKind kind) noexcept;
OptimizerKind parse_optimizer(std::string_view name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 2e-4;
  double momentum = 0.9;       // sgd
  double weight_decay = 0.0;   // sgd (L2 added to the gradient)
  double beta1 = 0.5;          // adam
  double beta2 = 0.999;        // adam
  double epsilon = 1e-8;       // adam

  static OptimizerConfig adam_default() { return {}; }
  static OptimizerConfig sgd_default() {
    return {OptimizerKind::sgd_momentum, 0.01, 0.9, 5e-4, 0.5, 0.999, 1e-8};
  }
};

/// Owns per-parameter state for one network; non-trainable entries are skipped.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, const nets::Network<float>& network);

  /// Applies one update using `grads` (same layout as network.zero_grads()).
  void step(nets::Network<float>& network, const nets::Gradients<float>& grads);

  const OptimizerConfig& config() const noexcept { return config_; }
  std::uint64_t steps() const noexcept { return steps_; }

 private:
  OptimizerConfig config_;
  std::vector<std::vector<float>> first_;
  std::vector<std::vector<float>> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace deepstamp::training

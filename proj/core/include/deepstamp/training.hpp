#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deepstamp/dataio.hpp"
#include "deepstamp/losses.hpp"
#include "deepstamp/nets.hpp"
#include "deepstamp/optim.hpp"

namespace deepstamp::training {

/// One logged point. Fields that do not apply to a phase stay empty.
struct ReportRow {
  std::uint64_t step = 0;
  std::optional<double> l_f, l_v, l_d, l_tot, d_loss;
  std::optional<double> acc_clean, acc_stamped, train_acc;
};

/// Per-step or per-epoch metrics of one training phase.
struct RunReport {
  std::string phase;
  std::string config_json;  // fully resolved config echoed into the JSON mirror
  std::vector<ReportRow> rows;

  /// Columns: step,l_f,l_v,l_d,l_tot,d_loss,acc_clean,acc_stamped,train_acc
  std::string to_csv() const;
  std::string to_json() const;
  /// Writes <stem>.csv and <stem>.json.
  void write(const std::filesystem::path& stem) const;
};

inline constexpr const char* kReportCsvHeader =
    "step,l_f,l_v,l_d,l_tot,d_loss,acc_clean,acc_stamped,train_acc";

/// Thrown when a loss turns non-finite; carries the last finite parameters.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& message, NetworkParams last_good)
      : NumericalError(message), last_good_(std::move(last_good)) {}
  const NetworkParams& last_good() const noexcept { return last_good_; }

 private:
  NetworkParams last_good_;
};

struct ClassifierTrainConfig {
  std::string architecture{"F-small"};
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer = OptimizerConfig::sgd_default();
  std::uint64_t seed = 0;
  /// Validation every this many epochs; 0 = final epoch only.
  std::size_t eval_every = 0;
};

struct ClassifierResult {
  NetworkParams params;
  RunReport report;
};

/// Cross-entropy training from a seeded initialization; one report row per
/// epoch (train accuracy always; clean/stamped validation accuracy when given,
/// on the epochs selected by eval_every and always on the last).
ClassifierResult train_classifier(const ImageBatch& train, const ClassifierTrainConfig& config,
                                  const ImageBatch* val_clean = nullptr,
                                  const ImageBatch* val_stamped = nullptr);

/// Same, continuing from existing parameters.
ClassifierResult train_classifier(NetworkParams init, const ImageBatch& train,
                                  const ClassifierTrainConfig& config,
                                  const ImageBatch* val_clean = nullptr,
                                  const ImageBatch* val_stamped = nullptr);

/// Top-1 accuracy in percent; ties resolve to the lowest class index.
double accuracy(const NetworkParams& classifier, const ImageBatch& batch);
std::vector<int> predict(const NetworkParams& classifier, const ImageBatch& batch);

struct StamperTrainConfig {
  std::size_t steps = 300;
  std::size_t batch_size = 16;
  OptimizerConfig optimizer = OptimizerConfig::adam_default();
  std::optional<double> lr_watermarker;    // overrides optimizer.lr for W and V
  std::optional<double> lr_discriminator;  // overrides optimizer.lr for the D_j
  double blend = 0.5;
  std::size_t n_discriminators = 1;
  double gman_temperature = 1.0;
  LossWeights weights;
  LfMode lf_mode = LfMode::kl;
  std::string discriminator_architecture{"D"};
  std::string autoencoder_architecture{"V"};
  std::uint64_t seed = 0;
  std::size_t eval_every = 50;

  void validate() const;
};

struct StamperNets {
  NetworkParams watermarker;
  NetworkParams autoencoder;
  std::vector<NetworkParams> discriminators;
};

/// Seeded initialization of W, V and every D_j.
StamperNets init_stamper(const StamperTrainConfig& config);

struct StamperResult {
  StamperNets nets;
  RunReport report;
};

using StamperCheckpointFn = std::function<void(std::uint64_t step, const StamperNets&)>;

/// Alternating updates: each D_j steps on its d_loss, then W and V take one
/// joint step on the weighted sum of l_f, l_v and the aggregated g_loss. The
/// classifier is only read.
StamperResult train_stamper(StamperNets init, const NetworkParams& classifier,
                            const ImageBatch& data, const Watermark& watermark,
                            const StamperTrainConfig& config,
                            const StamperCheckpointFn& on_checkpoint = {});

enum class LossPath { task, visual, discriminator, generator, total, classifier };

const char* to_string(LossPath path) noexcept;
LossPath parse_loss_path(std::string_view name);

struct GradCheckOptions {
  std::size_t batch = 1;
  double step = 1e-5;
  std::size_t samples_per_tensor = 6;
  double blend = 0.5;
};

struct TensorCheck {
  std::string network;
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t kinks = 0;       // draws replaced because a step crossed a ReLU/max-pool kink
  std::size_t unresolved = 0;  // significant components below the loss's rounding noise
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  double noise = 0.0;  // estimated rounding error of one central difference
  std::vector<TensorCheck> tensors;
};

/// Float64 comparison of analytic gradients against central differences for
/// every parameter tensor on the selected loss path. `arch_id` picks the
/// path's subject network (task/classifier: F, visual: V, discriminator and
/// generator: D, total: W).
GradCheckResult grad_check(std::string_view arch_id, LossPath path, std::uint64_t seed,
                           const GradCheckOptions& options = {});

}  // namespace deepstamp::training

#include "deepstamp/training.hpp"

#include <cmath>
#include <numeric>

#include "deepstamp/rng.hpp"
#include "deepstamp/stamping.hpp"
#include "stamper_graph.hpp"

namespace deepstamp::training {

namespace {

constexpr std::size_t kEvalChunk = 500;

std::size_t argmax_row(const float* z, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (z[j] > z[best]) best = j;
  }
  return best;
}

/// Seeded epoch-wise iteration order over [0, n).
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
      : order_(n), batch_(std::min(batch, n)), seed_(seed) {
    reshuffle();
  }

  std::vector<std::size_t> next() {
    if (cursor_ + batch_ > order_.size()) {
      ++epoch_;
      reshuffle();
    }
    std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
    cursor_ += batch_;
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    Rng rng(derive_seed(seed_, epoch_));
    rng.shuffle(order_.begin(), order_.end());
    cursor_ = 0;
  }

  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
};

void check_finite(double v, const char* what, std::uint64_t step) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string(what) + " became non-finite at step " + std::to_string(step));
  }
}

}  // namespace

std::vector<int> predict(const NetworkParams& classifier, const ImageBatch& batch) {
  if (batch.size() == 0) throw DimensionError("cannot evaluate an empty batch");
  const nets::Network<float> f(classifier);
  std::vector<int> out(batch.size());
  for (std::size_t first = 0; first < batch.size(); first += kEvalChunk) {
    const std::size_t last = std::min(batch.size(), first + kEvalChunk);
    const auto logits = f.infer(batch.slice(first, last).data);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = first; i < last; ++i) {
      out[i] = static_cast<int>(argmax_row(logits.data() + (i - first) * k, k));
    }
  }
  return out;
}

double accuracy(const NetworkParams& classifier, const ImageBatch& batch) {
  const auto pred = predict(classifier, batch);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == batch.labels[i];
  return 100.0 * static_cast<double>(ok) / static_cast<double>(pred.size());
}

ClassifierResult train_classifier(const ImageBatch& train, const ClassifierTrainConfig& config,
                                  const ImageBatch* val_clean, const ImageBatch* val_stamped) {
  return train_classifier(nets::build(config.architecture, derive_seed(config.seed, "init")), train,
                          config, val_clean, val_stamped);
}

ClassifierResult train_classifier(NetworkParams init, const ImageBatch& train,
                                  const ClassifierTrainConfig& config, const ImageBatch* val_clean,
                                  const ImageBatch* val_stamped) {
  if (train.size() == 0) throw DimensionError("training set is empty");
  if (config.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  nets::Network<float> net(init);
  Optimizer opt(config.optimizer, net);
  const std::uint64_t seed = init.metadata.seed;
  ClassifierResult result;
  result.report.phase = "classifier";
  result.params = net.to_params(seed, 0);

  const std::size_t steps_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(derive_seed(config.seed, "shuffle"), epoch));
    rng.shuffle(order.begin(), order.end());

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      const std::size_t first = b * config.batch_size;
      const std::size_t last = std::min(train.size(), first + config.batch_size);
      const std::span<const std::size_t> idx(order.data() + first, last - first);
      const ImageBatch batch = train.select(idx);

      nets::Tape<float> tape;
      const auto logits = net.forward(batch.data, nets::Mode::train, &tape);
      const auto ce = cross_entropy(logits, std::span<const int>(batch.labels));
      ++step;
      if (!std::isfinite(ce.value)) {
        throw DivergenceError("classifier loss became non-finite at step " + std::to_string(step),
                              result.params);
      }
      loss_sum += static_cast<double>(ce.value) * static_cast<double>(idx.size());
      const std::size_t k = logits.dim(1);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        correct += static_cast<int>(argmax_row(logits.data() + i * k, k)) == batch.labels[i];
      }
      auto grads = net.zero_grads();
      net.backward(tape, ce.grad, grads, false);
      opt.step(net, grads);
    }

    ReportRow row;
    row.step = step;
    row.l_tot = loss_sum / static_cast<double>(train.size());
    row.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(train.size());
    result.params = net.to_params(seed, step);
    const bool last = epoch + 1 == config.epochs;
    const bool eval = last || (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0);
    if (eval && val_clean) row.acc_clean = accuracy(result.params, *val_clean);
    if (eval && val_stamped) row.acc_stamped = accuracy(result.params, *val_stamped);
    result.report.rows.push_back(row);
  }
  result.params = net.to_params(seed, step);
  return result;
}

void StamperTrainConfig::validate() const {
  if (n_discriminators == 0) throw ConfigError("n_discriminators must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (lr_watermarker && !(*lr_watermarker >= 0.0)) throw ConfigError("lr_watermarker must be >= 0");
  if (lr_discriminator && !(*lr_discriminator >= 0.0)) throw ConfigError("lr_discriminator must be >= 0");
  if (!(blend >= 0.0 && blend <= 1.0)) throw ConfigError("blend must lie in [0,1]");
  if (!(gman_temperature > 0.0)) throw ConfigError("gman_temperature must be > 0");
}

StamperNets init_stamper(const StamperTrainConfig& config) {
  config.validate();
  StamperNets nets;
  nets.watermarker = nets::build(nets::arch_id::watermarker, derive_seed(config.seed, "W"));
  nets.autoencoder = nets::build(config.autoencoder_architecture, derive_seed(config.seed, "V"));
  for (std::size_t j = 0; j < config.n_discriminators; ++j) {
    nets.discriminators.push_back(nets::build(
        config.discriminator_architecture, derive_seed(config.seed, "D" + std::to_string(j))));
  }
  return nets;
}

StamperResult train_stamper(StamperNets init, const NetworkParams& classifier,
                            const ImageBatch& data, const Watermark& watermark,
                            const StamperTrainConfig& config,
                            const StamperCheckpointFn& on_checkpoint) {
  config.validate();
  if (init.discriminators.size() != config.n_discriminators) {
    throw ConfigError("config asks for " + std::to_string(config.n_discriminators) +
                      " discriminators but " + std::to_string(init.discriminators.size()) +
                      " were given");
  }
  if (data.size() == 0) throw DimensionError("stamper training data is empty");
  watermark.validate();
  if (watermark.height() != data.height() || watermark.width() != data.width()) {
    throw DimensionError("watermark size does not match images");
  }

  nets::Network<float> w_net(init.watermarker);
  nets::Network<float> v_net(init.autoencoder);
  const nets::Network<float> f_net(classifier);
  std::vector<nets::Network<float>> d_nets;
  for (const auto& d : init.discriminators) d_nets.emplace_back(d);
  std::vector<nets::Network<float>*> d_ptrs;
  for (auto& d : d_nets) d_ptrs.push_back(&d);

  OptimizerConfig gen_cfg = config.optimizer;
  if (config.lr_watermarker) gen_cfg.lr = *config.lr_watermarker;
  OptimizerConfig disc_cfg = config.optimizer;
  if (config.lr_discriminator) disc_cfg.lr = *config.lr_discriminator;
  Optimizer w_opt(gen_cfg, w_net);
  Optimizer v_opt(gen_cfg, v_net);
  std::vector<Optimizer> d_opts;
  for (const auto& d : d_nets) d_opts.emplace_back(disc_cfg, d);

  const Tensor<float> mark = watermark.to_tensor();
  const float blend = static_cast<float>(config.blend);
  BatchSampler sampler(data.size(), config.batch_size, derive_seed(config.seed, "batches"));

  auto snapshot = [&](std::uint64_t step) {
    StamperNets out;
    out.watermarker = w_net.to_params(init.watermarker.metadata.seed, step);
    out.autoencoder = v_net.to_params(init.autoencoder.metadata.seed, step);
    for (std::size_t j = 0; j < d_nets.size(); ++j) {
      out.discriminators.push_back(d_nets[j].to_params(init.discriminators[j].metadata.seed, step));
    }
    return out;
  };

  StamperResult result;
  result.report.phase = "stamper";
  for (std::uint64_t step = 1; step <= config.steps; ++step) {
    const auto idx = sampler.next();
    const ImageBatch batch = data.select(idx);
    const Tensor<float>& images = batch.data;

    // Discriminator updates on x_w (real) vs x'_w (fake, W held fixed).
    const Tensor<float> real = detail::composite_static(images, mark, blend);
    const Tensor<float> marks = w_net.forward(nets::watermarker_input<float>(batch, watermark),
                                              nets::Mode::train);
    const Tensor<float> fake = detail::composite(images, marks, blend);
    double d_loss = 0.0;
    for (std::size_t j = 0; j < d_nets.size(); ++j) {
      auto grads = d_nets[j].zero_grads();
      d_loss += detail::discriminator_pass(d_nets[j], real, fake, grads).d_loss;
      d_opts[j].step(d_nets[j], grads);
    }
    d_loss /= static_cast<double>(d_nets.size());
    check_finite(d_loss, "discriminator loss", step);

    // Joint W/V update.
    auto grad_w = w_net.zero_grads();
    auto grad_v = v_net.zero_grads();
    const auto terms = detail::generator_pass<float>(
        w_net, v_net, d_ptrs, f_net, images, mark, blend, config.weights, config.lf_mode,
        config.gman_temperature, {}, grad_w, &grad_v, nullptr, batch.labels);
    const auto losses = breakdown(terms.l_f, terms.l_v, terms.l_d, config.weights);
    w_opt.step(w_net, grad_w);
    v_opt.step(v_net, grad_v);

    const bool log_now = step == 1 || step == config.steps ||
                         (config.eval_every > 0 && step % config.eval_every == 0);
    if (log_now) {
      ReportRow row;
      row.step = step;
      row.l_f = losses.l_f;
      row.l_v = losses.l_v;
      row.l_d = losses.l_d;
      row.l_tot = losses.l_tot;
      row.d_loss = d_loss;
      row.acc_clean = terms.acc_clean;
      row.acc_stamped = terms.acc_stamped;
      result.report.rows.push_back(row);
    }
    if (on_checkpoint && config.eval_every > 0 && step % config.eval_every == 0) {
      on_checkpoint(step, snapshot(step));
    }
  }
  result.nets = snapshot(config.steps);
  return result;
}

const char* to_string(LossPath path) noexcept {
  switch (path) {
    case LossPath::task: return "l_f";
    case LossPath::visual: return "l_v";
    case LossPath::discriminator: return "d_loss";
    case LossPath::generator: return "g_loss";
    case LossPath::total: return "total";
    case LossPath::classifier: return "ce";
  }
  return "unknown";
}

LossPath parse_loss_path(std::string_view name) {
  for (auto p : {LossPath::task, LossPath::visual, LossPath::discriminator, LossPath::generator,
                 LossPath::total, LossPath::classifier}) {
    if (name == to_string(p)) return p;
  }
  throw ConfigError("unknown loss path '" + std::string(name) + "'");
}

}  // namespace deepstamp::training

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "deepstamp/dataio.hpp"
#include "deepstamp/tensor.hpp"

namespace deepstamp::nets {

enum class LayerKind {
  conv,
  transposed_conv,
  dense,
  relu,
  leaky_relu,
  sigmoid,
  tanh,
  batchnorm,
  maxpool,
  global_avg_pool,
  flatten,
};

const char* to_string(LayerKind kind) noexcept;

/// One layer. Unused geometry fields stay zero. For dense layers the channel
/// fields hold feature counts; for batchnorm in_channels is the channel count;
/// for maxpool `kernel` is the window and `stride` the step.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t output_padding = 0;
  double negative_slope = 0.2;
};

LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
               std::size_t padding = 0);
LayerSpec transposed_conv(std::size_t in, std::size_t out, std::size_t kernel,
                          std::size_t stride = 1, std::size_t padding = 0,
                          std::size_t output_padding = 0);
LayerSpec dense(std::size_t in, std::size_t out);
LayerSpec batchnorm(std::size_t channels);
LayerSpec maxpool(std::size_t window);
LayerSpec activation(LayerKind kind);
LayerSpec leaky_relu(double slope = 0.2);

/// Per-sample input shape plus an ordered layer list.
struct ArchitectureSpec {
  std::string id;
  Shape input;
  std::vector<LayerSpec> layers;
  Shape output;  // filled by finalize()
};

/// Per-sample shapes before each layer and after the last; throws
/// DimensionError naming the first layer whose input does not fit.
std::vector<Shape> infer_shapes(const ArchitectureSpec& arch);

/// Validates shape algebra and fills `output`.
ArchitectureSpec finalize(ArchitectureSpec arch);

namespace arch_id {
inline constexpr std::string_view watermarker = "W";
inline constexpr std::string_view autoencoder = "V";
inline constexpr std::string_view discriminator = "D";
inline constexpr std::string_view discriminator_transposed = "D-transposed";
inline constexpr std::string_view classifier_small = "F-small";
inline constexpr std::string_view classifier_alexnet = "F-alexnet";
inline constexpr std::string_view classifier_vgg16 = "F-vgg16";
inline constexpr std::string_view classifier_resnet50 = "F-resnet50";
inline constexpr std::string_view identity4 = "identity";
}  // namespace arch_id

/// Built-in architectures. Throws ConfigError for unknown ids and
/// UnsupportedError for ids accepted by config but not buildable here.
ArchitectureSpec architecture(std::string_view id);
bool is_known_architecture(std::string_view id);
std::vector<std::string> known_architectures();

/// Deterministic initialization: conv/dense weights ~ U(-sqrt(1/fan_in), sqrt(1/fan_in)),
/// biases 0, batchnorm gamma 1 / beta 0 / running mean 0 / running var 1.
NetworkParams build(const ArchitectureSpec& arch, std::uint64_t seed);
NetworkParams build(std::string_view id, std::uint64_t seed);

enum class Mode { train, eval };

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

template <typename T>
struct LayerCache {
  Tensor<T> input;
  std::vector<T> saved;              // batchnorm: normalized input
  std::vector<T> inv_std;            // batchnorm: per-channel 1/sqrt(var+eps)
  std::vector<std::uint32_t> argmax; // maxpool: flat input index per output
};

/// Activations recorded by a forward pass for the matching backward pass.
template <typename T>
struct Tape {
  Mode mode = Mode::eval;
  std::size_t batch = 0;
  std::vector<LayerCache<T>> layers;
};

template <typename T>
using Gradients = std::vector<Tensor<T>>;

/// While alive, folds every piecewise-linear decision made by forward passes
/// on this thread (ReLU side, max-pool winner) into a digest. Two evaluations
/// with equal digests lie on the same linear piece, which is what a central
/// difference needs. Probes do not nest.
class BranchProbe {
 public:
  BranchProbe();
  ~BranchProbe();
  BranchProbe(const BranchProbe&) = delete;
  BranchProbe& operator=(const BranchProbe&) = delete;

  void reset() noexcept { digest_ = 0; }
  std::uint64_t digest() const noexcept { return digest_; }
  void fold(std::uint64_t word) noexcept;

  static BranchProbe* active() noexcept;

 private:
  std::uint64_t digest_ = 0;
};

/// Executable network over scalar type T (float for training, double for gradient checks).
template <typename T>
class Network {
 public:
  Network(ArchitectureSpec arch, const NetworkParams& params);
  explicit Network(const NetworkParams& params);  // architecture from metadata

  const ArchitectureSpec& architecture() const noexcept { return arch_; }
  std::vector<Param<T>>& params() noexcept { return params_; }
  const std::vector<Param<T>>& params() const noexcept { return params_; }

  /// input is [N, ...arch.input]. Train mode uses batch statistics and, when
  /// `update_stats` is set, advances batchnorm running statistics.
  Tensor<T> forward(const Tensor<T>& input, Mode mode, Tape<T>* tape = nullptr,
                    bool update_stats = true);
  /// Eval-mode forward; pure. The tape, when given, allows a backward pass
  /// (e.g. input gradients through a frozen network).
  Tensor<T> infer(const Tensor<T>& input, Tape<T>* tape = nullptr) const;

  /// Accumulates parameter gradients into `grads` (see zero_grads) and
  /// returns the gradient w.r.t. the input unless need_input_grad is false.
  Tensor<T> backward(const Tape<T>& tape, const Tensor<T>& grad_output, Gradients<T>& grads,
                     bool need_input_grad = true) const;

  Gradients<T> zero_grads() const;

  NetworkParams to_params(std::uint64_t seed, std::uint64_t step) const;
  void load(const NetworkParams& params);

 private:
  Tensor<T> run(const Tensor<T>& input, Mode mode, Tape<T>* tape, bool update_stats);

  struct Slot {
    int weight = -1;  // index into params_, or -1
    int bias = -1;
    int running_mean = -1;
    int running_var = -1;
  };

  ArchitectureSpec arch_;
  std::vector<Shape> shapes_;
  std::vector<Slot> slots_;
  std::vector<Param<T>> params_;
};

extern template class Network<float>;
extern template class Network<double>;

/// Concatenates images with the watermark into the [N,7,H,W] watermarker input.
template <typename T>
Tensor<T> watermarker_input(const ImageBatch& x, const Watermark& w);

/// Splits [N,4,H,W] network output into per-image watermarks.
std::vector<Watermark> split_watermarks(const Tensor<float>& rgba);

/// One synthesized watermark per image (eval mode).
std::vector<Watermark> synthesize(const NetworkParams& watermarker, const ImageBatch& x,
                                  const Watermark& w);

}  // namespace deepstamp::nets

#include "deepstamp/nets.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "deepstamp/rng.hpp"
#include "layers.hpp"

namespace deepstamp::nets {

namespace {

thread_local BranchProbe* t_probe = nullptr;

template <typename T>
void fold_signs(BranchProbe& probe, const Tensor<T>& x) {
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    word = (word << 1) | (x[i] > T(0) ? 1u : 0u);
    if (i % 64 == 63) {
      probe.fold(word);
      word = 0;
    }
  }
  probe.fold(word);
}

}  // namespace

BranchProbe::BranchProbe() {
  if (t_probe) throw ConfigError("branch probes do not nest");
  t_probe = this;
}

BranchProbe::~BranchProbe() { t_probe = nullptr; }

void BranchProbe::fold(std::uint64_t word) noexcept { digest_ = mix64(digest_ ^ word) + 0x9e37; }

BranchProbe* BranchProbe::active() noexcept { return t_probe; }


const char* to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::transposed_conv: return "transposed-conv";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::leaky_relu: return "leaky-relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::tanh: return "tanh";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::global_avg_pool: return "global-avg-pool";
    case LayerKind::flatten: return "flatten";
  }
  return "unknown";
}

LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
               std::size_t padding) {
  return {LayerKind::conv, in, out, kernel, stride, padding, 0, 0.2};
}

LayerSpec transposed_conv(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t padding, std::size_t output_padding) {
  return {LayerKind::transposed_conv, in, out, kernel, stride, padding, output_padding, 0.2};
}

LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0, 1, 0, 0, 0.2}; }

LayerSpec batchnorm(std::size_t channels) {
  return {LayerKind::batchnorm, channels, channels, 0, 1, 0, 0, 0.2};
}

LayerSpec maxpool(std::size_t window) { return {LayerKind::maxpool, 0, 0, window, window, 0, 0, 0.2}; }

LayerSpec activation(LayerKind kind) { return {kind, 0, 0, 0, 1, 0, 0, 0.2}; }

LayerSpec leaky_relu(double slope) { return {LayerKind::leaky_relu, 0, 0, 0, 1, 0, 0, slope}; }

namespace {

[[noreturn]] void shape_fail(std::size_t index, const LayerSpec& l, const Shape& in,
                             const std::string& why) {
  throw DimensionError("layer " + std::to_string(index) + " (" + to_string(l.kind) +
                       ") cannot take input " + shape_to_string(in) + ": " + why);
}

Shape layer_output(std::size_t index, const LayerSpec& l, const Shape& in) {
  auto need_image = [&] {
    if (in.size() != 3) shape_fail(index, l, in, "expects [C,H,W]");
  };
  switch (l.kind) {
    case LayerKind::conv: {
      need_image();
      if (in[0] != l.in_channels) shape_fail(index, l, in, "expects " + std::to_string(l.in_channels) + " channels");
      if (l.kernel == 0 || l.stride == 0) shape_fail(index, l, in, "zero kernel or stride");
      if (in[1] + 2 * l.padding < l.kernel || in[2] + 2 * l.padding < l.kernel) {
        shape_fail(index, l, in, "kernel larger than padded input");
      }
      return {l.out_channels, (in[1] + 2 * l.padding - l.kernel) / l.stride + 1,
              (in[2] + 2 * l.padding - l.kernel) / l.stride + 1};
    }
    case LayerKind::transposed_conv: {
      need_image();
      if (in[0] != l.in_channels) shape_fail(index, l, in, "expects " + std::to_string(l.in_channels) + " channels");
      if (l.kernel == 0 || l.stride == 0) shape_fail(index, l, in, "zero kernel or stride");
      if (l.output_padding >= l.stride) shape_fail(index, l, in, "output padding must be < stride");
      const auto grow = [&](std::size_t n) -> std::size_t {
        const std::size_t full = (n - 1) * l.stride + l.kernel + l.output_padding;
        if (full <= 2 * l.padding) shape_fail(index, l, in, "padding removes the whole output");
        return full - 2 * l.padding;
      };
      return {l.out_channels, grow(in[1]), grow(in[2])};
    }
    case LayerKind::dense:
      if (in.size() != 1 || in[0] != l.in_channels) {
        shape_fail(index, l, in, "expects [" + std::to_string(l.in_channels) + "]");
      }
      return {l.out_channels};
    case LayerKind::batchnorm:
      if (in.empty() || in[0] != l.in_channels) {
        shape_fail(index, l, in, "expects " + std::to_string(l.in_channels) + " channels");
      }
      return in;
    case LayerKind::maxpool: {
      need_image();
      if (l.kernel == 0 || l.stride == 0 || in[1] < l.kernel || in[2] < l.kernel) {
        shape_fail(index, l, in, "pool window does not fit");
      }
      return {in[0], (in[1] - l.kernel) / l.stride + 1, (in[2] - l.kernel) / l.stride + 1};
    }
    case LayerKind::global_avg_pool:
      need_image();
      return {in[0], 1, 1};
    case LayerKind::flatten:
      return {shape_size(in)};
    case LayerKind::relu:
    case LayerKind::leaky_relu:
    case LayerKind::sigmoid:
    case LayerKind::tanh:
      return in;
  }
  shape_fail(index, l, in, "unknown layer kind");
}

ArchitectureSpec make(std::string id, Shape input, std::vector<LayerSpec> layers) {
  return finalize(ArchitectureSpec{std::move(id), std::move(input), std::move(layers), {}});
}

const LayerSpec kRelu = activation(LayerKind::relu);
const LayerSpec kSigmoid = activation(LayerKind::sigmoid);

ArchitectureSpec vgg16() {
  std::vector<LayerSpec> layers;
  std::size_t in = 3;
  const int plan[] = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};
  for (int v : plan) {
    if (v == 0) {
      layers.push_back(maxpool(2));
      continue;
    }
    const auto out = static_cast<std::size_t>(v);
    layers.insert(layers.end(), {conv(in, out, 3, 1, 1), batchnorm(out), kRelu});
    in = out;
  }
  layers.insert(layers.end(), {activation(LayerKind::flatten), dense(512, 512), kRelu,
                               dense(512, 512), kRelu, dense(512, kNumClasses)});
  return make("F-vgg16", {3, 32, 32}, std::move(layers));
}

}  // namespace

std::vector<Shape> infer_shapes(const ArchitectureSpec& arch) {
  std::vector<Shape> shapes{arch.input};
  shapes.reserve(arch.layers.size() + 1);
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    shapes.push_back(layer_output(i, arch.layers[i], shapes.back()));
  }
  return shapes;
}

ArchitectureSpec finalize(ArchitectureSpec arch) {
  if (arch.input.empty()) throw DimensionError("architecture '" + arch.id + "' has no input shape");
  arch.output = infer_shapes(arch).back();
  return arch;
}

ArchitectureSpec architecture(std::string_view id) {
  const auto leaky = leaky_relu(0.2);
  if (id == arch_id::watermarker) {
    return make("W", {7, 32, 32},
                {conv(7, 32, 3, 1, 1), kRelu, conv(32, 64, 3, 1, 1), kRelu, conv(64, 32, 3, 1, 1),
                 kRelu, conv(32, 4, 3, 1, 1), kSigmoid});
  }
  if (id == arch_id::autoencoder) {
    return make("V", {4, 32, 32},
                {conv(4, 32, 3, 1, 1), kRelu, conv(32, 64, 3, 1, 1), kRelu, conv(64, 64, 3, 1, 1),
                 kRelu, conv(64, 32, 3, 1, 1), kRelu, conv(32, 4, 3, 1, 1), kSigmoid});
  }
  if (id == arch_id::discriminator) {
    return make("D", {3, 32, 32},
                {conv(3, 32, 4, 2, 1), leaky, conv(32, 64, 4, 2, 1), leaky, conv(64, 1, 3, 1, 1),
                 activation(LayerKind::global_avg_pool), activation(LayerKind::flatten)});
  }
  if (id == arch_id::discriminator_transposed) {
    return make("D-transposed", {3, 32, 32},
                {transposed_conv(3, 16, 3, 1, 1), leaky, transposed_conv(16, 32, 3, 1, 1), leaky,
                 transposed_conv(32, 1, 3, 1, 1), activation(LayerKind::global_avg_pool),
                 activation(LayerKind::flatten)});
  }
  if (id == arch_id::classifier_small) {
    return make("F-small", {3, 32, 32},
                {conv(3, 16, 3, 1, 1), kRelu, maxpool(2), conv(16, 32, 3, 1, 1), kRelu, maxpool(2),
                 conv(32, 64, 3, 1, 1), kRelu, maxpool(2), activation(LayerKind::flatten),
                 dense(64 * 4 * 4, kNumClasses)});
  }
  if (id == arch_id::classifier_alexnet) {
    // Five conv layers and three dense layers, narrowed for 32x32 inputs.
    return make("F-alexnet", {3, 32, 32},
                {conv(3, 24, 5, 1, 2), batchnorm(24), kRelu, maxpool(2),
                 conv(24, 48, 5, 1, 2), batchnorm(48), kRelu, maxpool(2),
                 conv(48, 64, 3, 1, 1), batchnorm(64), kRelu,
                 conv(64, 64, 3, 1, 1), batchnorm(64), kRelu,
                 conv(64, 48, 3, 1, 1), batchnorm(48), kRelu, maxpool(2),
                 activation(LayerKind::flatten), dense(48 * 4 * 4, 256), kRelu, dense(256, 128),
                 kRelu, dense(128, kNumClasses)});
  }
  if (id == arch_id::classifier_vgg16) return vgg16();
  if (id == arch_id::classifier_resnet50) {
    throw UnsupportedError("architecture 'F-resnet50' needs residual connections; it is accepted "
                           "in configs but cannot be built by the sequential network runtime");
  }
  if (id == arch_id::identity4) return make("identity", {4, 32, 32}, {});
  throw ConfigError("unknown architecture id '" + std::string(id) + "'");
}

std::vector<std::string> known_architectures() {
  return {"W", "V", "D", "D-transposed", "F-small", "F-alexnet", "F-vgg16", "F-resnet50", "identity"};
}

bool is_known_architecture(std::string_view id) {
  const auto ids = known_architectures();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

namespace {

struct ParamLayout {
  std::string name;
  Shape shape;
  enum class Init { uniform, zero, one } init;
  std::size_t fan_in = 1;
  bool trainable = true;
};

std::vector<ParamLayout> param_layout(const ArchitectureSpec& arch) {
  std::map<std::string, int> counters;
  std::vector<ParamLayout> out;
  for (const auto& l : arch.layers) {
    auto prefix = [&](const std::string& base) {
      return base + std::to_string(++counters[base]);
    };
    const std::size_t k2 = l.kernel * l.kernel;
    switch (l.kind) {
      case LayerKind::conv: {
        const auto p = prefix("conv");
        out.push_back({p + ".w", {l.out_channels, l.in_channels, l.kernel, l.kernel},
                       ParamLayout::Init::uniform, l.in_channels * k2});
        out.push_back({p + ".b", {l.out_channels}, ParamLayout::Init::zero});
        break;
      }
      case LayerKind::transposed_conv: {
        const auto p = prefix("tconv");
        out.push_back({p + ".w", {l.in_channels, l.out_channels, l.kernel, l.kernel},
                       ParamLayout::Init::uniform, l.in_channels * k2});
        out.push_back({p + ".b", {l.out_channels}, ParamLayout::Init::zero});
        break;
      }
      case LayerKind::dense: {
        const auto p = prefix("dense");
        out.push_back({p + ".w", {l.out_channels, l.in_channels}, ParamLayout::Init::uniform,
                       l.in_channels});
        out.push_back({p + ".b", {l.out_channels}, ParamLayout::Init::zero});
        break;
      }
      case LayerKind::batchnorm: {
        const auto p = prefix("bn");
        out.push_back({p + ".gamma", {l.in_channels}, ParamLayout::Init::one});
        out.push_back({p + ".beta", {l.in_channels}, ParamLayout::Init::zero});
        out.push_back({p + ".running_mean", {l.in_channels}, ParamLayout::Init::zero, 1, false});
        out.push_back({p + ".running_var", {l.in_channels}, ParamLayout::Init::one, 1, false});
        break;
      }
      default:
        break;
    }
  }
  return out;
}

}  // namespace

NetworkParams build(const ArchitectureSpec& arch, std::uint64_t seed) {
  const auto checked = finalize(arch);
  NetworkParams params;
  params.metadata = {checked.id, seed, 0};
  const auto layout = param_layout(checked);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& p = layout[i];
    ParamEntry e{p.name, p.shape, std::vector<float>(shape_size(p.shape), 0.0f)};
    switch (p.init) {
      case ParamLayout::Init::uniform: {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        const double bound = std::sqrt(1.0 / static_cast<double>(p.fan_in));
        for (auto& v : e.values) v = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
      case ParamLayout::Init::one:
        std::fill(e.values.begin(), e.values.end(), 1.0f);
        break;
      case ParamLayout::Init::zero:
        break;
    }
    params.entries.push_back(std::move(e));
  }
  return params;
}

NetworkParams build(std::string_view id, std::uint64_t seed) { return build(architecture(id), seed); }

// ---------------------------------------------------------------------------
// Network<T>

namespace {

constexpr double kBatchnormEps = 1e-5;
constexpr double kBatchnormMomentum = 0.1;

template <typename T>
T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

kernels::ConvGeometry geometry(const LayerSpec& l, const Shape& in, const Shape& out) {
  return {in[0], in[1], in[2], out[0], out[1], out[2], l.kernel, l.stride, l.padding};
}

}  // namespace

template <typename T>
Network<T>::Network(ArchitectureSpec arch, const NetworkParams& params)
    : arch_(finalize(std::move(arch))), shapes_(infer_shapes(arch_)) {
  const auto layout = param_layout(arch_);
  params_.reserve(layout.size());
  for (const auto& p : layout) params_.push_back({p.name, Tensor<T>(p.shape), p.trainable});
  slots_.resize(arch_.layers.size());
  int next = 0;
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    switch (arch_.layers[i].kind) {
      case LayerKind::conv:
      case LayerKind::transposed_conv:
      case LayerKind::dense:
        slots_[i].weight = next++;
        slots_[i].bias = next++;
        break;
      case LayerKind::batchnorm:
        slots_[i].weight = next++;
        slots_[i].bias = next++;
        slots_[i].running_mean = next++;
        slots_[i].running_var = next++;
        break;
      default:
        break;
    }
  }
  load(params);
}

template <typename T>
Network<T>::Network(const NetworkParams& params)
    : Network(nets::architecture(params.metadata.architecture), params) {}

template <typename T>
void Network<T>::load(const NetworkParams& params) {
  if (params.entries.size() != params_.size()) {
    throw DimensionError("architecture '" + arch_.id + "' expects " +
                         std::to_string(params_.size()) + " parameter tensors, got " +
                         std::to_string(params.entries.size()));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& e = params.entries[i];
    auto& p = params_[i];
    if (e.name != p.name || e.shape != p.value.shape() || e.values.size() != p.value.size()) {
      throw DimensionError("parameter " + std::to_string(i) + " expected '" + p.name + "' " +
                           shape_to_string(p.value.shape()) + ", got '" + e.name + "' " +
                           shape_to_string(e.shape));
    }
    std::copy(e.values.begin(), e.values.end(), p.value.data());
  }
}

template <typename T>
NetworkParams Network<T>::to_params(std::uint64_t seed, std::uint64_t step) const {
  NetworkParams out;
  out.metadata = {arch_.id, seed, step};
  out.entries.reserve(params_.size());
  for (const auto& p : params_) {
    out.entries.push_back(
        {p.name, p.value.shape(), std::vector<float>(p.value.values().begin(), p.value.values().end())});
  }
  return out;
}

template <typename T>
Gradients<T> Network<T>::zero_grads() const {
  Gradients<T> g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p.value.shape(), T(0));
  return g;
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& input, Mode mode, Tape<T>* tape, bool update_stats) {
  return run(input, mode, tape, update_stats);
}

template <typename T>
Tensor<T> Network<T>::infer(const Tensor<T>& input, Tape<T>* tape) const {
  // Eval mode with update_stats=false never writes to the network.
  return const_cast<Network*>(this)->run(input, Mode::eval, tape, false);
}

template <typename T>
Tensor<T> Network<T>::run(const Tensor<T>& input, Mode mode, Tape<T>* tape, bool update_stats) {
  if (input.rank() != arch_.input.size() + 1 ||
      !std::equal(arch_.input.begin(), arch_.input.end(), input.shape().begin() + 1)) {
    throw DimensionError("network '" + arch_.id + "' layer 0 expects input [N," +
                         shape_to_string(arch_.input).substr(1) + ", got " +
                         shape_to_string(input.shape()));
  }
  const std::size_t n = input.dim(0);
  if (tape) {
    tape->mode = mode;
    tape->batch = n;
    tape->layers.assign(arch_.layers.size(), {});
  }
  Tensor<T> x = input;
  for (std::size_t li = 0; li < arch_.layers.size(); ++li) {
    const LayerSpec& l = arch_.layers[li];
    const Shape& in_shape = shapes_[li];
    const Shape& out_shape = shapes_[li + 1];
    Shape batch_shape{n};
    batch_shape.insert(batch_shape.end(), out_shape.begin(), out_shape.end());
    Tensor<T> y(batch_shape);
    const Slot& s = slots_[li];
    LayerCache<T>* cache = tape ? &tape->layers[li] : nullptr;
    switch (l.kind) {
      case LayerKind::conv:
        kernels::conv_forward(geometry(l, in_shape, out_shape), n, x.data(),
                              params_[s.weight].value.data(), params_[s.bias].value.data(), y.data());
        break;
      case LayerKind::transposed_conv:
        kernels::transposed_conv_forward(geometry(l, in_shape, out_shape), n, x.data(),
                                         params_[s.weight].value.data(),
                                         params_[s.bias].value.data(), y.data());
        break;
      case LayerKind::dense:
        kernels::dense_forward(n, l.in_channels, l.out_channels, x.data(),
                               params_[s.weight].value.data(), params_[s.bias].value.data(), y.data());
        break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
        if (auto* probe = BranchProbe::active()) fold_signs(*probe, x);
        break;
      case LayerKind::leaky_relu: {
        const T slope = static_cast<T>(l.negative_slope);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
        if (auto* probe = BranchProbe::active()) fold_signs(*probe, x);
        break;
      }
      case LayerKind::sigmoid:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
        break;
      case LayerKind::tanh:
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
        break;
      case LayerKind::batchnorm: {
        const std::size_t channels = l.in_channels;
        const std::size_t inner = shape_size(in_shape) / channels;
        const std::size_t count = n * inner;
        const T* gamma = params_[s.weight].value.data();
        const T* beta = params_[s.bias].value.data();
        T* rmean = params_[s.running_mean].value.data();
        T* rvar = params_[s.running_var].value.data();
        std::vector<T> saved(cache ? x.size() : 0);
        std::vector<T> inv_std(channels);
        for (std::size_t c = 0; c < channels; ++c) {
          T mean, var;
          if (mode == Mode::train) {
            T sum = 0;
            for (std::size_t b = 0; b < n; ++b) {
              const T* p = x.data() + (b * channels + c) * inner;
              for (std::size_t q = 0; q < inner; ++q) sum += p[q];
            }
            mean = sum / static_cast<T>(count);
            T sq = 0;
            for (std::size_t b = 0; b < n; ++b) {
              const T* p = x.data() + (b * channels + c) * inner;
              for (std::size_t q = 0; q < inner; ++q) sq += (p[q] - mean) * (p[q] - mean);
            }
            var = sq / static_cast<T>(count);
            if (update_stats) {
              const T m = static_cast<T>(kBatchnormMomentum);
              const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
              rmean[c] = (T(1) - m) * rmean[c] + m * mean;
              rvar[c] = (T(1) - m) * rvar[c] + m * unbiased;
            }
          } else {
            mean = rmean[c];
            var = rvar[c];
          }
          inv_std[c] = T(1) / std::sqrt(var + static_cast<T>(kBatchnormEps));
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * channels + c) * inner;
            for (std::size_t q = 0; q < inner; ++q) {
              const T xhat = (x[off + q] - mean) * inv_std[c];
              if (cache) saved[off + q] = xhat;
              y[off + q] = gamma[c] * xhat + beta[c];
            }
          }
        }
        if (cache) {
          cache->saved = std::move(saved);
          cache->inv_std = std::move(inv_std);
        }
        break;
      }
      case LayerKind::maxpool: {
        std::vector<std::uint32_t> argmax(y.size());
        kernels::maxpool_forward(n, in_shape[0], in_shape[1], in_shape[2], l.kernel, l.stride,
                                 out_shape[1], out_shape[2], x.data(), y.data(), argmax.data());
        if (auto* probe = BranchProbe::active()) {
          for (std::uint32_t a : argmax) probe->fold(a);
        }
        if (cache) cache->argmax = std::move(argmax);
        break;
      }
      case LayerKind::global_avg_pool: {
        const std::size_t plane = in_shape[1] * in_shape[2];
        for (std::size_t nc = 0; nc < n * in_shape[0]; ++nc) {
          T sum = 0;
          for (std::size_t q = 0; q < plane; ++q) sum += x[nc * plane + q];
          y[nc] = sum / static_cast<T>(plane);
        }
        break;
      }
      case LayerKind::flatten:
        std::copy(x.data(), x.data() + x.size(), y.data());
        break;
    }
    if (cache) cache->input = std::move(x);
    x = std::move(y);
  }
  return x;
}

template <typename T>
Tensor<T> Network<T>::backward(const Tape<T>& tape, const Tensor<T>& grad_output, Gradients<T>& grads,
                               bool need_input_grad) const {
  if (tape.layers.size() != arch_.layers.size()) {
    throw DimensionError("tape does not belong to network '" + arch_.id + "'");
  }
  if (grads.size() != params_.size()) throw DimensionError("gradient buffer size mismatch");
  const std::size_t n = tape.batch;
  {
    Shape expected{n};
    expected.insert(expected.end(), arch_.output.begin(), arch_.output.end());
    if (grad_output.shape() != expected) {
      throw DimensionError("network '" + arch_.id + "' output gradient must be " +
                           shape_to_string(expected) + ", got " +
                           shape_to_string(grad_output.shape()));
    }
  }
  Tensor<T> g = grad_output;
  for (std::size_t li = arch_.layers.size(); li-- > 0;) {
    const LayerSpec& l = arch_.layers[li];
    const LayerCache<T>& cache = tape.layers[li];
    const Tensor<T>& x = cache.input;
    const Shape& in_shape = shapes_[li];
    const Shape& out_shape = shapes_[li + 1];
    const Slot& s = slots_[li];
    const bool want_dx = need_input_grad || li > 0;
    Tensor<T> dx(x.shape());
    switch (l.kind) {
      case LayerKind::conv:
        kernels::conv_backward(geometry(l, in_shape, out_shape), n, x.data(),
                               params_[s.weight].value.data(), g.data(), grads[s.weight].data(),
                               grads[s.bias].data(), want_dx ? dx.data() : nullptr);
        break;
      case LayerKind::transposed_conv:
        kernels::transposed_conv_backward(geometry(l, in_shape, out_shape), n, x.data(),
                                          params_[s.weight].value.data(), g.data(),
                                          grads[s.weight].data(), grads[s.bias].data(),
                                          want_dx ? dx.data() : nullptr);
        break;
      case LayerKind::dense:
        kernels::dense_backward(n, l.in_channels, l.out_channels, x.data(),
                                params_[s.weight].value.data(), g.data(), grads[s.weight].data(),
                                grads[s.bias].data(), want_dx ? dx.data() : nullptr);
        break;
      case LayerKind::relu:
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? g[i] : T(0);
        break;
      case LayerKind::leaky_relu: {
        const T slope = static_cast<T>(l.negative_slope);
        for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? g[i] : slope * g[i];
        break;
      }
      case LayerKind::sigmoid:
        for (std::size_t i = 0; i < x.size(); ++i) {
          const T sv = sigmoid(x[i]);
          dx[i] = g[i] * sv * (T(1) - sv);
        }
        break;
      case LayerKind::tanh:
        for (std::size_t i = 0; i < x.size(); ++i) {
          const T t = std::tanh(x[i]);
          dx[i] = g[i] * (T(1) - t * t);
        }
        break;
      case LayerKind::batchnorm: {
        const std::size_t channels = l.in_channels;
        const std::size_t inner = shape_size(in_shape) / channels;
        const T count = static_cast<T>(n * inner);
        const T* gamma = params_[s.weight].value.data();
        T* dgamma = grads[s.weight].data();
        T* dbeta = grads[s.bias].data();
        for (std::size_t c = 0; c < channels; ++c) {
          T sum_g = 0, sum_gx = 0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * channels + c) * inner;
            for (std::size_t q = 0; q < inner; ++q) {
              sum_g += g[off + q];
              sum_gx += g[off + q] * cache.saved[off + q];
            }
          }
          dgamma[c] += sum_gx;
          dbeta[c] += sum_g;
          const T k = gamma[c] * cache.inv_std[c];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * channels + c) * inner;
            for (std::size_t q = 0; q < inner; ++q) {
              if (tape.mode == Mode::train) {
                dx[off + q] = k * (g[off + q] - sum_g / count - cache.saved[off + q] * sum_gx / count);
              } else {
                dx[off + q] = k * g[off + q];
              }
            }
          }
        }
        break;
      }
      case LayerKind::maxpool:
        dx.fill(T(0));
        for (std::size_t i = 0; i < g.size(); ++i) dx[cache.argmax[i]] += g[i];
        break;
      case LayerKind::global_avg_pool: {
        const std::size_t plane = in_shape[1] * in_shape[2];
        const T scale = T(1) / static_cast<T>(plane);
        for (std::size_t nc = 0; nc < n * in_shape[0]; ++nc) {
          for (std::size_t q = 0; q < plane; ++q) dx[nc * plane + q] = g[nc] * scale;
        }
        break;
      }
      case LayerKind::flatten:
        std::copy(g.data(), g.data() + g.size(), dx.data());
        break;
    }
    g = std::move(dx);
  }
  return g;
}

template class Network<float>;
template class Network<double>;

template <typename T>
Tensor<T> watermarker_input(const ImageBatch& x, const Watermark& w) {
  const std::size_t n = x.size(), h = x.height(), wd = x.width(), plane = h * wd;
  if (x.data.dim(1) != 3 || w.height() != h || w.width() != wd) {
    throw DimensionError("watermarker input needs [N,3,H,W] images and a matching [4,H,W] watermark");
  }
  Tensor<T> out({n, 7, h, wd});
  for (std::size_t i = 0; i < n; ++i) {
    T* dst = out.data() + i * 7 * plane;
    const auto img = x.image(i);
    std::copy(img.begin(), img.end(), dst);
    std::copy(w.rgb.values().begin(), w.rgb.values().end(), dst + 3 * plane);
    std::copy(w.alpha.values().begin(), w.alpha.values().end(), dst + 6 * plane);
  }
  return out;
}

template Tensor<float> watermarker_input<float>(const ImageBatch&, const Watermark&);
template Tensor<double> watermarker_input<double>(const ImageBatch&, const Watermark&);

std::vector<Watermark> split_watermarks(const Tensor<float>& rgba) {
  if (rgba.rank() != 4 || rgba.dim(1) != 4) {
    throw DimensionError("watermark batch must be [N,4,H,W], got " + shape_to_string(rgba.shape()));
  }
  const std::size_t n = rgba.dim(0), h = rgba.dim(2), w = rgba.dim(3), plane = h * w;
  std::vector<Watermark> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* src = rgba.data() + i * 4 * plane;
    Watermark wm{Tensor<float>({3, h, w}), Tensor<float>({1, h, w})};
    std::copy(src, src + 3 * plane, wm.rgb.data());
    std::copy(src + 3 * plane, src + 4 * plane, wm.alpha.data());
    out.push_back(std::move(wm));
  }
  return out;
}

std::vector<Watermark> synthesize(const NetworkParams& watermarker, const ImageBatch& x,
                                  const Watermark& w) {
  const Network<float> net(watermarker);
  if (net.architecture().input != Shape{7, x.height(), x.width()} ||
      net.architecture().output != Shape{4, x.height(), x.width()}) {
    throw DimensionError("watermarker '" + net.architecture().id + "' maps " +
                         shape_to_string(net.architecture().input) + " -> " +
                         shape_to_string(net.architecture().output) +
                         "; synthesize needs [7,H,W] -> [4,H,W]");
  }
  std::vector<Watermark> out;
  out.reserve(x.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t first = 0; first < x.size(); first += kChunk) {
    const auto part = x.slice(first, std::min(x.size(), first + kChunk));
    auto ws = split_watermarks(net.infer(watermarker_input<float>(part, w)));
    std::move(ws.begin(), ws.end(), std::back_inserter(out));
  }
  return out;
}

}  // namespace deepstamp::nets

#pragma once

// Quantized DNN intermediate representation: layers, shape inference,
// validation, requantization and deterministic fixture generation.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace netnn {

using Activation = std::uint8_t;
using Weight = std::int8_t;
using Accumulator = std::int32_t;

enum class ModelErrc {
  syntax,
  empty,
  dimension_mismatch,
  weight_range,
  pool_placement,
  final_layer,
  bad_parameter,
};

class ModelError : public std::runtime_error {
 public:
  ModelError(ModelErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ModelErrc code() const noexcept { return code_; }

 private:
  ModelErrc code_;
};

struct Conv1D {
  std::uint32_t filters{};
  std::uint32_t kernel_width{};
  std::uint32_t stride{1};
  std::vector<Weight> weights;  // filters x kernel_width, row-major
  std::vector<Accumulator> biases;
  std::uint32_t requant_shift{};

  Weight weight(std::uint32_t filter, std::uint32_t k) const {
    return weights[std::size_t{filter} * kernel_width + k];
  }
  bool operator==(const Conv1D&) const = default;
};

struct MaxPool1D {
  std::uint32_t window{};
  bool operator==(const MaxPool1D&) const = default;
};

struct Dense {
  std::uint32_t in_width{};
  std::uint32_t out_width{};
  std::vector<Weight> weights;  // out_width x in_width, row-major
  std::vector<Accumulator> biases;
  std::uint32_t requant_shift{};

  Weight weight(std::uint32_t neuron, std::uint32_t input) const {
    return weights[std::size_t{neuron} * in_width + input];
  }
  bool operator==(const Dense&) const = default;
};

using Layer = std::variant<Conv1D, MaxPool1D, Dense>;

struct QuantizedModel {
  std::uint32_t input_width{};
  std::uint32_t class_count{};
  std::vector<Layer> layers;
  std::map<std::string, std::string> metadata;

  bool operator==(const QuantizedModel&) const = default;
};

inline bool is_weight_bearing(const Layer& layer) {
  return !std::holds_alternative<MaxPool1D>(layer);
}

// floor((in_length - kernel) / stride) + 1, or 0 when the kernel does not fit.
constexpr std::uint32_t conv_output_length(std::uint32_t in_length,
                                           std::uint32_t kernel,
                                           std::uint32_t stride) {
  if (kernel == 0 || stride == 0 || kernel > in_length) return 0;
  return (in_length - kernel) / stride + 1;
}

/// Geometry of one layer once its input width is known.
struct LayerShape {
  std::uint32_t in_width{};
  std::uint32_t out_width{};
  std::uint32_t filters{};     // conv and pool: number of filter sequences
  std::uint32_t out_length{};  // conv and pool: per-filter output length
};

namespace detail {

[[noreturn]] inline void fail(ModelErrc code, const std::string& msg) {
  throw ModelError(code, msg);
}

inline std::string at(std::size_t index) {
  return "layer " + std::to_string(index) + ": ";
}

}  // namespace detail

/// Checks every structural invariant and returns per-layer shapes.
inline std::vector<LayerShape> validate(const QuantizedModel& model) {
  using detail::at;
  using detail::fail;
  if (model.layers.empty()) fail(ModelErrc::empty, "model has no layers");
  if (model.input_width == 0) fail(ModelErrc::bad_parameter, "input_width must be positive");
  if (model.class_count == 0) fail(ModelErrc::bad_parameter, "class_count must be positive");

  std::vector<LayerShape> shapes;
  shapes.reserve(model.layers.size());
  std::uint32_t width = model.input_width;
  const Conv1D* prev_conv = nullptr;
  std::uint32_t prev_conv_len = 0;

  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Layer& layer = model.layers[i];
    LayerShape shape{width, 0, 0, 0};
    if (const auto* conv = std::get_if<Conv1D>(&layer)) {
      if (conv->filters == 0 || conv->kernel_width == 0 || conv->stride == 0)
        fail(ModelErrc::bad_parameter, at(i) + "filters, kernel_width and stride must be >= 1");
      if (conv->requant_shift > 31) fail(ModelErrc::bad_parameter, at(i) + "requant_shift out of 0..31");
      if (conv->kernel_width > width)
        fail(ModelErrc::dimension_mismatch, at(i) + "kernel_width " + std::to_string(conv->kernel_width) +
                                                " exceeds input width " + std::to_string(width));
      if (conv->weights.size() != std::size_t{conv->filters} * conv->kernel_width)
        fail(ModelErrc::dimension_mismatch, at(i) + "weights must be filters x kernel_width");
      if (conv->biases.size() != conv->filters)
        fail(ModelErrc::dimension_mismatch, at(i) + "one bias per filter required");
      std::uint32_t len = conv_output_length(width, conv->kernel_width, conv->stride);
      shape.filters = conv->filters;
      shape.out_length = len;
      std::uint64_t out = std::uint64_t{conv->filters} * len;
      if (out > UINT32_MAX) fail(ModelErrc::dimension_mismatch, at(i) + "output width overflows 32 bits");
      shape.out_width = static_cast<std::uint32_t>(out);
      prev_conv = conv;
      prev_conv_len = len;
    } else if (const auto* pool = std::get_if<MaxPool1D>(&layer)) {
      if (prev_conv == nullptr)
        fail(ModelErrc::pool_placement, at(i) + "maxpool1d must directly follow a conv1d layer");
      if (pool->window == 0) fail(ModelErrc::bad_parameter, at(i) + "window must be >= 1");
      if (prev_conv_len % pool->window != 0)
        fail(ModelErrc::dimension_mismatch, at(i) + "window " + std::to_string(pool->window) +
                                                " does not divide conv output length " +
                                                std::to_string(prev_conv_len));
      shape.filters = prev_conv->filters;
      shape.out_length = prev_conv_len / pool->window;
      shape.out_width = shape.filters * shape.out_length;
      prev_conv = nullptr;
    } else {
      const auto& dense = std::get<Dense>(layer);
      if (dense.out_width == 0) fail(ModelErrc::bad_parameter, at(i) + "out_width must be >= 1");
      if (dense.requant_shift > 31) fail(ModelErrc::bad_parameter, at(i) + "requant_shift out of 0..31");
      if (dense.in_width != width)
        fail(ModelErrc::dimension_mismatch, at(i) + "dense in_width " + std::to_string(dense.in_width) +
                                                " != previous output width " + std::to_string(width));
      if (dense.weights.size() != std::size_t{dense.out_width} * dense.in_width)
        fail(ModelErrc::dimension_mismatch, at(i) + "weights must be out_width x in_width");
      if (dense.biases.size() != dense.out_width)
        fail(ModelErrc::dimension_mismatch, at(i) + "one bias per neuron required");
      shape.out_width = dense.out_width;
      prev_conv = nullptr;
    }
    width = shape.out_width;
    shapes.push_back(shape);
  }

  const auto* last = std::get_if<Dense>(&model.layers.back());
  if (last == nullptr) fail(ModelErrc::final_layer, "final layer must be dense");
  if (last->out_width != model.class_count)
    fail(ModelErrc::final_layer, "final dense out_width " + std::to_string(last->out_width) +
                                     " != class_count " + std::to_string(model.class_count));
  return shapes;
}

/// Narrows a post-ReLU accumulator: clamp(acc >> shift, 0, 255).
constexpr Activation requantize(Accumulator acc, std::uint32_t shift) {
  Accumulator shifted = acc >> shift;  // arithmetic for signed operands (C++20)
  if (shifted < 0) return 0;
  if (shifted > 255) return 255;
  return static_cast<Activation>(shifted);
}

// ---------------------------------------------------------------------------
// Fixture generation

struct ConvSpec {
  std::uint32_t filters{};
  std::uint32_t kernel_width{3};
  std::uint32_t stride{1};
};
struct PoolSpec {
  std::uint32_t window{2};
};
struct DenseSpec {
  std::uint32_t out_width{};
};
using LayerSpec = std::variant<ConvSpec, PoolSpec, DenseSpec>;

struct ModelShape {
  std::uint32_t input_width{};
  std::vector<LayerSpec> layers;
};

struct FixtureOptions {
  bool zero_biases = false;
};

/// Portable deterministic generator. Only raw engine output is used because
/// std::uniform_int_distribution is implementation-defined.
class FixtureRng {
 public:
  explicit FixtureRng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [lo, hi]; modulo bias is negligible for the ranges used here.
  std::int64_t uniform(std::int64_t lo, std::int64_t hi) {
    auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

 private:
  std::mt19937_64 engine_;
};

// Shift that maps a typical |acc| (sqrt(fan_in) * weight-rms * 128) to ~2^7.
inline std::uint32_t default_requant_shift(std::uint64_t fan_in) {
  constexpr std::uint64_t kScale = 74ull * 74ull * 128ull * 128ull;
  auto bits = static_cast<int>(std::bit_width(fan_in * kScale));
  int shift = (bits + 1) / 2 - 8;
  return static_cast<std::uint32_t>(std::clamp(shift, 0, 31));
}

inline QuantizedModel random_model(std::uint64_t seed, const ModelShape& shape,
                                   FixtureOptions options = {}) {
  FixtureRng rng(seed);
  QuantizedModel model;
  model.input_width = shape.input_width;
  model.metadata["generator"] = "random_model";
  model.metadata["seed"] = std::to_string(seed);

  std::uint32_t width = shape.input_width;
  std::uint32_t conv_len = 0;
  std::uint32_t conv_filters = 0;
  auto draw_weights = [&](std::vector<Weight>& out, std::size_t n) {
    out.resize(n);
    for (auto& w : out) w = static_cast<Weight>(rng.uniform(-128, 127));
  };
  auto draw_biases = [&](std::vector<Accumulator>& out, std::size_t n, std::uint32_t shift) {
    out.assign(n, 0);
    if (options.zero_biases) return;
    std::int64_t range = std::int64_t{1} << std::min<std::uint32_t>(shift, 20);
    for (auto& b : out) b = static_cast<Accumulator>(rng.uniform(-range, range));
  };

  for (const LayerSpec& spec : shape.layers) {
    if (const auto* c = std::get_if<ConvSpec>(&spec)) {
      Conv1D conv;
      conv.filters = c->filters;
      conv.kernel_width = c->kernel_width;
      conv.stride = c->stride;
      conv.requant_shift = default_requant_shift(c->kernel_width);
      draw_weights(conv.weights, std::size_t{c->filters} * c->kernel_width);
      draw_biases(conv.biases, c->filters, conv.requant_shift);
      conv_len = conv_output_length(width, c->kernel_width, c->stride);
      conv_filters = c->filters;
      width = c->filters * conv_len;
      model.layers.emplace_back(std::move(conv));
    } else if (const auto* p = std::get_if<PoolSpec>(&spec)) {
      model.layers.emplace_back(MaxPool1D{p->window});
      if (p->window != 0) width = conv_filters * (conv_len / p->window);
    } else {
      const auto& d = std::get<DenseSpec>(spec);
      Dense dense;
      dense.in_width = width;
      dense.out_width = d.out_width;
      dense.requant_shift = default_requant_shift(width);
      draw_weights(dense.weights, std::size_t{d.out_width} * width);
      draw_biases(dense.biases, d.out_width, dense.requant_shift);
      width = d.out_width;
      model.layers.emplace_back(std::move(dense));
    }
  }
  if (const auto* last = model.layers.empty() ? nullptr : std::get_if<Dense>(&model.layers.back()))
    model.class_count = last->out_width;

  validate(model);  // invalid shapes surface as ModelError
  return model;
}

/// Input width of the canonical bit-level input: 68 bytes + two IAT bytes
/// + one folded flow-id byte, one activation per bit.
inline constexpr std::uint32_t kCanonicalInputWidth = 68 * 8 + 16 + 8;

/// Two Conv1D (32 and 64 filters, kernel 3, stride 1) each followed by a
/// window-2 maxpool, then Dense 50, Dense 100 and the output layer.
inline ModelShape canonical_shape(std::uint32_t class_count = 2) {
  return ModelShape{kCanonicalInputWidth,
                    {ConvSpec{32, 3, 1}, PoolSpec{2}, ConvSpec{64, 3, 1}, PoolSpec{2},
                     DenseSpec{50}, DenseSpec{100}, DenseSpec{class_count}}};
}

inline QuantizedModel canonical_fixture(std::uint64_t seed = 0, std::uint32_t class_count = 2) {
  QuantizedModel model = random_model(seed, canonical_shape(class_count), FixtureOptions{true});
  model.metadata["generator"] = "canonical_fixture";
  return model;
}

inline bool has_canonical_architecture(const QuantizedModel& model) {
  if (model.input_width != kCanonicalInputWidth || model.layers.size() != 7) return false;
  auto conv = [&](std::size_t i, std::uint32_t f) {
    const auto* c = std::get_if<Conv1D>(&model.layers[i]);
    return c != nullptr && c->filters == f && c->kernel_width == 3 && c->stride == 1;
  };
  auto pool = [&](std::size_t i) {
    const auto* p = std::get_if<MaxPool1D>(&model.layers[i]);
    return p != nullptr && p->window == 2;
  };
  auto dense = [&](std::size_t i, std::uint32_t n) {
    const auto* d = std::get_if<Dense>(&model.layers[i]);
    return d != nullptr && d->out_width == n;
  };
  return conv(0, 32) && pool(1) && conv(2, 64) && pool(3) && dense(4, 50) && dense(5, 100) &&
         std::holds_alternative<Dense>(model.layers[6]);
}

/// Random shape with 2..max_weight_layers weight-bearing layers and every
/// width <= max_width; conv layers get kernel 1..3 and optional pooling.
inline ModelShape random_shape(std::uint64_t seed, std::uint32_t max_weight_layers = 5,
                               std::uint32_t max_width = 64) {
  FixtureRng rng(seed ^ 0x9e3779b97f4a7c15ull);
  ModelShape shape;
  shape.input_width = static_cast<std::uint32_t>(rng.uniform(8, max_width));
  auto weight_layers = static_cast<std::uint32_t>(rng.uniform(2, max_weight_layers));
  std::uint32_t width = shape.input_width;
  bool dense_started = false;
  for (std::uint32_t i = 0; i < weight_layers; ++i) {
    bool last = i + 1 == weight_layers;
    bool conv = !last && !dense_started && rng.uniform(0, 2) != 0;
    if (conv) {
      auto kernel = static_cast<std::uint32_t>(rng.uniform(1, 3));
      auto stride = static_cast<std::uint32_t>(rng.uniform(1, 2));
      std::uint32_t len = conv_output_length(width, kernel, stride);
      std::uint32_t max_filters = std::max<std::uint32_t>(1, max_width / std::max<std::uint32_t>(len, 1));
      if (len == 0 || max_filters == 0 || len > max_width) {
        conv = false;
      } else {
        auto filters = static_cast<std::uint32_t>(rng.uniform(1, std::min<std::uint32_t>(max_filters, 8)));
        shape.layers.emplace_back(ConvSpec{filters, kernel, stride});
        width = filters * len;
        std::uint32_t window = rng.uniform(0, 1) == 0 ? 2 : 4;
        if (rng.uniform(0, 2) != 0 && len % window == 0) {
          shape.layers.emplace_back(PoolSpec{window});
          width = filters * (len / window);
        } else if (rng.uniform(0, 1) == 0 && len % 2 == 0) {
          shape.layers.emplace_back(PoolSpec{2});
          width = filters * (len / 2);
        }
        continue;
      }
    }
    dense_started = true;
    auto out = static_cast<std::uint32_t>(last ? rng.uniform(2, 6) : rng.uniform(2, max_width));
    shape.layers.emplace_back(DenseSpec{out});
    width = out;
  }
  return shape;
}

}  // namespace netnn

#pragma once

// Golden integer inference. Every distributed run is compared against this
// engine bit for bit.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "netnn/model.hpp"

namespace netnn {

/// 32-bit accumulation that refuses to wrap.
inline Accumulator checked_add(Accumulator acc, std::int32_t term) {
  Accumulator out;
  if (__builtin_add_overflow(acc, term, &out))
    throw std::overflow_error("32-bit accumulator overflow");
  return out;
}

struct ClassScores {
  std::vector<Accumulator> scores;
  std::uint32_t argmax = 0;

  bool operator==(const ClassScores&) const = default;
};

/// Smallest index attaining the maximum.
inline std::uint32_t argmax_lowest(std::span<const Accumulator> scores) {
  std::uint32_t best = 0;
  for (std::uint32_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

inline Accumulator relu(Accumulator acc) { return acc < 0 ? 0 : acc; }

namespace detail {

inline void expect_width(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw std::invalid_argument(std::string(what) + ": input width " + std::to_string(got) + " != expected " +
                                std::to_string(want));
}

}  // namespace detail

inline std::vector<Activation> conv_forward(const Conv1D& conv, std::span<const Activation> input) {
  std::uint32_t len = conv_output_length(static_cast<std::uint32_t>(input.size()), conv.kernel_width, conv.stride);
  if (len == 0) throw std::invalid_argument("conv1d: kernel does not fit input");
  std::vector<Activation> out(std::size_t{conv.filters} * len);
  for (std::uint32_t f = 0; f < conv.filters; ++f) {
    for (std::uint32_t p = 0; p < len; ++p) {
      Accumulator acc = conv.biases[f];
      for (std::uint32_t k = 0; k < conv.kernel_width; ++k)
        acc = checked_add(acc, std::int32_t{conv.weight(f, k)} * input[std::size_t{p} * conv.stride + k]);
      out[std::size_t{f} * len + p] = requantize(relu(acc), conv.requant_shift);
    }
  }
  return out;
}

/// Consecutive, non-overlapping windows. Windows never straddle filters
/// because the window divides every filter's sequence length.
inline std::vector<Activation> maxpool_forward(const MaxPool1D& pool, std::span<const Activation> input) {
  if (pool.window == 0 || input.size() % pool.window != 0)
    throw std::invalid_argument("maxpool1d: window does not divide input");
  std::vector<Activation> out(input.size() / pool.window);
  for (std::size_t w = 0; w < out.size(); ++w) {
    Activation best = input[w * pool.window];
    for (std::uint32_t k = 1; k < pool.window; ++k) best = std::max(best, input[w * pool.window + k]);
    out[w] = best;
  }
  return out;
}

/// Raw dense accumulators (bias included, no activation).
inline std::vector<Accumulator> dense_scores(const Dense& dense, std::span<const Activation> input) {
  detail::expect_width(input.size(), dense.in_width, "dense");
  std::vector<Accumulator> out(dense.out_width);
  for (std::uint32_t j = 0; j < dense.out_width; ++j) {
    Accumulator acc = dense.biases[j];
    const Weight* row = dense.weights.data() + std::size_t{j} * dense.in_width;
    for (std::uint32_t i = 0; i < dense.in_width; ++i) acc = checked_add(acc, std::int32_t{row[i]} * input[i]);
    out[j] = acc;
  }
  return out;
}

inline std::vector<Activation> dense_forward(const Dense& dense, std::span<const Activation> input) {
  std::vector<Accumulator> acc = dense_scores(dense, input);
  std::vector<Activation> out(acc.size());
  for (std::size_t j = 0; j < acc.size(); ++j) out[j] = requantize(relu(acc[j]), dense.requant_shift);
  return out;
}

/// One hidden layer: conv and dense apply ReLU and requantization.
inline std::vector<Activation> layer_forward(const Layer& layer, std::span<const Activation> input) {
  return std::visit(
      [&](const auto& l) -> std::vector<Activation> {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, Conv1D>) return conv_forward(l, input);
        else if constexpr (std::is_same_v<T, MaxPool1D>) return maxpool_forward(l, input);
        else return dense_forward(l, input);
      },
      layer);
}

/// Per-layer outputs of a full inference: hidden layers as activations and
/// the final layer as raw scores.
struct LayerTrace {
  std::vector<std::vector<Activation>> hidden;  // one entry per layer except the last
  ClassScores result;
};

inline LayerTrace infer_trace(const QuantizedModel& model, std::span<const Activation> input) {
  detail::expect_width(input.size(), model.input_width, "infer");
  LayerTrace trace;
  std::vector<Activation> current(input.begin(), input.end());
  for (std::size_t i = 0; i + 1 < model.layers.size(); ++i) {
    current = layer_forward(model.layers[i], current);
    trace.hidden.push_back(current);
  }
  const auto& last = std::get<Dense>(model.layers.back());
  trace.result.scores = dense_scores(last, current);
  trace.result.argmax = argmax_lowest(trace.result.scores);
  return trace;
}

inline ClassScores infer(const QuantizedModel& model, std::span<const Activation> input) {
  return infer_trace(model, input).result;
}

}  // namespace netnn

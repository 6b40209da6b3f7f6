#pragma once

// Model file format (JSON):
//
//   {
//     "format": "netnn-model", "version": 1,
//     "input_width": 568, "class_count": 2,
//     "metadata": {"key": "value", ...},
//     "layers": [
//       {"kind": "conv1d", "filters": F, "kernel_width": K, "stride": S,
//        "requant_shift": R, "weights": [[K ints] x F], "biases": [F ints]},
//       {"kind": "maxpool1d", "window": W},
//       {"kind": "dense", "in_width": N, "out_width": M, "requant_shift": R,
//        "weights": [[N ints] x M], "biases": [M ints]}
//     ]
//   }
//
// Weights are signed 8-bit, biases signed 32-bit. Unknown keys are ignored.
// The reader is SAX-based so multi-million-weight models parse without a DOM.

#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "netnn/model.hpp"

namespace netnn {

namespace detail {

struct RawLayer {
  std::string kind;
  std::map<std::string, std::int64_t> scalars;
  std::vector<std::int64_t> weights;
  std::vector<std::size_t> row_lengths;
  std::vector<std::int64_t> biases;
  bool has_weights = false;
  bool has_biases = false;
};

class ModelSax : public nlohmann::json_sax<nlohmann::json> {
 public:
  using json = nlohmann::json;

  std::int64_t input_width = -1;
  std::int64_t class_count = -1;
  bool has_layers = false;
  std::map<std::string, std::string> metadata;
  std::vector<RawLayer> layers;

  bool null() override { return scalar_error("null"); }
  bool boolean(bool) override { return scalar_error("boolean"); }
  bool number_integer(json::number_integer_t v) override { return integer(v); }
  bool number_unsigned(json::number_unsigned_t v) override {
    if (v > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()))
      throw ModelError(ModelErrc::syntax, "integer out of range");
    return integer(static_cast<std::int64_t>(v));
  }
  bool number_float(json::number_float_t, const json::string_t&) override {
    if (skip_ > 0) return true;
    throw ModelError(ModelErrc::syntax, "floating-point values are not allowed");
  }
  bool binary(json::binary_t&) override { return scalar_error("binary"); }

  bool string(json::string_t& s) override {
    if (skip_ > 0) return done_scalar();
    switch (where()) {
      case Ctx::top:
        if (key_ == "format") {
          if (s != "netnn-model") throw ModelError(ModelErrc::syntax, "unexpected format tag '" + s + "'");
          return true;
        }
        return unknown_scalar();
      case Ctx::metadata:
        metadata[key_] = s;
        return true;
      case Ctx::layer:
        if (key_ == "kind") {
          layers.back().kind = s;
          return true;
        }
        return unknown_scalar();
      default:
        throw ModelError(ModelErrc::syntax, "unexpected string value");
    }
  }

  bool start_object(std::size_t) override {
    if (skip_ > 0) {
      ++skip_;
      return true;
    }
    if (stack_.empty()) {
      stack_.push_back(Frame{Frame::object, Ctx::top});
      return true;
    }
    Ctx ctx = where();
    if (ctx == Ctx::top && key_ == "metadata") {
      stack_.push_back(Frame{Frame::object, Ctx::metadata});
    } else if (ctx == Ctx::layers) {
      layers.emplace_back();
      stack_.push_back(Frame{Frame::object, Ctx::layer});
    } else if (ctx == Ctx::top || ctx == Ctx::layer) {
      skip_ = 1;  // unknown object-valued key
    } else {
      throw ModelError(ModelErrc::syntax, "unexpected object");
    }
    return true;
  }

  bool key(json::string_t& k) override {
    if (skip_ > 0) return true;
    key_ = k;
    return true;
  }

  bool end_object() override {
    if (skip_ > 0) {
      --skip_;
      return true;
    }
    stack_.pop_back();
    return true;
  }

  bool start_array(std::size_t) override {
    if (skip_ > 0) {
      ++skip_;
      return true;
    }
    Ctx ctx = stack_.empty() ? Ctx::none : where();
    if (ctx == Ctx::top && key_ == "layers") {
      has_layers = true;
      stack_.push_back(Frame{Frame::array, Ctx::layers});
    } else if (ctx == Ctx::layer && key_ == "weights") {
      layers.back().has_weights = true;
      stack_.push_back(Frame{Frame::array, Ctx::weights});
    } else if (ctx == Ctx::layer && key_ == "biases") {
      layers.back().has_biases = true;
      stack_.push_back(Frame{Frame::array, Ctx::biases});
    } else if (ctx == Ctx::weights) {
      layers.back().row_lengths.push_back(0);
      stack_.push_back(Frame{Frame::array, Ctx::weight_row});
    } else if (ctx == Ctx::top || ctx == Ctx::layer) {
      skip_ = 1;
    } else {
      throw ModelError(ModelErrc::syntax, "unexpected array");
    }
    return true;
  }

  bool end_array() override {
    if (skip_ > 0) {
      --skip_;
      return true;
    }
    stack_.pop_back();
    return true;
  }

  bool parse_error(std::size_t position, const std::string&, const nlohmann::detail::exception& ex) override {
    throw ModelError(ModelErrc::syntax, "malformed model file at byte " + std::to_string(position) + ": " + ex.what());
  }

 private:
  enum class Ctx { none, top, metadata, layers, layer, weights, weight_row, biases };
  struct Frame {
    enum Type { object, array } type;
    Ctx ctx;
  };

  Ctx where() const { return stack_.back().ctx; }

  bool done_scalar() { return true; }

  bool unknown_scalar() { return true; }

  bool scalar_error(const char* what) {
    if (skip_ > 0) return done_scalar();
    Ctx ctx = stack_.empty() ? Ctx::none : where();
    if (ctx == Ctx::top || ctx == Ctx::layer) return unknown_scalar();
    throw ModelError(ModelErrc::syntax, std::string("unexpected ") + what + " value");
  }

  bool integer(std::int64_t v) {
    if (skip_ > 0) return done_scalar();
    switch (where()) {
      case Ctx::top:
        if (key_ == "input_width") input_width = v;
        else if (key_ == "class_count") class_count = v;
        return true;
      case Ctx::layer:
        layers.back().scalars[key_] = v;
        return true;
      case Ctx::weight_row:
        layers.back().weights.push_back(v);
        ++layers.back().row_lengths.back();
        return true;
      case Ctx::biases:
        layers.back().biases.push_back(v);
        return true;
      case Ctx::weights:
        throw ModelError(ModelErrc::syntax, "weights must be a nested array of rows");
      default:
        throw ModelError(ModelErrc::syntax, "unexpected integer");
    }
  }

  std::vector<Frame> stack_;
  std::string key_;
  int skip_ = 0;
};

inline std::uint32_t get_u32(const RawLayer& raw, const std::string& name, std::size_t index,
                             std::optional<std::uint32_t> fallback = std::nullopt) {
  auto it = raw.scalars.find(name);
  if (it == raw.scalars.end()) {
    if (fallback) return *fallback;
    throw ModelError(ModelErrc::syntax, at(index) + "missing field '" + name + "'");
  }
  if (it->second < 0 || it->second > UINT32_MAX)
    throw ModelError(ModelErrc::bad_parameter, at(index) + "field '" + name + "' out of range");
  return static_cast<std::uint32_t>(it->second);
}

inline std::vector<Weight> to_weights(const RawLayer& raw, std::size_t index, std::uint32_t rows,
                                      std::uint32_t cols) {
  if (!raw.has_weights) throw ModelError(ModelErrc::syntax, at(index) + "missing field 'weights'");
  if (raw.row_lengths.size() != rows)
    throw ModelError(ModelErrc::dimension_mismatch, at(index) + "expected " + std::to_string(rows) +
                                                        " weight rows, found " +
                                                        std::to_string(raw.row_lengths.size()));
  for (std::size_t len : raw.row_lengths)
    if (len != cols)
      throw ModelError(ModelErrc::dimension_mismatch, at(index) + "weight row of length " +
                                                          std::to_string(len) + ", expected " +
                                                          std::to_string(cols));
  std::vector<Weight> out;
  out.reserve(raw.weights.size());
  for (std::int64_t w : raw.weights) {
    if (w < -128 || w > 127)
      throw ModelError(ModelErrc::weight_range, at(index) + "weight " + std::to_string(w) +
                                                    " outside signed 8-bit range");
    out.push_back(static_cast<Weight>(w));
  }
  return out;
}

inline std::vector<Accumulator> to_biases(const RawLayer& raw, std::size_t index) {
  if (!raw.has_biases) throw ModelError(ModelErrc::syntax, at(index) + "missing field 'biases'");
  std::vector<Accumulator> out;
  out.reserve(raw.biases.size());
  for (std::int64_t b : raw.biases) {
    if (b < INT32_MIN || b > INT32_MAX)
      throw ModelError(ModelErrc::weight_range, at(index) + "bias outside signed 32-bit range");
    out.push_back(static_cast<Accumulator>(b));
  }
  return out;
}

template <typename Int>
void write_row(std::ostream& os, const Int* data, std::size_t n) {
  os << '[';
  for (std::size_t i = 0; i < n; ++i) {
    if (i != 0) os << ',';
    os << static_cast<std::int64_t>(data[i]);
  }
  os << ']';
}

}  // namespace detail

inline QuantizedModel parse_model(std::istream& in) {
  detail::ModelSax sax;
  nlohmann::json::sax_parse(in, &sax);
  if (sax.input_width < 0) throw ModelError(ModelErrc::syntax, "missing field 'input_width'");
  if (sax.class_count < 0) throw ModelError(ModelErrc::syntax, "missing field 'class_count'");
  if (!sax.has_layers) throw ModelError(ModelErrc::syntax, "missing field 'layers'");
  if (sax.input_width > UINT32_MAX || sax.class_count > UINT32_MAX)
    throw ModelError(ModelErrc::bad_parameter, "input_width/class_count out of range");

  QuantizedModel model;
  model.input_width = static_cast<std::uint32_t>(sax.input_width);
  model.class_count = static_cast<std::uint32_t>(sax.class_count);
  model.metadata = std::move(sax.metadata);
  for (std::size_t i = 0; i < sax.layers.size(); ++i) {
    const detail::RawLayer& raw = sax.layers[i];
    if (raw.kind == "conv1d") {
      Conv1D conv;
      conv.filters = detail::get_u32(raw, "filters", i);
      conv.kernel_width = detail::get_u32(raw, "kernel_width", i);
      conv.stride = detail::get_u32(raw, "stride", i, 1u);
      conv.requant_shift = detail::get_u32(raw, "requant_shift", i);
      conv.weights = detail::to_weights(raw, i, conv.filters, conv.kernel_width);
      conv.biases = detail::to_biases(raw, i);
      model.layers.emplace_back(std::move(conv));
    } else if (raw.kind == "maxpool1d") {
      model.layers.emplace_back(MaxPool1D{detail::get_u32(raw, "window", i)});
    } else if (raw.kind == "dense") {
      Dense dense;
      dense.in_width = detail::get_u32(raw, "in_width", i);
      dense.out_width = detail::get_u32(raw, "out_width", i);
      dense.requant_shift = detail::get_u32(raw, "requant_shift", i);
      dense.weights = detail::to_weights(raw, i, dense.out_width, dense.in_width);
      dense.biases = detail::to_biases(raw, i);
      model.layers.emplace_back(std::move(dense));
    } else {
      throw ModelError(ModelErrc::syntax, detail::at(i) + "unknown layer kind '" + raw.kind + "'");
    }
  }
  validate(model);
  return model;
}

inline QuantizedModel parse_model_text(const std::string& text) {
  std::istringstream in(text);
  return parse_model(in);
}

inline QuantizedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file '" + path + "'");
  return parse_model(in);
}

inline void serialize_model(const QuantizedModel& model, std::ostream& os) {
  using nlohmann::json;
  os << "{\n  \"format\": \"netnn-model\",\n  \"version\": 1,\n";
  os << "  \"input_width\": " << model.input_width << ",\n";
  os << "  \"class_count\": " << model.class_count << ",\n";
  os << "  \"metadata\": " << json(model.metadata).dump() << ",\n";
  os << "  \"layers\": [";
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    os << (i == 0 ? "\n" : ",\n") << "    {";
    const Layer& layer = model.layers[i];
    auto rows = [&](const std::vector<Weight>& w, std::uint32_t count, std::uint32_t cols) {
      os << ",\n     \"weights\": [";
      for (std::uint32_t r = 0; r < count; ++r) {
        os << (r == 0 ? "\n       " : ",\n       ");
        detail::write_row(os, w.data() + std::size_t{r} * cols, cols);
      }
      os << "]";
    };
    if (const auto* conv = std::get_if<Conv1D>(&layer)) {
      os << "\"kind\": \"conv1d\", \"filters\": " << conv->filters << ", \"kernel_width\": " << conv->kernel_width
         << ", \"stride\": " << conv->stride << ", \"requant_shift\": " << conv->requant_shift;
      rows(conv->weights, conv->filters, conv->kernel_width);
      os << ",\n     \"biases\": ";
      detail::write_row(os, conv->biases.data(), conv->biases.size());
    } else if (const auto* pool = std::get_if<MaxPool1D>(&layer)) {
      os << "\"kind\": \"maxpool1d\", \"window\": " << pool->window;
    } else {
      const auto& dense = std::get<Dense>(layer);
      os << "\"kind\": \"dense\", \"in_width\": " << dense.in_width << ", \"out_width\": " << dense.out_width
         << ", \"requant_shift\": " << dense.requant_shift;
      rows(dense.weights, dense.out_width, dense.in_width);
      os << ",\n     \"biases\": ";
      detail::write_row(os, dense.biases.data(), dense.biases.size());
    }
    os << "}";
  }
  os << "\n  ]\n}\n";
}

inline std::string serialize_model(const QuantizedModel& model) {
  std::ostringstream os;
  serialize_model(model, os);
  return os.str();
}

}  // namespace netnn

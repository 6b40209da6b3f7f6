#include <gtest/gtest.h>

#include <sstream>

#include "netnn/model.hpp"
#include "netnn/model_io.hpp"

using namespace netnn;

namespace {

// Brute force: count window starts that fit.
std::uint32_t enumerate_positions(std::uint32_t n, std::uint32_t k, std::uint32_t s) {
  std::uint32_t count = 0;
  for (std::uint32_t start = 0; start + k <= n; start += s) ++count;
  return count;
}

QuantizedModel tiny() {
  QuantizedModel m;
  m.input_width = 6;
  m.class_count = 2;
  m.layers.emplace_back(Conv1D{2, 3, 1, {1, 2, 3, -1, -2, -3}, {0, 5}, 1});
  m.layers.emplace_back(MaxPool1D{2});
  m.layers.emplace_back(Dense{4, 2, {1, 1, 1, 1, -1, 0, 2, 0}, {0, 1}, 0});
  return m;
}

ModelErrc code_of(const QuantizedModel& m) {
  try {
    validate(m);
  } catch (const ModelError& e) {
    return e.code();
  }
  ADD_FAILURE() << "model unexpectedly valid";
  return ModelErrc::syntax;
}

ModelErrc parse_code(const std::string& text) {
  try {
    parse_model_text(text);
  } catch (const ModelError& e) {
    return e.code();
  }
  ADD_FAILURE() << "parse unexpectedly succeeded";
  return ModelErrc::empty;
}

}  // namespace

TEST(ConvLength, MatchesEnumeration) {
  for (std::uint32_t n = 1; n <= 80; ++n)
    for (std::uint32_t k = 1; k <= 9; ++k)
      for (std::uint32_t s = 1; s <= 5; ++s)
        ASSERT_EQ(conv_output_length(n, k, s), k > n ? 0u : enumerate_positions(n, k, s)) << n << " " << k << " " << s;
}

TEST(ConvLength, Degenerate) {
  EXPECT_EQ(conv_output_length(5, 0, 1), 0u);
  EXPECT_EQ(conv_output_length(5, 6, 1), 0u);
  EXPECT_EQ(conv_output_length(5, 5, 1), 1u);
}

TEST(Requantize, ClampsAfterShift) {
  EXPECT_EQ(requantize(0, 0), 0);
  EXPECT_EQ(requantize(255, 0), 255);
  EXPECT_EQ(requantize(256, 0), 255);
  EXPECT_EQ(requantize(1023, 2), 255);
  EXPECT_EQ(requantize(1020, 2), 255);
  EXPECT_EQ(requantize(1019, 2), 254);
  EXPECT_EQ(requantize(-1, 0), 0);
  EXPECT_EQ(requantize(-1000, 3), 0);
  EXPECT_EQ(requantize(INT32_MAX, 31), 0);
  EXPECT_EQ(requantize(7, 1), 3);
}

TEST(Validate, TinyShapes) {
  auto shapes = validate(tiny());
  ASSERT_EQ(shapes.size(), 3u);
  EXPECT_EQ(shapes[0].out_width, 8u);
  EXPECT_EQ(shapes[0].out_length, 4u);
  EXPECT_EQ(shapes[1].out_width, 4u);
  EXPECT_EQ(shapes[2].out_width, 2u);
}

TEST(Validate, CanonicalWidths) {
  QuantizedModel m = canonical_fixture(0);
  EXPECT_TRUE(has_canonical_architecture(m));
  auto shapes = validate(m);
  ASSERT_EQ(shapes.size(), 7u);
  EXPECT_EQ(m.input_width, 568u);
  EXPECT_EQ(shapes[0].out_length, 566u);
  EXPECT_EQ(shapes[1].out_width, 32u * 283);
  EXPECT_EQ(shapes[2].out_length, 9054u);
  EXPECT_EQ(shapes[3].out_width, 289728u);
  EXPECT_EQ(std::get<Dense>(m.layers[4]).in_width, 289728u);
  EXPECT_EQ(shapes[6].out_width, 2u);
}

TEST(Validate, Errors) {
  QuantizedModel m = tiny();
  m.layers.clear();
  EXPECT_EQ(code_of(m), ModelErrc::empty);

  m = tiny();
  std::get<Dense>(m.layers[2]).in_width = 5;
  EXPECT_EQ(code_of(m), ModelErrc::dimension_mismatch);

  m = tiny();
  std::get<Conv1D>(m.layers[0]).kernel_width = 7;
  EXPECT_EQ(code_of(m), ModelErrc::dimension_mismatch);

  m = tiny();
  std::swap(m.layers[0], m.layers[1]);
  EXPECT_EQ(code_of(m), ModelErrc::pool_placement);

  m = tiny();
  m.layers.emplace_back(MaxPool1D{2});
  EXPECT_EQ(code_of(m), ModelErrc::pool_placement);

  m = tiny();
  std::get<MaxPool1D>(m.layers[1]).window = 3;
  EXPECT_EQ(code_of(m), ModelErrc::dimension_mismatch);

  m = tiny();
  m.class_count = 3;
  EXPECT_EQ(code_of(m), ModelErrc::final_layer);

  m = tiny();
  m.layers.pop_back();
  m.class_count = 4;
  EXPECT_EQ(code_of(m), ModelErrc::final_layer);

  m = tiny();
  m.layers.pop_back();
  m.layers.pop_back();
  EXPECT_EQ(code_of(m), ModelErrc::final_layer);

  m = tiny();
  std::get<Conv1D>(m.layers[0]).stride = 0;
  EXPECT_EQ(code_of(m), ModelErrc::bad_parameter);

  m = tiny();
  std::get<Conv1D>(m.layers[0]).biases.pop_back();
  EXPECT_EQ(code_of(m), ModelErrc::dimension_mismatch);
}

TEST(RandomModel, ValidAndBounded) {
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    QuantizedModel m = random_model(seed, random_shape(seed));
    auto shapes = validate(m);
    std::size_t weight_layers = 0;
    EXPECT_LE(m.input_width, 64u);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      EXPECT_LE(shapes[i].out_width, 64u) << "seed " << seed;
      if (is_weight_bearing(m.layers[i])) ++weight_layers;
    }
    EXPECT_GE(weight_layers, 2u);
    EXPECT_LE(weight_layers, 5u);
  }
}

TEST(RandomModel, Deterministic) {
  EXPECT_EQ(random_model(42, random_shape(42)), random_model(42, random_shape(42)));
  EXPECT_NE(random_model(42, random_shape(42)), random_model(43, random_shape(43)));
}

TEST(ModelIo, RoundTrip) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    QuantizedModel m = random_model(seed, random_shape(seed));
    EXPECT_EQ(parse_model_text(serialize_model(m)), m) << "seed " << seed;
  }
  QuantizedModel t = tiny();
  t.metadata["name"] = "tiny \"quoted\"";
  EXPECT_EQ(parse_model_text(serialize_model(t)), t);
}

TEST(ModelIo, HandWritten) {
  const char* text = R"({
    "format": "netnn-model", "version": 1, "input_width": 4, "class_count": 2,
    "metadata": {"source": "hand"},
    "layers": [
      {"kind": "dense", "in_width": 4, "out_width": 2, "requant_shift": 0,
       "weights": [[1, 2, 3, 4], [-128, 127, 0, 0]], "biases": [0, -5]}
    ]})";
  QuantizedModel m = parse_model_text(text);
  ASSERT_EQ(m.layers.size(), 1u);
  const auto& d = std::get<Dense>(m.layers[0]);
  EXPECT_EQ(d.weight(1, 0), -128);
  EXPECT_EQ(d.weight(1, 1), 127);
  EXPECT_EQ(d.biases[1], -5);
  EXPECT_EQ(m.metadata.at("source"), "hand");
}

TEST(ModelIo, Rejects) {
  const std::string head = R"({"input_width": 2, "class_count": 1, "layers": [)";
  const std::string tail = "]}";
  EXPECT_EQ(parse_code(head + R"({"kind":"dense","in_width":2,"out_width":1,"requant_shift":0,"weights":[[1,128]],"biases":[0]})" + tail),
            ModelErrc::weight_range);
  EXPECT_EQ(parse_code(head + R"({"kind":"dense","in_width":2,"out_width":1,"requant_shift":0,"weights":[[1,0.5]],"biases":[0]})" + tail),
            ModelErrc::syntax);
  EXPECT_EQ(parse_code(head + R"({"kind":"dense","in_width":2,"out_width":1,"requant_shift":0,"weights":[[1]],"biases":[0]})" + tail),
            ModelErrc::dimension_mismatch);
  EXPECT_EQ(parse_code(head + R"({"kind":"lstm"})" + tail), ModelErrc::syntax);
  EXPECT_EQ(parse_code(head + tail), ModelErrc::empty);
  EXPECT_EQ(parse_code(R"({"input_width": 2, "layers": []})"), ModelErrc::syntax);
  EXPECT_EQ(parse_code("{not json"), ModelErrc::syntax);
}

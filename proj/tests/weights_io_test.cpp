#include <gtest/gtest.h>

#include <bit>
#include <cstring>

#include "attnguide/attnguide.hpp"

using namespace attnguide;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.num_layers = 1;
  return c;
}

// Splits a container into its JSON header and payload.
std::pair<nlohmann::json, std::string> split(const std::string& bytes) {
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), 8);
  return {nlohmann::json::parse(bytes.substr(8, n)), bytes.substr(8 + n)};
}

std::string join(const nlohmann::json& h, const std::string& payload) {
  const std::string hs = h.dump();
  std::string out(8, '\0');
  const std::uint64_t n = hs.size();
  std::memcpy(out.data(), &n, 8);
  return out + hs + payload;
}

FormatError::Kind kind_of(const std::string& bytes) {
  try {
    load_weights_bytes<double>(bytes);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no FormatError";
  return FormatError::Kind::bad_header;
}

}  // namespace

TEST(WeightsIo, RoundTripIsBitExact) {
  const auto w = random_weights<double>(small(), 5);
  const std::string bytes = save_weights_bytes(w);
  const auto back = load_weights_bytes<double>(bytes);
  EXPECT_TRUE(back.warnings.empty());
  EXPECT_EQ(back.weights.config, w.config);
  std::vector<Tensor<double>> a, b;
  w.visit([&](const std::string&, const Tensor<double>& t) { a.push_back(t); });
  back.weights.visit([&](const std::string&, const Tensor<double>& t) { b.push_back(t); });
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(save_weights_bytes(back.weights), bytes);
}

TEST(WeightsIo, FloatLoadMatchesDouble) {
  const auto w = random_weights<double>(small(), 6);
  const auto f = load_weights_bytes<float>(save_weights_bytes(w));
  EXPECT_EQ(f.weights.head_w[3], static_cast<float>(w.head_w[3]));
}

TEST(WeightsIo, HeaderNamesAndMetadata) {
  const auto [h, payload] = split(save_weights_bytes(random_weights<double>(small(), 7), {{"note", "x"}}));
  EXPECT_TRUE(h.contains("patch_embed.weight"));
  EXPECT_TRUE(h.contains("block0.attn.wq"));
  EXPECT_EQ(h["head.weight"]["dtype"], "F32");
  EXPECT_EQ(h["__metadata__"]["note"], "x");
  EXPECT_EQ(h["__metadata__"]["payload_bytes"].get<std::size_t>(), payload.size());
}

TEST(WeightsIo, WrongOffsetIsStructuredError) {
  auto [h, payload] = split(save_weights_bytes(random_weights<double>(small(), 8)));
  h["cls_token"]["offset"] = payload.size() + 4;
  EXPECT_EQ(kind_of(join(h, payload)), FormatError::Kind::bad_offset);
  auto [h2, p2] = split(save_weights_bytes(random_weights<double>(small(), 8)));
  h2["cls_token"]["offset"] = 2;  // misaligned
  EXPECT_EQ(kind_of(join(h2, p2)), FormatError::Kind::bad_offset);
  auto [h3, p3] = split(save_weights_bytes(random_weights<double>(small(), 8)));
  h3["cls_token"]["offset"] = h3["pos_embed"]["offset"];  // overlaps
  EXPECT_EQ(kind_of(join(h3, p3)), FormatError::Kind::bad_offset);
}

TEST(WeightsIo, ExtraTensorsWarnAndAreIgnored) {
  const auto w = random_weights<double>(small(), 9);
  auto [h, payload] = split(save_weights_bytes(w));
  h["future.thing"] = {{"dtype", "F32"}, {"shape", {1}}, {"offset", payload.size()}};
  payload += std::string(4, '\0');
  h["__metadata__"]["payload_bytes"] = payload.size();
  const auto back = load_weights_bytes<double>(join(h, payload));
  ASSERT_EQ(back.warnings.size(), 1u);
  EXPECT_NE(back.warnings[0].find("future.thing"), std::string::npos);
  EXPECT_EQ(back.weights.head_w, w.head_w);
}

TEST(WeightsIo, OtherErrorKinds) {
  const std::string good = save_weights_bytes(random_weights<double>(small(), 10));
  EXPECT_EQ(kind_of(good.substr(0, good.size() - 4)), FormatError::Kind::truncated);
  EXPECT_EQ(kind_of("abc"), FormatError::Kind::truncated);
  EXPECT_EQ(kind_of(std::string("\x05\0\0\0\0\0\0\0{oops", 13)), FormatError::Kind::bad_header);
  {
    auto [h, p] = split(good);
    h.erase("head.bias");
    EXPECT_EQ(kind_of(join(h, p)), FormatError::Kind::missing_tensor);
  }
  {
    auto [h, p] = split(good);
    h["head.bias"]["shape"] = {3};
    EXPECT_EQ(kind_of(join(h, p)), FormatError::Kind::shape_mismatch);
  }
  {
    auto [h, p] = split(good);
    h["head.bias"]["dtype"] = "F16";
    EXPECT_EQ(kind_of(join(h, p)), FormatError::Kind::bad_dtype);
  }
  {
    auto [h, p] = split(good);
    h.erase("__metadata__");
    EXPECT_EQ(kind_of(join(h, p)), FormatError::Kind::bad_header);
  }
}

TEST(WeightsIo, MissingFileIsIoError) {
  EXPECT_THROW(load_weights<double>("/nonexistent/w.agw"), IoError);
}

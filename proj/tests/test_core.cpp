// Copyright 2026 The dicesm Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include "dicesm/core.hpp"

namespace dicesm {
namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("dicesm_core_" + name)).string();
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::Io;
}

TEST(Validate, AcceptsBinaryHalf) {
  EXPECT_NO_THROW(ProbField(Tensor({1, 2, 2}, {0.5, 0.5, 0.5, 0.5})));
}

TEST(Validate, AcceptsTwoClassSimplex) {
  EXPECT_NO_THROW(ProbField(Tensor({2, 1, 2}, {0.3, 1.0, 0.7, 0.0})));
}

TEST(Validate, RejectsValueAboveOne) {
  try {
    ProbField(Tensor({1, 1, 3}, {0.2, 1.0000001, 0.4}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfRange);
    ASSERT_TRUE(e.index().has_value());
    EXPECT_EQ(*e.index(), 1u);
  }
}

TEST(Validate, RejectsSimplexViolation) {
  EXPECT_EQ(code_of([] { ProbField(Tensor({2, 1, 2}, {0.3, 0.5, 0.7, 0.4})); }),
            ErrorCode::SimplexViolation);
}

TEST(Validate, SimplexToleranceAbsorbsRounding) {
  EXPECT_NO_THROW(ProbField(Tensor({2, 1, 1}, {0.3, 0.7 + 5e-10})));
  EXPECT_EQ(code_of([] { ProbField(Tensor({2, 1, 1}, {0.3, 0.7 + 5e-9})); }),
            ErrorCode::SimplexViolation);
}

TEST(Validate, RejectsNonFinite) {
  EXPECT_EQ(code_of([] { Tensor({1, 1, 1}, {std::nan("")}); }), ErrorCode::NonFinite);
}

TEST(Validate, HardLabelsMustBeZeroOrOne) {
  EXPECT_NO_THROW(LabelField(Tensor({1, 1, 2}, {0.0, 1.0}), Hardness::hard));
  EXPECT_EQ(code_of([] { LabelField(Tensor({1, 1, 2}, {0.0, 0.5}), Hardness::hard); }),
            ErrorCode::HardnessViolation);
  EXPECT_NO_THROW(LabelField(Tensor({1, 1, 2}, {0.0, 0.5}), Hardness::soft));
}

TEST(Validate, FieldsNeedThreeDims) {
  EXPECT_EQ(code_of([] { ProbField(Tensor({4}, {0, 0, 0, 0})); }), ErrorCode::ShapeMismatch);
}

TEST(Validate, RaterStackRequiresMatchingHardRaters) {
  LabelField a(Tensor({1, 1, 2}, {0, 1}), Hardness::hard);
  LabelField b(Tensor({1, 2, 1}, {0, 1}), Hardness::hard);
  LabelField s(Tensor({1, 1, 2}, {0, 0.5}), Hardness::soft);
  EXPECT_EQ(code_of([&] { RaterStack({a, b}); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { RaterStack({a, s}); }), ErrorCode::HardnessViolation);
}

TEST(TensorFile, RoundTripIsBitExact) {
  const std::string path = temp_path("roundtrip.sdt");
  const Tensor t({1, 2, 2}, {0.0, 0.5, 1.0, 0.25});
  write_tensor(path, t);
  const Tensor back = read_tensor(path);
  EXPECT_EQ(back, t);
  std::remove(path.c_str());
}

TEST(TensorFile, LayoutIsLittleEndianF32) {
  const std::string bytes = encode_tensor(Tensor({2}, {1.0, -2.0}));
  ASSERT_EQ(bytes.size(), 4u + 4u + 4u + 8u);
  EXPECT_EQ(bytes.substr(0, 4), "SDT1");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1);  // rank
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 2);  // dims[0]
  // 1.0f = 0x3F800000, stored low byte first.
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 0x00);
  EXPECT_EQ(static_cast<unsigned char>(bytes[15]), 0x3F);
  // -2.0f = 0xC0000000.
  EXPECT_EQ(static_cast<unsigned char>(bytes[19]), 0xC0);
}

TEST(TensorFile, WriterRoundsToNearestFloat) {
  const double v = 0.1;
  const Tensor back = decode_tensor(
      std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(
                                         encode_tensor(Tensor({1}, {v})).data()),
                                     16));
  EXPECT_EQ(back[0], static_cast<double>(static_cast<float>(v)));
}

TEST(TensorFile, BadMagic) {
  const std::string path = temp_path("magic.sdt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "XXXX" << std::string(12, '\0');
  }
  EXPECT_EQ(code_of([&] { read_tensor(path); }), ErrorCode::BadMagic);
  std::remove(path.c_str());
}

TEST(TensorFile, Truncated) {
  std::string bytes = encode_tensor(Tensor({10}, std::vector<double>(10, 0.5)));
  bytes.resize(bytes.size() - 8);  // 8 of 10 values remain
  const std::span<const unsigned char> view(reinterpret_cast<const unsigned char*>(bytes.data()),
                                            bytes.size());
  EXPECT_EQ(code_of([&] { decode_tensor(view); }), ErrorCode::TruncatedFile);
}

TEST(TensorFile, DimOverflow) {
  std::string bytes = "SDT1";
  detail::put_u32(bytes, 3);
  for (int i = 0; i < 3; ++i) detail::put_u32(bytes, 0xFFFFFFFFu);
  const std::span<const unsigned char> view(reinterpret_cast<const unsigned char*>(bytes.data()),
                                            bytes.size());
  EXPECT_EQ(code_of([&] { decode_tensor(view); }), ErrorCode::DimOverflow);
}

TEST(TensorFile, MissingFileIsIoError) {
  EXPECT_EQ(code_of([] { read_tensor("/nonexistent/dir/x.sdt"); }), ErrorCode::Io);
}

// Property: files produced from arbitrary f32 bit patterns decode and
// re-encode to the same bytes; tensors of f32-representable values survive
// encode/decode unchanged.
TEST(TensorFile, RoundTripProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t rank = 1 + rng() % 4;
    Dims dims(rank);
    std::size_t n = 1;
    for (auto& d : dims) {
      d = 1 + rng() % 5;
      n *= d;
    }
    std::vector<double> values(n);
    for (auto& v : values) {
      float f;
      do {
        const std::uint32_t bits = static_cast<std::uint32_t>(rng());
        std::memcpy(&f, &bits, sizeof f);
      } while (!std::isfinite(f));
      v = f;
    }
    const Tensor t(dims, values);
    const std::string bytes = encode_tensor(t);
    const Tensor back = decode_tensor(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
    ASSERT_EQ(back, t);
    ASSERT_EQ(encode_tensor(back), bytes);
  }
}

}  // namespace
}  // namespace dicesm

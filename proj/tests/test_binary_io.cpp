// Copyright 2026 The Circuit Lab Authors.
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
#include <limits>
#include <vector>

#include "circuit_lab/binary_io.hpp"
#include "circuit_lab/error.hpp"
#include "test_support.hpp"

using namespace circuit_lab;

TEST(BinaryIo, LittleEndianLayout) {
  ByteWriter w;
  w.u16(0x0102);
  w.u32(0x03040506);
  const std::string& b = w.buffer();
  ASSERT_EQ(b.size(), 6u);
  EXPECT_EQ(static_cast<unsigned char>(b[0]), 0x02);
  EXPECT_EQ(static_cast<unsigned char>(b[1]), 0x01);
  EXPECT_EQ(static_cast<unsigned char>(b[2]), 0x06);
  EXPECT_EQ(static_cast<unsigned char>(b[5]), 0x03);
}

TEST(BinaryIo, RoundTripsEveryType) {
  ByteWriter w;
  w.bytes("MAGC");
  w.u8(7);
  w.u16(65535);
  w.u32(123456789);
  w.u64(0xDEADBEEFCAFEF00Dull);
  w.f32(-1.5f);
  w.f64(std::numeric_limits<double>::denorm_min());
  w.short_string("hello");
  w.long_string(std::string(70000, 'x'));
  const std::vector<float> fs = {1.0f, -0.0f, 3.25f};
  const std::vector<double> ds = {std::acos(-1.0), 1e-300};
  w.f32_array(fs);
  w.f64_array(ds);

  ByteReader r(w.buffer());
  r.expect_magic("MAGC");
  EXPECT_EQ(r.u8(), 7);
  EXPECT_EQ(r.u16(), 65535);
  EXPECT_EQ(r.u32(), 123456789u);
  EXPECT_EQ(r.u64(), 0xDEADBEEFCAFEF00Dull);
  EXPECT_EQ(r.f32(), -1.5f);
  EXPECT_EQ(r.f64(), std::numeric_limits<double>::denorm_min());
  EXPECT_EQ(r.short_string(), "hello");
  EXPECT_EQ(r.long_string().size(), 70000u);
  std::vector<float> fs2(3);
  std::vector<double> ds2(2);
  r.f32_array(fs2);
  r.f64_array(ds2);
  EXPECT_EQ(fs, fs2);
  EXPECT_EQ(ds, ds2);
  EXPECT_NO_THROW(r.expect_end());
}

TEST(BinaryIo, TruncationReportsOffset) {
  ByteWriter w;
  w.u32(1);
  w.u8(2);
  ByteReader r(w.buffer());
  r.u32();
  try {
    r.u32();
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST(BinaryIo, BadMagicAndTrailingBytes) {
  ByteReader r(std::string("ABCDxyz"));
  EXPECT_THROW(r.expect_magic("ABCE"), FormatError);
  ByteReader t(std::string("ABCDxyz"));
  t.expect_magic("ABCD");
  EXPECT_THROW(t.expect_end(), FormatError);
}

TEST(BinaryIo, ShortStringLimit) {
  ByteWriter w;
  EXPECT_THROW(w.short_string(std::string(70000, 'a')), ContractError);
}

TEST(BinaryIo, FileRoundTrip) {
  circuit_lab::testing::TempDir dir("binary_io");
  ByteWriter w;
  w.u64(42);
  w.write_file(dir / "x.bin");
  auto r = ByteReader::from_file(dir / "x.bin");
  EXPECT_EQ(r.u64(), 42u);
  EXPECT_THROW(ByteReader::from_file(dir / "missing.bin"), ConfigError);
}

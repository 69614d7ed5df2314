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

#pragma once

// Little-endian binary encoding shared by checkpoint, trace and adapter
// files. Readers report the byte offset of any decoding failure.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace circuit_lab {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buffer_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }
  void f32(float v);
  void f64(double v);
  void bytes(std::string_view s) { buffer_.append(s); }
  // u16 length prefix + bytes.
  void short_string(std::string_view s);
  // u32 length prefix + bytes.
  void long_string(std::string_view s);
  void f32_array(std::span<const float> values);
  void f64_array(std::span<const double> values);

  const std::string& buffer() const { return buffer_; }
  void write_file(const std::filesystem::path& path) const;

 private:
  void put_le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) {
      buffer_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
  }
  std::string buffer_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}
  static ByteReader from_file(const std::filesystem::path& path);

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }
  float f32();
  double f64();
  std::string bytes(std::size_t n);
  std::string short_string();
  std::string long_string();
  void f32_array(std::span<float> out);
  void f64_array(std::span<double> out);

  // Throws FormatError if `magic` is not next in the stream.
  void expect_magic(std::string_view magic);
  void expect_end() const;

  std::uint64_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::uint64_t get_le(int n);

  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace circuit_lab

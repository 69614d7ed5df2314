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

#include "circuit_lab/binary_io.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "circuit_lab/error.hpp"

namespace circuit_lab {

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::short_string(std::string_view s) {
  if (s.size() > 0xFFFF) throw ContractError("string too long for u16 prefix");
  u16(static_cast<std::uint16_t>(s.size()));
  bytes(s);
}

void ByteWriter::long_string(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s);
}

void ByteWriter::f32_array(std::span<const float> values) {
  buffer_.reserve(buffer_.size() + 4 * values.size());
  for (float v : values) f32(v);
}

void ByteWriter::f64_array(std::span<const double> values) {
  buffer_.reserve(buffer_.size() + 8 * values.size());
  for (double v : values) f64(v);
}

void ByteWriter::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  if (!out) throw ConfigError("write failed: " + path.string());
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open for reading: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return ByteReader(std::move(data));
}

void ByteReader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) {
    throw FormatError(pos_, "truncated: need " + std::to_string(n) +
                                " bytes, " + std::to_string(remaining()) +
                                " left");
  }
}

std::uint64_t ByteReader::get_le(int n) {
  need(static_cast<std::size_t>(n));
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
         << (8 * i);
  }
  pos_ += static_cast<std::size_t>(n);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::bytes(std::size_t n) {
  need(n);
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::string ByteReader::short_string() { return bytes(u16()); }
std::string ByteReader::long_string() { return bytes(u32()); }

void ByteReader::f32_array(std::span<float> out) {
  need(4 * out.size());
  for (float& v : out) v = f32();
}

void ByteReader::f64_array(std::span<double> out) {
  need(8 * out.size());
  for (double& v : out) v = f64();
}

void ByteReader::expect_magic(std::string_view magic) {
  const std::uint64_t at = pos_;
  if (remaining() < magic.size() ||
      std::string_view(data_).substr(pos_, magic.size()) != magic) {
    throw FormatError(at, "bad magic, expected \"" + std::string(magic) + "\"");
  }
  pos_ += magic.size();
}

void ByteReader::expect_end() const {
  if (remaining() != 0) {
    throw FormatError(pos_, std::to_string(remaining()) + " trailing bytes");
  }
}

}  // namespace circuit_lab

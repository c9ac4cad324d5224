// Copyright 2026 The cfm-inverse Authors.
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

// Little-endian primitives for the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfm::io {

enum class FormatErrorKind { kBadMagic, kVersionMismatch, kTruncated, kCorrupt, kIo };

class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  FormatErrorKind kind() const { return kind_; }

 private:
  FormatErrorKind kind_;
};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) { le(v); }
  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void f32s(std::span<const float> v) {
    for (float x : v) f32(x);
  }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> data, std::string label = "file")
      : data_(std::move(data)), label_(std::move(label)) {}
  static Reader open(const std::filesystem::path& path);

  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() {
    need(1);
    return data_[pos_++];
  }
  std::uint16_t u16() { return le<std::uint16_t>(); }
  std::uint32_t u32() { return le<std::uint32_t>(); }
  std::uint64_t u64() { return le<std::uint64_t>(); }
  float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  void f32s(std::span<float> out) {
    need(out.size() * 4);
    for (auto& x : out) x = f32();
  }
  void f64s(std::span<double> out) {
    need(out.size() * 8);
    for (auto& x : out) x = f64();
  }
  std::string str() {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  // Throws kBadMagic unless the next bytes equal `magic`.
  void expect_magic(std::string_view magic) {
    if (data_.size() - pos_ < magic.size() ||
        std::memcmp(data_.data() + pos_, magic.data(), magic.size()) != 0) {
      throw FormatError(FormatErrorKind::kBadMagic, label_ + ": bad magic (expected \"" + std::string(magic) + "\")");
    }
    pos_ += magic.size();
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& label() const { return label_; }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(FormatErrorKind::kTruncated, label_ + ": truncated (needed " + std::to_string(n) +
                                                         " more bytes at offset " + std::to_string(pos_) + ")");
    }
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }

  std::vector<std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string label_;
};

}  // namespace cfm::io

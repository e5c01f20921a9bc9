// Copyright (C) 2026 gdr contributors
// SPDX-License-Identifier: Apache-2.0

// Little-endian byte packing shared by the corpus and checkpoint containers.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gdr/error.hpp"

namespace gdr::detail {

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                         static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 24)};
    bytes(b, 4);
  }
  void f32(double v) {
    const float f = static_cast<float>(v);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    u32(u);
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }

  std::size_t size() const { return buf_.size(); }
  std::vector<std::uint8_t>& buffer() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return data_.size() - off_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(Errc::FormatError, what_ + ": " + msg + " at byte offset " + std::to_string(off_));
  }

  void need(std::size_t n) const {
    if (remaining() < n) fail("truncated (need " + std::to_string(n) + " bytes)");
  }
  std::uint32_t u32() {
    need(4);
    const auto* b = data_.data() + off_;
    off_ += 4;
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  double f32() {
    const std::uint32_t u = u32();
    float f;
    std::memcpy(&f, &u, 4);
    return static_cast<double>(f);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + off_), n);
    off_ += n;
    return s;
  }
  std::span<const std::uint8_t> view(std::size_t from, std::size_t to) const {
    return data_.subspan(from, to - from);
  }

 private:
  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t off_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace gdr::detail

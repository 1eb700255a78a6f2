// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "jelly/tensor.hpp"

namespace jelly::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

// Frame matrix file: 16-byte header (magic "JLYF", version, frames, dim as
// little-endian u32) followed by frames*dim float32 values, row-major.
inline constexpr std::array<char, 4> kFrameMagic = {'J', 'L', 'Y', 'F'};
inline constexpr std::uint32_t kFrameVersion = 1;

inline std::vector<char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<char>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::kIo, "short write to " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, std::vector<char>(text.begin(), text.end()));
}

inline std::vector<char> encode_frames(const MatF& m) {
  std::vector<char> out(16 + static_cast<std::size_t>(m.size()) * sizeof(float));
  std::memcpy(out.data(), kFrameMagic.data(), 4);
  const std::uint32_t header[3] = {kFrameVersion, static_cast<std::uint32_t>(m.rows()),
                                   static_cast<std::uint32_t>(m.cols())};
  std::memcpy(out.data() + 4, header, sizeof(header));
  if (m.size() > 0) {
    std::memcpy(out.data() + 16, m.data(), static_cast<std::size_t>(m.size()) * sizeof(float));
  }
  return out;
}

inline MatF decode_frames(const std::vector<char>& bytes, const std::string& what) {
  require(bytes.size() >= 16, ErrorKind::kFormat, what + ": truncated header");
  require(std::memcmp(bytes.data(), kFrameMagic.data(), 4) == 0, ErrorKind::kFormat,
          what + ": bad magic");
  std::uint32_t header[3];
  std::memcpy(header, bytes.data() + 4, sizeof(header));
  require(header[0] == kFrameVersion, ErrorKind::kFormat,
          what + ": unsupported version " + std::to_string(header[0]));
  const std::size_t n = static_cast<std::size_t>(header[1]) * header[2];
  require(bytes.size() == 16 + n * sizeof(float), ErrorKind::kFormat,
          what + ": payload size does not match header");
  MatF m(header[1], header[2]);
  if (n > 0) std::memcpy(m.data(), bytes.data() + 16, n * sizeof(float));
  return m;
}

inline void write_frames(const std::filesystem::path& path, const MatF& m) {
  write_bytes(path, encode_frames(m));
}

inline MatF read_frames(const std::filesystem::path& path) {
  return decode_frames(read_bytes(path), path.string());
}

}  // namespace jelly::io

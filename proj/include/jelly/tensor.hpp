// Copyright 2026 The jelly-lab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "jelly/error.hpp"

namespace jelly {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

// Per-position boolean flags (frame validity, loss mask, ...).
using Mask = std::vector<std::uint8_t>;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Stable 64-bit hash of a string (FNV-1a), used to derive per-name seeds.
inline std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) {
  return splitmix64(seed ^ splitmix64(name_hash(name)));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(splitmix64(seed) + index * 0x632BE59BD9B4E019ULL);
}

using Rng = std::mt19937_64;

template <typename T>
Mat<T> random_normal(Eigen::Index rows, Eigen::Index cols, double stddev,
                     Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>(dist(rng));
  }
  return m;
}

inline std::string hex_encode(std::span<const unsigned char> bytes) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xF]);
  }
  return out;
}

// SHA-256 of a byte range, hex encoded.
inline std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, md, &len, EVP_sha256(), nullptr) != 1) {
    fail(ErrorKind::kIo, "sha256 digest failed");
  }
  return hex_encode({md, len});
}

// Little-endian float32 image of a matrix, row-major.
template <typename T>
std::vector<float> to_f32(const Mat<T>& m) {
  std::vector<float> out(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    out[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  }
  return out;
}

// Digest of the float32 image; equal digests mean bit-identical tensors.
template <typename T>
std::string tensor_digest(const Mat<T>& m) {
  const auto f = to_f32(m);
  std::string header = std::to_string(m.rows()) + "x" + std::to_string(m.cols());
  std::vector<unsigned char> buf(header.begin(), header.end());
  const auto* p = reinterpret_cast<const unsigned char*>(f.data());
  buf.insert(buf.end(), p, p + f.size() * sizeof(float));
  return sha256_hex(buf.data(), buf.size());
}

template <typename T>
bool all_finite(const Mat<T>& m) {
  return m.allFinite();
}

}  // namespace jelly

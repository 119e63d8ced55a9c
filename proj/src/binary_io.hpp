/* Copyright 2026 The embfuse Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef EMBFUSE_SRC_BINARY_IO_HPP_
#define EMBFUSE_SRC_BINARY_IO_HPP_

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

namespace embfuse::detail {

// Little-endian encoding of trivially copyable scalars, independent of the
// host byte order.
template <typename T>
std::array<char, sizeof(T)> to_le_bytes(T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  return bytes;
}

template <typename T>
T from_le_bytes(const char* bytes) {
  std::array<char, sizeof(T)> buf;
  std::memcpy(buf.data(), bytes, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf.begin(), buf.end());
  }
  T value;
  std::memcpy(&value, buf.data(), sizeof(T));
  return value;
}

template <typename T>
void write_le(std::ostream& out, T value) {
  const auto bytes = to_le_bytes(value);
  out.write(bytes.data(), bytes.size());
}

// Returns false on a short read.
template <typename T>
bool read_le(std::istream& in, T& value) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) return false;
  value = from_le_bytes<T>(buf);
  return true;
}

}  // namespace embfuse::detail

#endif  // EMBFUSE_SRC_BINARY_IO_HPP_

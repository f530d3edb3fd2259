// Copyright 2026 The Reidbench Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "reid/common.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace reid {

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ValidationError("Rng::below: n must be positive");
  // Values below `reject` would bias the modulo; redraw them.
  const std::uint64_t reject = (0ULL - n) % n;
  std::uint64_t x = next_u64();
  while (x < reject) x = next_u64();
  return x % n;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return splitmix64(seed ^ fnv1a64(label));
}

namespace {

void write_bytes_le(std::ostream& out, std::uint64_t v, int n_bytes) {
  char buf[8];
  for (int i = 0; i < n_bytes; ++i) {
    buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  }
  out.write(buf, n_bytes);
}

std::uint64_t read_bytes_le(std::istream& in, int n_bytes) {
  char buf[8];
  in.read(buf, n_bytes);
  if (in.gcount() != n_bytes) throw DataError("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < n_bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i]))
         << (8 * i);
  }
  return v;
}

}  // namespace

void write_u32_le(std::ostream& out, std::uint32_t v) {
  write_bytes_le(out, v, 4);
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
  write_bytes_le(out, v, 8);
}

void write_f64_le(std::ostream& out, double v) {
  write_bytes_le(out, std::bit_cast<std::uint64_t>(v), 8);
}

std::uint32_t read_u32_le(std::istream& in) {
  return static_cast<std::uint32_t>(read_bytes_le(in, 4));
}

std::uint64_t read_u64_le(std::istream& in) { return read_bytes_le(in, 8); }

double read_f64_le(std::istream& in) {
  return std::bit_cast<double>(read_bytes_le(in, 8));
}

std::string json_quote(std::string_view s) {
  std::string out;
  out.reserve(s.size() + 2);
  out.push_back('"');
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\b': out += "\\b"; break;
      case '\f': out += "\\f"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(static_cast<char>(c));
        }
    }
  }
  out.push_back('"');
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace reid

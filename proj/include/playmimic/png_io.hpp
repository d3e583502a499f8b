// Copyright 2026 The PlayMimic Authors
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

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "playmimic/error.hpp"
#include "playmimic/tensor.hpp"

namespace playmimic {

namespace detail_png {

inline uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0xffffffffu) {
  static uint32_t table[256];
  static bool init = [] {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    return true;
  }();
  (void)init;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return crc;
}

inline void put_u32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

inline void chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_u32(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(out.data() + start, out.size() - start) ^ 0xffffffffu;
  put_u32(out, crc);
}

}  // namespace detail_png

// Uncompressed-deflate PNG writer: stored blocks keep the encoder dependency
// free; files stay small at desk-scale resolutions.
inline void write_png(const std::string& path, int width, int height,
                      const std::vector<uint8_t>& rgb) {
  require(static_cast<size_t>(width) * height * 3 == rgb.size(), Err::ShapeMismatch,
          "rgb buffer size mismatch");
  using namespace detail_png;
  std::vector<uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(width));
  put_u32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // rgb
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk(out, "IHDR", ihdr);

  // raw scanlines with filter byte 0
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (1 + 3 * width));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const uint8_t* row = rgb.data() + static_cast<size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + width * 3);
  }
  // zlib wrapper with stored deflate blocks
  std::vector<uint8_t> z{0x78, 0x01};
  size_t pos = 0;
  while (pos < raw.size()) {
    size_t len = std::min<size_t>(65535, raw.size() - pos);
    bool last = pos + len == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<uint8_t>(len & 0xff));
    z.push_back(static_cast<uint8_t>(len >> 8));
    z.push_back(static_cast<uint8_t>(~len & 0xff));
    z.push_back(static_cast<uint8_t>((~len >> 8) & 0xff));
    z.insert(z.end(), raw.begin() + static_cast<long>(pos), raw.begin() + static_cast<long>(pos + len));
    pos += len;
  }
  uint32_t a = 1, b = 0;
  for (uint8_t c : raw) {
    a = (a + c) % 65521;
    b = (b + a) % 65521;
  }
  put_u32(z, (b << 16) | a);
  chunk(out, "IDAT", z);
  chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), Err::IOFailure, "cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  require(f.good(), Err::IOFailure, "png write failed: " + path);
}

// [3,H,W] float image in [0,1] -> 8-bit rgb, optional integer upscale.
inline void write_png(const std::string& path, const Tensor& chw, int upscale = 1) {
  require(chw.ndim() == 3 && chw.dim(0) == 3, Err::ShapeMismatch, "expected [3,H,W] image");
  int h = chw.dim(1), w = chw.dim(2);
  int oh = h * upscale, ow = w * upscale;
  std::vector<uint8_t> rgb(static_cast<size_t>(oh) * ow * 3);
  int64_t plane = static_cast<int64_t>(h) * w;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      int sy = y / upscale, sx = x / upscale;
      int64_t i = static_cast<int64_t>(sy) * w + sx;
      for (int c = 0; c < 3; ++c) {
        float v = chw[c * plane + i];
        v = std::clamp(v, 0.0f, 1.0f);
        rgb[(static_cast<size_t>(y) * ow + x) * 3 + static_cast<size_t>(c)] =
            static_cast<uint8_t>(v * 255.0f + 0.5f);
      }
    }
  write_png(path, ow, oh, rgb);
}

}  // namespace playmimic

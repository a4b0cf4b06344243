// Copyright 2026 The focrefine Authors
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
#include <string>
#include <vector>

#include "focrefine/samlite/image.hpp"

namespace focrefine::synthdata {

/// Raised for unreadable or malformed PNG data.
class PngError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_png(const RgbImage& img);
/// Single-channel 8-bit PNG with {0, 255} values.
std::vector<std::uint8_t> encode_mask_png(const BinaryMask& m);

/// Any 8/16-bit gray, gray+alpha, RGB, RGBA or palette PNG, converted to RGB.
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);
/// Nonzero luminance counts as foreground.
BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes);

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::string& path);

inline void write_png(const std::string& path, const RgbImage& img) { write_file(path, encode_png(img)); }
inline void write_mask_png(const std::string& path, const BinaryMask& m) { write_file(path, encode_mask_png(m)); }
inline RgbImage read_png(const std::string& path) { return decode_png(read_file(path)); }
inline BinaryMask read_mask_png(const std::string& path) { return decode_mask_png(read_file(path)); }

}  // namespace focrefine::synthdata

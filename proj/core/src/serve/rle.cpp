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

#include "focrefine/serve/rle.hpp"

#include <charconv>
#include <stdexcept>

namespace focrefine::serve {

std::string encode_rle(const BinaryMask& m) {
  std::string out;
  std::uint8_t current = 0;
  std::size_t run = 0;
  auto flush = [&] {
    if (!out.empty()) out += ',';
    out += std::to_string(run);
  };
  for (std::uint8_t v : m.data) {
    const std::uint8_t b = v != 0 ? 1 : 0;
    if (b != current) {
      flush();
      current = b;
      run = 0;
    }
    ++run;
  }
  flush();
  return out;
}

BinaryMask decode_rle(const std::string& rle, int height, int width) {
  if (height < 0 || width < 0) throw std::invalid_argument("rle: negative mask size");
  BinaryMask m(height, width);
  const std::size_t total = m.data.size();
  std::size_t pos = 0, filled = 0;
  std::uint8_t value = 0;
  const char* p = rle.data();
  const char* end = p + rle.size();
  while (p < end) {
    std::size_t run = 0;
    const auto [next, ec] = std::from_chars(p, end, run);
    if (ec != std::errc() || next == p) throw std::invalid_argument("rle: malformed run at offset " + std::to_string(pos));
    if (run > total - filled) throw std::invalid_argument("rle: runs exceed the mask size");
    for (std::size_t i = 0; i < run; ++i) m.data[filled + i] = value;
    filled += run;
    value ^= 1;
    pos = static_cast<std::size_t>(next - rle.data());
    p = next;
    if (p < end) {
      if (*p != ',' || p + 1 == end) throw std::invalid_argument("rle: expected ',' at offset " + std::to_string(pos));
      ++p;
    }
  }
  if (filled != total) throw std::invalid_argument("rle: runs cover " + std::to_string(filled) + " of " +
                                                   std::to_string(total) + " pixels");
  return m;
}

}  // namespace focrefine::serve

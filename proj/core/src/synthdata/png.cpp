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

#include "focrefine/synthdata/png.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

namespace focrefine::synthdata {

namespace {

struct WriteState {
  std::vector<std::uint8_t>* out;
};

void write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* st = static_cast<WriteState*>(png_get_io_ptr(png));
  st->out->insert(st->out->end(), data, data + len);
}

void flush_cb(png_structp) {}

struct ReadState {
  const std::vector<std::uint8_t>* in;
  std::size_t pos;
};

void read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* st = static_cast<ReadState*>(png_get_io_ptr(png));
  if (st->pos + len > st->in->size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(data, st->in->data() + st->pos, len);
  st->pos += len;
}

[[noreturn]] void error_cb(png_structp, png_const_charp msg) { throw PngError(std::string("png: ") + msg); }
void warning_cb(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode(int h, int w, int color_type, int channels, const std::uint8_t* pixels) {
  if (h < 1 || w < 1) throw PngError("png: cannot encode an empty image");
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
  if (!png) throw PngError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  WriteState st{&out};
  try {
    png_set_write_fn(png, &st, write_cb, flush_cb);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8, color_type,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) {
      png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * w * channels));
    }
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
  if (img.data.size() != static_cast<std::size_t>(img.height) * img.width * 3) throw PngError("png: malformed image");
  return encode(img.height, img.width, PNG_COLOR_TYPE_RGB, 3, img.data.data());
}

std::vector<std::uint8_t> encode_mask_png(const BinaryMask& m) {
  if (m.data.size() != static_cast<std::size_t>(m.height) * m.width) throw PngError("png: malformed mask");
  std::vector<std::uint8_t> px(m.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.data[i] ? 255 : 0;
  return encode(m.height, m.width, PNG_COLOR_TYPE_GRAY, 1, px.data());
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw PngError("png: missing PNG signature");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, error_cb, warning_cb);
  if (!png) throw PngError("png: out of memory");
  png_infop info = png_create_info_struct(png);
  ReadState st{&bytes, 0};
  RgbImage img;
  try {
    png_set_read_fn(png, &st, read_cb);
    png_read_info(png, info);
    const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
    if (w == 0 || h == 0 || w > 16384 || h > 16384) throw PngError("png: unsupported dimensions");
    const int ct = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (ct == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (ct == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (ct == PNG_COLOR_TYPE_GRAY || ct == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (ct & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
    png_read_update_info(png, info);
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(w) * 3) throw PngError("png: unexpected row layout");
    img = RgbImage(static_cast<int>(h), static_cast<int>(w));
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.data.data() + static_cast<std::size_t>(y) * w * 3;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes) {
  const RgbImage img = decode_png(bytes);
  BinaryMask m(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      m.at(y, x) = (img.at(y, x, 0) | img.at(y, x, 1) | img.at(y, x, 2)) != 0 ? 1 : 0;
  return m;
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace focrefine::synthdata

#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>

#include "cployo/imaging.hpp"

namespace cployo {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// --- PGM (P5, 8- or 16-bit big-endian) ---

inline CtSlice read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open " + path);
  std::string magic;
  in >> magic;
  check(magic == "P5", path + ": not a binary PGM");
  auto next_token = [&]() -> long {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return std::stol(tok);
    }
    throw ValueError(path + ": truncated PGM header");
  };
  const long w = next_token(), h = next_token(), maxval = next_token();
  check(w >= 1 && h >= 1 && maxval >= 1 && maxval <= 65535, path + ": bad PGM header");
  in.get();  // single whitespace after maxval
  CtSlice img(static_cast<int>(w), static_cast<int>(h));
  img.source_id = std::filesystem::path(path).filename().string();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (maxval < 256) {
    std::vector<unsigned char> buf(n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
    check(in.gcount() == static_cast<std::streamsize>(n), path + ": truncated PGM data");
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = buf[i];
  } else {
    std::vector<unsigned char> buf(2 * n);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(2 * n));
    check(in.gcount() == static_cast<std::streamsize>(2 * n), path + ": truncated PGM data");
    for (std::size_t i = 0; i < n; ++i)
      img.pixels[i] = static_cast<float>((buf[2 * i] << 8) | buf[2 * i + 1]);
  }
  return img;
}

inline void write_pgm(const std::string& path, const CtSlice& img) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "cannot write " + path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (float v : img.pixels) {
    const int b = static_cast<int>(std::lround(std::min(255.0f, std::max(0.0f, v))));
    out.put(static_cast<char>(b));
  }
}

// --- PNG (grayscale 8/16-bit) ---

inline CtSlice read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  check(fp != nullptr, "cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValueError(path + ": PNG decode error");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValueError(path + ": only grayscale PNG input is supported");
  }
  if (depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> data(rowbytes * h);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = data.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  CtSlice img(static_cast<int>(w), static_cast<int>(h));
  img.source_id = std::filesystem::path(path).filename().string();
  if (depth == 16) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i)
      img.pixels[i] = static_cast<float>((data[2 * i] << 8) | data[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < static_cast<std::size_t>(w) * h; ++i)
      img.pixels[i] = data[i];
  }
  return img;
}

inline void write_png_gray8(const std::string& path, const CtSlice& img) {
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValueError(path + ": PNG encode error");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(static_cast<std::size_t>(img.width));
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      row[static_cast<std::size_t>(x)] = static_cast<unsigned char>(
          std::lround(std::min(255.0f, std::max(0.0f, img.at(y, x)))));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Mask as 8-bit PNG with values {0, 255}.
inline void write_mask_png(const std::string& path, const BinaryMask& m) {
  CtSlice img(m.width, m.height);
  for (std::size_t i = 0; i < m.bits.size(); ++i) img.pixels[i] = m.bits[i] ? 255.0f : 0.0f;
  write_png_gray8(path, img);
}

inline void write_png_rgb8(const std::string& path, int width, int height,
                           const std::vector<unsigned char>& rgb) {
  check(rgb.size() == static_cast<std::size_t>(width) * height * 3, "rgb buffer size mismatch");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  check(fp != nullptr, "cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  check(png != nullptr, "libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ValueError(path + ": PNG encode error");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads PNG or PGM by extension; an optional "<stem>.json" sidecar with
// {"slope": s, "intercept": b} rescales raw values to HU.
inline CtSlice read_image(const std::string& path) {
  const std::string ext = std::filesystem::path(path).extension().string();
  CtSlice img;
  if (ext == ".pgm" || ext == ".PGM")
    img = read_pgm(path);
  else if (ext == ".png" || ext == ".PNG")
    img = read_png(path);
  else
    throw ValueError(path + ": unsupported image format (PNG or PGM expected)");
  std::filesystem::path sidecar = std::filesystem::path(path);
  sidecar.replace_extension(".json");
  if (std::filesystem::exists(sidecar)) {
    std::ifstream in(sidecar);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ValueError(sidecar.string() + ": bad sidecar JSON: " + e.what());
    }
    const double slope = j.value("slope", 1.0);
    const double intercept = j.value("intercept", 0.0);
    for (float& v : img.pixels) v = static_cast<float>(v * slope + intercept);
  }
  return img;
}

}  // namespace cployo

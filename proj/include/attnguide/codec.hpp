#pragma once

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include <png.h>

#include "attnguide/image.hpp"

namespace attnguide {

enum class ImageFormat { ppm, png };

inline ImageFormat format_for_path(const std::string& path) {
  auto ends = [&](std::string_view s) { return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0; };
  if (ends(".ppm")) return ImageFormat::ppm;
  return ImageFormat::png;
}

inline std::string encode_ppm(const RawImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

inline RawImage decode_ppm(std::string_view bytes) {
  using K = DecodeError::Kind;
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw DecodeError(K::unknown_format, "not a P6 PPM");
  std::size_t pos = 2;
  auto next_number = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      throw DecodeError(K::corrupt_stream, "PPM header truncated or malformed");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + std::size_t(bytes[pos] - '0');
      if (v > (1u << 24)) throw DecodeError(K::corrupt_stream, "PPM header value out of range");
      ++pos;
    }
    return v;
  };
  const std::size_t w = next_number(), h = next_number(), maxval = next_number();
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw DecodeError(K::corrupt_stream, "PPM header not terminated");
  ++pos;
  if (maxval != 255) throw DecodeError(K::corrupt_stream, "PPM maxval " + std::to_string(maxval) + " unsupported (need 255)");
  if (w == 0 || h == 0) throw DecodeError(K::corrupt_stream, "PPM with zero size");
  if (bytes.size() - pos < w * h * 3) throw DecodeError(K::corrupt_stream, "PPM pixel data truncated");
  RawImage img(w, h);
  std::memcpy(img.rgb.data(), bytes.data() + pos, img.rgb.size());
  return img;
}

inline std::string encode_png(const RawImage& img) {
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&pi, nullptr, &size, 0, img.rgb.data(), 0, nullptr))
    throw IoError(std::string("PNG encode failed: ") + pi.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&pi, out.data(), &size, 0, img.rgb.data(), 0, nullptr))
    throw IoError(std::string("PNG encode failed: ") + pi.message);
  out.resize(size);
  return out;
}

inline RawImage decode_png(std::string_view bytes) {
  using K = DecodeError::Kind;
  static constexpr unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  if (bytes.size() < 8 || std::memcmp(bytes.data(), sig, 8) != 0) throw DecodeError(K::unknown_format, "not a PNG");
  png_image pi;
  std::memset(&pi, 0, sizeof pi);
  pi.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&pi, bytes.data(), bytes.size()))
    throw DecodeError(K::corrupt_stream, std::string("PNG header: ") + pi.message);
  pi.format = PNG_FORMAT_RGB;
  RawImage img(pi.width, pi.height);
  if (!png_image_finish_read(&pi, nullptr, img.rgb.data(), 0, nullptr)) {
    std::string msg = pi.message;
    png_image_free(&pi);
    throw DecodeError(K::corrupt_stream, "PNG data: " + msg);
  }
  return img;
}

/// Decodes by content (magic bytes), not by file name.
inline RawImage decode_image_bytes(std::string_view bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes);
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 137 && bytes.substr(1, 3) == "PNG") return decode_png(bytes);
  throw DecodeError(DecodeError::Kind::unknown_format, "unrecognised image format (need P6 PPM or PNG)");
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

inline RawImage decode_image(const std::string& path) { return decode_image_bytes(read_file(path)); }

inline void encode_image(const std::string& path, const RawImage& img) {
  write_file(path, format_for_path(path) == ImageFormat::ppm ? encode_ppm(img) : encode_png(img));
}

}  // namespace attnguide

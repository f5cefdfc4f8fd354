#include "seunet/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace seunet {

namespace {

using Kind = DataError::Kind;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

File open_file(const std::filesystem::path& path, const char* mode) {
  File f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw DataError(mode[0] == 'r' ? Kind::kMissingFile : Kind::kIo,
                    "cannot open '" + path.string() + "' for " + (mode[0] == 'r' ? "reading" : "writing"));
  }
  return f;
}

[[noreturn]] void png_fail(png_structp png, png_const_charp message) {
  auto* error = static_cast<std::string*>(png_get_error_ptr(png));
  if (error) *error = message;
  png_longjmp(png, 1);
}

void png_warn(png_structp, png_const_charp) {}

Image8 read_png(const std::filesystem::path& path) {
  File f = open_file(path, "rb");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  if (!png) throw DataError(Kind::kDecode, "libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  Image8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(Kind::kDecode, "cannot decode PNG '" + path.string() + "': " + error);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  if (img.channels != 1 && img.channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(Kind::kDecode, "unsupported PNG channel layout in '" + path.string() + "'");
  }
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height * img.channels));
  rows.resize(static_cast<std::size_t>(img.height));
  for (std::int64_t y = 0; y < img.height; ++y) rows[y] = img.pixels.data() + y * img.width * img.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  File f = open_file(path, "wb");
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, png_fail, png_warn);
  if (!png) throw DataError(Kind::kIo, "libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError(Kind::kIo, "cannot write PNG '" + path.string() + "': " + error);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < img.height; ++y) {
    rows[y] = const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

Image8 read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(Kind::kMissingFile, "cannot open '" + path.string() + "' for reading");
  const std::string magic = pnm_token(in);
  Image8 img;
  img.channels = magic == "P6" ? 3 : 1;
  auto number = [&](const char* what) {
    const std::string tok = pnm_token(in);
    try {
      std::size_t used = 0;
      const long long v = std::stoll(tok, &used);
      if (used != tok.size() || v <= 0) throw std::invalid_argument(what);
      return static_cast<std::int64_t>(v);
    } catch (const std::exception&) {
      throw DataError(Kind::kDecode, "bad PNM " + std::string(what) + " in '" + path.string() + "'");
    }
  };
  img.width = number("width");
  img.height = number("height");
  if (number("maxval") != 255) throw DataError(Kind::kDecode, "only 8-bit PNM is supported: '" + path.string() + "'");
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height * img.channels));
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw DataError(Kind::kDecode, "truncated PNM pixel data in '" + path.string() + "'");
  }
  return img;
}

void write_pnm(const std::filesystem::path& path, const Image8& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(Kind::kIo, "cannot open '" + path.string() + "' for writing");
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw DataError(Kind::kIo, "write to '" + path.string() + "' failed");
}

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
  unsigned char sig[8] = {};
  {
    File f = open_file(path, "rb");
    const std::size_t got = std::fread(sig, 1, sizeof(sig), f.get());
    if (got >= 8 && png_sig_cmp(sig, 0, 8) == 0) return read_png(path);
    if (got >= 2 && sig[0] == 'P' && (sig[1] == '5' || sig[1] == '6')) return read_pnm(path);
  }
  throw DataError(Kind::kDecode, "'" + path.string() + "' is neither PNG nor binary PGM/PPM");
}

void write_image(const std::filesystem::path& path, const Image8& image) {
  if (image.channels != 1 && image.channels != 3) throw DataError(Kind::kFormat, "images must have 1 or 3 channels");
  if (image.pixels.size() != static_cast<std::size_t>(image.width * image.height * image.channels)) {
    throw DataError(Kind::kFormat, "image buffer size does not match its extents");
  }
  const std::string ext = path.extension().string();
  if (ext == ".png") return write_png(path, image);
  if (ext == ".pgm" || ext == ".ppm") {
    if ((ext == ".ppm") != (image.channels == 3)) {
      throw DataError(Kind::kFormat, "'" + path.string() + "': extension does not match channel count");
    }
    return write_pnm(path, image);
  }
  throw DataError(Kind::kFormat, "unsupported image extension '" + ext + "'");
}

}  // namespace seunet

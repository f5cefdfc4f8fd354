#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace seunet {

class DataError : public std::runtime_error {
 public:
  enum class Kind { kMissingFile, kMissingReference, kDuplicate, kDecode, kIo, kFormat };
  DataError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::int64_t y, std::int64_t x, int c) const { return pixels[(y * width + x) * channels + c]; }
};

/// Decodes PNG (palette, alpha and 16-bit inputs are reduced to 8-bit gray or RGB)
/// or binary PGM (P5) / PPM (P6) with maxval 255, chosen by file signature.
Image8 read_image(const std::filesystem::path& path);

/// Format chosen by extension: .png, .pgm or .ppm.
void write_image(const std::filesystem::path& path, const Image8& image);

}  // namespace seunet

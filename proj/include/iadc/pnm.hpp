#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace iadc {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary PGM (P5) or PPM (P6); 8-bit or 16-bit big-endian samples.
struct PnmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;  // 1 = P5, 3 = P6
  std::uint16_t maxval = 255;
  std::vector<std::uint16_t> samples;  // interleaved, row-major
};

PnmImage read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmImage& image);

}  // namespace iadc

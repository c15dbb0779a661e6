#include "iadc/pnm.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

namespace iadc {

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<char>& bytes, std::string file) : bytes_(bytes), file_(std::move(file)) {}

  unsigned long number(const char* field) {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(static_cast<unsigned char>(bytes_[pos_])))
      throw FormatError(file_ + ": malformed header field '" + field + "'");
    unsigned long v = 0;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) {
      v = v * 10 + static_cast<unsigned long>(bytes_[pos_] - '0');
      if (v > 1'000'000'000UL) throw FormatError(file_ + ": header field '" + field + "' out of range");
      ++pos_;
    }
    return v;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_])))
      throw FormatError(file_ + ": missing separator after header field 'maxval'");
    return pos_ + 1;
  }

  std::size_t pos_ = 2;

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<char>& bytes_;
  std::string file_;
};

}  // namespace

PnmImage read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open for reading");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string file = path.string();
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    throw FormatError(file + ": malformed header field 'magic' (expected P5 or P6)");

  PnmImage img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader header(bytes, file);
  img.width = header.number("width");
  img.height = header.number("height");
  const unsigned long maxval = header.number("maxval");
  if (img.width == 0 || img.height == 0) throw FormatError(file + ": header field 'width'/'height' is zero");
  if (maxval == 0 || maxval > 65535) throw FormatError(file + ": header field 'maxval' out of range");
  img.maxval = static_cast<std::uint16_t>(maxval);

  const std::size_t offset = header.raster_offset();
  const std::size_t count = img.width * img.height * img.channels;
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  if (bytes.size() < offset + count * bytes_per)
    throw FormatError(file + ": raster truncated (" + std::to_string(bytes.size() - offset) + " bytes, expected " +
                      std::to_string(count * bytes_per) + ")");
  img.samples.resize(count);
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + offset);
  for (std::size_t i = 0; i < count; ++i) {
    img.samples[i] = bytes_per == 2 ? static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
    if (img.samples[i] > img.maxval) throw FormatError(file + ": sample exceeds header field 'maxval'");
  }
  return img;
}

void write_pnm(const std::filesystem::path& path, const PnmImage& image) {
  if (image.channels != 1 && image.channels != 3)
    throw std::invalid_argument("write_pnm: channels must be 1 or 3");
  if (image.samples.size() != image.width * image.height * image.channels)
    throw std::invalid_argument("write_pnm: sample count does not match extents");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path.string() + ": cannot open for writing");
  out << (image.channels == 3 ? "P6" : "P5") << '\n'
      << image.width << ' ' << image.height << '\n'
      << image.maxval << '\n';
  std::vector<unsigned char> raw;
  if (image.maxval > 255) {
    raw.reserve(image.samples.size() * 2);
    for (auto s : image.samples) {
      raw.push_back(static_cast<unsigned char>(s >> 8));
      raw.push_back(static_cast<unsigned char>(s & 0xff));
    }
  } else {
    raw.assign(image.samples.begin(), image.samples.end());
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw FormatError(path.string() + ": write failed");
}

}  // namespace iadc

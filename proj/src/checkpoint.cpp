#include "iadc/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "iadc/pnm.hpp"

namespace iadc {
namespace {

constexpr char kMagic[8] = {'I', 'A', 'D', 'C', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename U>
  void le(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string file) : data_(std::move(data)), file_(std::move(file)) {}

  void bytes(void* out, std::size_t n, const char* field) {
    need(n, field);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  template <typename U>
  U le(const char* field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  bool at_end() const { return pos_ == data_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(file_ + ": " + what); }

 private:
  void need(std::size_t n, const char* field) const {
    if (data_.size() - pos_ < n) fail(std::string("truncated while reading ") + field);
  }
  std::vector<char> data_;
  std::string file_;
  std::size_t pos_ = 0;
};

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.value_bytes != 4 && ckpt.value_bytes != 8) throw std::invalid_argument("checkpoint values must be 4 or 8 bytes");
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint8_t>(Checkpoint::kVersion);
  w.le<std::uint8_t>(ckpt.value_bytes);
  w.le<std::uint64_t>(ckpt.step);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.bytes(ckpt.config_text.data(), ckpt.config_text.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (shape_numel(e.shape) != e.values.size())
      throw ShapeError("checkpoint entry '" + e.name + "' has " + std::to_string(e.values.size()) +
                       " values for shape " + shape_to_string(e.shape));
    w.le<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) w.le<std::uint64_t>(d);
  }
  for (const auto& e : ckpt.entries)
    for (double v : e.values) {
      if (ckpt.value_bytes == 4)
        w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else
        w.le<std::uint64_t>(std::bit_cast<std::uint64_t>(v));
    }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}), path.string());
  char magic[8];
  r.bytes(magic, sizeof magic, "magic");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.le<std::uint8_t>("version");
  if (version != Checkpoint::kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.value_bytes = r.le<std::uint8_t>("value width");
  if (ckpt.value_bytes != 4 && ckpt.value_bytes != 8) r.fail("value width must be 4 or 8");
  ckpt.step = r.le<std::uint64_t>("step");
  ckpt.config_text.resize(r.le<std::uint32_t>("config length"));
  r.bytes(ckpt.config_text.data(), ckpt.config_text.size(), "config text");
  const auto count = r.le<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name.resize(r.le<std::uint16_t>("entry name length"));
    r.bytes(e.name.data(), e.name.size(), "entry name");
    const auto rank = r.le<std::uint8_t>("entry rank");
    if (rank == 0 || rank > 4) r.fail("entry '" + e.name + "' has invalid rank " + std::to_string(rank));
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = r.le<std::uint64_t>("entry extent");
      if (d == 0 || d > (std::uint64_t{1} << 32)) r.fail("entry '" + e.name + "' has invalid extent");
      e.shape.push_back(static_cast<std::size_t>(d));
    }
    ckpt.entries.push_back(std::move(e));
  }
  for (auto& e : ckpt.entries) {
    e.values.resize(shape_numel(e.shape));
    for (auto& v : e.values)
      v = ckpt.value_bytes == 4 ? static_cast<double>(std::bit_cast<float>(r.le<std::uint32_t>("values")))
                                : std::bit_cast<double>(r.le<std::uint64_t>("values"));
  }
  if (!r.at_end()) r.fail("trailing bytes after the last entry");
  return ckpt;
}

template <typename T>
void restore_entry(const Checkpoint& ckpt, const std::string& name, Tensor<T>& target) {
  const CheckpointEntry* e = ckpt.find(name);
  if (!e) throw FormatError("checkpoint lacks entry '" + name + "'");
  if (e->shape != target.shape())
    throw FormatError("checkpoint entry '" + name + "' has shape " + shape_to_string(e->shape) + ", model expects " +
                      shape_to_string(target.shape()));
  auto dst = target.mutable_data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e->values[i]);
}

template void restore_entry<float>(const Checkpoint&, const std::string&, Tensor<float>&);
template void restore_entry<double>(const Checkpoint&, const std::string&, Tensor<double>&);

}  // namespace iadc

#include "mmq/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace mmq {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("tensor file truncated at byte " + std::to_string(pos_));
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor* TensorFile::find(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file) {
  std::vector<std::uint8_t> out(std::begin(kTensorMagic), std::end(kTensorMagic));
  put_u32(out, kTensorFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(file.entries.size()));
  put_u32(out, static_cast<std::uint32_t>(file.metadata.size()));
  out.insert(out.end(), file.metadata.begin(), file.metadata.end());
  for (const auto& [name, t] : file.entries) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeF64);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_u64(out, e);
    for (double v : t.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

TensorFile decode_tensor_file(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.str(8) != std::string(kTensorMagic, 8)) throw std::runtime_error("not a tensor file (bad magic)");
  const auto version = in.u32();
  if (version != kTensorFormatVersion) {
    throw std::runtime_error("unsupported tensor file version " + std::to_string(version) + " (expected " +
                             std::to_string(kTensorFormatVersion) + ")");
  }
  const auto count = in.u32();
  TensorFile file;
  file.metadata = in.str(in.u32());
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.str(in.u32());
    const auto dtype = in.u8();
    if (dtype != kDtypeF64) throw std::runtime_error("entry " + name + ": unknown dtype tag " + std::to_string(dtype));
    const auto rank = in.u32();
    Shape shape(rank);
    for (auto& e : shape) e = in.u64();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<double>(in.u64());
    file.entries.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  if (!in.done()) throw std::runtime_error("trailing bytes after last tensor entry");
  return file;
}

void save_tensor_file(const std::filesystem::path& path, const TensorFile& file) {
  auto bytes = encode_tensor_file(file);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_tensor_file(bytes);
}

}  // namespace mmq

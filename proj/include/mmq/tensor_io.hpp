#pragma once

// Versioned binary tensor container (model weights, optimizer checkpoints).
//
// All integers little-endian.
//
//   offset  size  field
//   0       8     magic "MMQTENS\0"
//   8       4     u32 format version (currently 1)
//   12      4     u32 entry count N
//   16      4     u32 metadata length B
//   20      B     metadata, UTF-8 JSON object (may be "{}")
//   then N entries:
//           4     u32 name length L
//           L     name, UTF-8
//           1     u8 dtype tag (1 = IEEE-754 binary64)
//           4     u32 rank R
//           8*R   u64 extents
//           8*E   raw little-endian binary64 values, E = product(extents)

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mmq/tensor.hpp"

namespace mmq {

inline constexpr char kTensorMagic[8] = {'M', 'M', 'Q', 'T', 'E', 'N', 'S', '\0'};
inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::uint8_t kDtypeF64 = 1;

struct TensorFile {
  std::string metadata = "{}";
  std::vector<std::pair<std::string, Tensor>> entries;

  const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_tensor_file(const TensorFile& file);
TensorFile decode_tensor_file(const std::vector<std::uint8_t>& bytes);

void save_tensor_file(const std::filesystem::path& path, const TensorFile& file);
TensorFile load_tensor_file(const std::filesystem::path& path);

}  // namespace mmq

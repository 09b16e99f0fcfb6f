#pragma once

// OVVT container: little-endian binary tensors.
//
//   single tensor file:  "OVVT" u32 version  <record>
//   named archive:       "OVVT" u32 version  u32 count  { u32 name_len  name  <record> }*
//   record:              u32 ndim  u64 dims[ndim]  u32 dtype  payload (row-major)

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ovv {

inline constexpr std::uint32_t kTensorFileVersion = 1;

enum class DType : std::uint32_t { f32 = 0, f64 = 1, u8 = 2 };

std::size_t dtype_size(DType dtype);

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorRecord {
  std::vector<std::uint64_t> dims;
  DType dtype = DType::f32;
  std::vector<std::uint8_t> bytes;

  std::size_t element_count() const;

  static TensorRecord from_f32(std::vector<std::uint64_t> dims, std::span<const float> values);
  static TensorRecord from_f64(std::vector<std::uint64_t> dims, std::span<const double> values);
  static TensorRecord from_u8(std::span<const std::uint8_t> values);

  std::vector<float> to_f32() const;
  std::vector<double> to_f64() const;

  bool operator==(const TensorRecord&) const = default;
};

struct NamedTensor {
  std::string name;
  TensorRecord tensor;

  bool operator==(const NamedTensor&) const = default;
};

std::vector<std::uint8_t> encode_tensor_file(const TensorRecord& record);
TensorRecord decode_tensor_file(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_tensor_archive(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_tensor_archive(std::span<const std::uint8_t> bytes);

void write_tensor_file(const std::filesystem::path& path, const TensorRecord& record);
TensorRecord read_tensor_file(const std::filesystem::path& path);

void write_tensor_archive(const std::filesystem::path& path, std::span<const NamedTensor> tensors);
std::vector<NamedTensor> read_tensor_archive(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ovv

#include "ovv/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace ovv {

static_assert(std::endian::native == std::endian::little,
              "OVVT encoding assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'O', 'V', 'V', 'T'};

class Writer {
 public:
  template <typename T>
  void put(T value) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_bytes(std::span<const std::uint8_t> bytes) { out_.insert(out_.end(), bytes.begin(), bytes.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("OVVT: truncated input at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void write_header(Writer& w) {
  w.put_bytes({reinterpret_cast<const std::uint8_t*>(kMagic), 4});
  w.put<std::uint32_t>(kTensorFileVersion);
}

void read_header(Reader& r) {
  auto magic = r.get_bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError("OVVT: bad magic");
  auto version = r.get<std::uint32_t>();
  if (version != kTensorFileVersion) throw FormatError("OVVT: unsupported version " + std::to_string(version));
}

void write_record(Writer& w, const TensorRecord& t) {
  if (t.bytes.size() != t.element_count() * dtype_size(t.dtype))
    throw FormatError("OVVT: payload size does not match dims");
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) w.put<std::uint64_t>(d);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(t.dtype));
  w.put_bytes(t.bytes);
}

TensorRecord read_record(Reader& r) {
  TensorRecord t;
  auto ndim = r.get<std::uint32_t>();
  if (ndim > 16) throw FormatError("OVVT: implausible ndim " + std::to_string(ndim));
  t.dims.resize(ndim);
  for (auto& d : t.dims) d = r.get<std::uint64_t>();
  auto code = r.get<std::uint32_t>();
  if (code > 2) throw FormatError("OVVT: unknown dtype code " + std::to_string(code));
  t.dtype = static_cast<DType>(code);
  auto payload = r.get_bytes(t.element_count() * dtype_size(t.dtype));
  t.bytes.assign(payload.begin(), payload.end());
  return t;
}

template <typename T>
std::vector<T> decode_values(const TensorRecord& t) {
  std::vector<T> out(t.element_count());
  std::memcpy(out.data(), t.bytes.data(), out.size() * sizeof(T));
  return out;
}

template <typename T>
std::vector<std::uint8_t> encode_values(std::span<const T> values) {
  std::vector<std::uint8_t> out(values.size() * sizeof(T));
  std::memcpy(out.data(), values.data(), out.size());
  return out;
}

}  // namespace

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
  }
  throw FormatError("OVVT: unknown dtype");
}

std::size_t TensorRecord::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

TensorRecord TensorRecord::from_f32(std::vector<std::uint64_t> dims, std::span<const float> values) {
  TensorRecord t{std::move(dims), DType::f32, encode_values(values)};
  if (t.element_count() != values.size()) throw std::invalid_argument("tensor dims do not match value count");
  return t;
}

TensorRecord TensorRecord::from_f64(std::vector<std::uint64_t> dims, std::span<const double> values) {
  TensorRecord t{std::move(dims), DType::f64, encode_values(values)};
  if (t.element_count() != values.size()) throw std::invalid_argument("tensor dims do not match value count");
  return t;
}

TensorRecord TensorRecord::from_u8(std::span<const std::uint8_t> values) {
  return TensorRecord{{values.size()}, DType::u8, {values.begin(), values.end()}};
}

std::vector<float> TensorRecord::to_f32() const {
  if (dtype == DType::f32) return decode_values<float>(*this);
  if (dtype == DType::f64) {
    auto d = decode_values<double>(*this);
    return {d.begin(), d.end()};
  }
  throw FormatError("OVVT: tensor is not floating point");
}

std::vector<double> TensorRecord::to_f64() const {
  if (dtype == DType::f64) return decode_values<double>(*this);
  if (dtype == DType::f32) {
    auto f = decode_values<float>(*this);
    return {f.begin(), f.end()};
  }
  throw FormatError("OVVT: tensor is not floating point");
}

std::vector<std::uint8_t> encode_tensor_file(const TensorRecord& record) {
  Writer w;
  write_header(w);
  write_record(w, record);
  return w.take();
}

TensorRecord decode_tensor_file(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  read_header(r);
  auto t = read_record(r);
  if (!r.done()) throw FormatError("OVVT: trailing bytes after tensor");
  return t;
}

std::vector<std::uint8_t> encode_tensor_archive(std::span<const NamedTensor> tensors) {
  Writer w;
  write_header(w);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(nt.name.size()));
    w.put_bytes({reinterpret_cast<const std::uint8_t*>(nt.name.data()), nt.name.size()});
    write_record(w, nt.tensor);
  }
  return w.take();
}

std::vector<NamedTensor> decode_tensor_archive(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  read_header(r);
  auto count = r.get<std::uint32_t>();
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto len = r.get<std::uint32_t>();
    auto name = r.get_bytes(len);
    NamedTensor nt;
    nt.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
    nt.tensor = read_record(r);
    out.push_back(std::move(nt));
  }
  if (!r.done()) throw FormatError("OVVT: trailing bytes after archive");
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

void write_tensor_file(const std::filesystem::path& path, const TensorRecord& record) {
  write_file_bytes(path, encode_tensor_file(record));
}

TensorRecord read_tensor_file(const std::filesystem::path& path) {
  return decode_tensor_file(read_file_bytes(path));
}

void write_tensor_archive(const std::filesystem::path& path, std::span<const NamedTensor> tensors) {
  write_file_bytes(path, encode_tensor_archive(tensors));
}

std::vector<NamedTensor> read_tensor_archive(const std::filesystem::path& path) {
  return decode_tensor_archive(read_file_bytes(path));
}

}  // namespace ovv

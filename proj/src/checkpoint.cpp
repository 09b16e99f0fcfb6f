#include "ovv/checkpoint.hpp"

#include "ovv/config.hpp"

namespace ovv {

std::vector<NamedTensor> checkpoint_tensors(const Checkpoint& ckpt) {
  std::vector<NamedTensor> out;
  for (const auto& [name, m] : ckpt.params) {
    std::vector<std::uint64_t> dims{static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    out.push_back({name, TensorRecord::from_f32(dims, std::span<const float>(m.data(), static_cast<std::size_t>(m.size())))});
  }
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  meta["model"] = to_json(ckpt.model);
  meta["sampler"] = to_json(ckpt.sampler);
  const std::string text = meta.dump();
  out.push_back({kCheckpointMetaName,
                 TensorRecord::from_u8(std::span<const std::uint8_t>(
                     reinterpret_cast<const std::uint8_t*>(text.data()), text.size()))});
  return out;
}

Checkpoint checkpoint_from_tensors(std::span<const NamedTensor> tensors) {
  Checkpoint ckpt;
  bool have_meta = false;
  for (const auto& t : tensors) {
    if (t.name == kCheckpointMetaName) {
      if (t.tensor.dtype != DType::u8) throw FormatError("checkpoint: meta.config must be u8");
      const auto meta = nlohmann::json::parse(t.tensor.bytes.begin(), t.tensor.bytes.end());
      from_json(meta.at("model"), ckpt.model);
      from_json(meta.at("sampler"), ckpt.sampler);
      have_meta = true;
      continue;
    }
    if (t.tensor.dims.size() != 2) throw FormatError("checkpoint: parameter '" + t.name + "' is not 2-D");
    const auto values = t.tensor.to_f32();
    Matrix<float> m(static_cast<Eigen::Index>(t.tensor.dims[0]), static_cast<Eigen::Index>(t.tensor.dims[1]));
    std::copy(values.begin(), values.end(), m.data());
    if (!ckpt.params.emplace(t.name, std::move(m)).second) throw FormatError("checkpoint: duplicate '" + t.name + "'");
  }
  if (!have_meta) throw FormatError("checkpoint: missing meta.config");
  ckpt.model.validate();

  // Shapes must agree with what the stored config would build.
  const auto expected = init_params<float>(ckpt.model, 0);
  if (expected.size() != ckpt.params.size()) throw FormatError("checkpoint: parameter set does not match config");
  for (const auto& [name, m] : expected) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw FormatError("checkpoint: missing parameter '" + name + "'");
    if (it->second.rows() != m.rows() || it->second.cols() != m.cols())
      throw FormatError("checkpoint: shape mismatch for '" + name + "'");
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_tensor_archive(path, checkpoint_tensors(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto tensors = read_tensor_archive(path);
  return checkpoint_from_tensors(tensors);
}

}  // namespace ovv

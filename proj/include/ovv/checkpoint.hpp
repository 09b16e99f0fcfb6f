#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ovv/model.hpp"
#include "ovv/sampler.hpp"
#include "ovv/tensor_file.hpp"

namespace ovv {

/// A trained model plus the sampler it was trained with. Stored as an OVVT
/// archive: one f32 [rows, cols] record per parameter (sorted by name) and a
/// trailing "meta.config" u8 record holding the configs as JSON.
struct Checkpoint {
  ModelConfig model;
  SamplerConfig sampler;
  ParamStore<float> params;
};

inline constexpr const char* kCheckpointMetaName = "meta.config";

std::vector<NamedTensor> checkpoint_tensors(const Checkpoint& ckpt);
Checkpoint checkpoint_from_tensors(std::span<const NamedTensor> tensors);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ovv

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ovv/data_synth.hpp"
#include "ovv/model.hpp"
#include "ovv/sampler.hpp"
#include "ovv/trainer.hpp"

namespace ovv {

struct SweepConfig {
  std::vector<double> keep_ratios{0.2, 0.4, 0.6, 1.0};
  std::vector<std::string> methods{"baseline-full", "uniform-drop", "ogs", "ogs+oam"};
  int views = 1;
  /// Each seed reseeds data, init and sampling; the CSV reports seed means.
  std::vector<std::uint64_t> seeds{0};
  /// Single-model mode: evaluate this checkpoint at every ratio instead of
  /// training one model per ratio.
  std::optional<std::string> checkpoint;
};

/// Sections: "data" (SynthConfig fields plus num_train, num_val, seed),
/// "model", "sampler", "train", "sweep". Every section and key is optional;
/// unknown keys are rejected.
struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  SamplerConfig sampler;
  TrainConfig train;
  SweepConfig sweep;
};

nlohmann::ordered_json to_json(const SynthConfig& c);
nlohmann::ordered_json to_json(const DataConfig& c);
nlohmann::ordered_json to_json(const ModelConfig& c);
nlohmann::ordered_json to_json(const SamplerConfig& c);
nlohmann::ordered_json to_json(const TrainConfig& c);
nlohmann::ordered_json to_json(const SweepConfig& c);
nlohmann::ordered_json to_json(const ExperimentConfig& c);

void from_json(const nlohmann::json& j, SynthConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void from_json(const nlohmann::json& j, SweepConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig parse_config(const std::string& text);
/// Reads, parses, applies OVV_SEED and validates.
ExperimentConfig load_config(const std::filesystem::path& path);

/// When OVV_SEED is set, every seed in the config takes its value.
void apply_seed_override(ExperimentConfig& c);
void apply_seed_override(ExperimentConfig& c, std::optional<std::uint64_t> seed);
std::optional<std::uint64_t> env_seed();

}  // namespace ovv

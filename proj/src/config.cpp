#include "ovv/config.hpp"

#include <cstdlib>
#include <set>
#include <stdexcept>

#include "ovv/evalbench.hpp"
#include "ovv/tensor_file.hpp"

namespace ovv {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void reject_unknown(const json& j, const char* section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw std::invalid_argument(std::string("config: '") + section + "' must be an object");
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, _] : j.items())
    if (!known.count(k)) throw std::invalid_argument(std::string("config: unknown key '") + k + "' in " + section);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

template <typename E>
E enum_from(const std::string& s, std::initializer_list<std::pair<const char*, E>> names, const char* what) {
  for (const auto& [n, e] : names)
    if (s == n) return e;
  throw std::invalid_argument(std::string("config: bad ") + what + " '" + s + "'");
}

constexpr std::initializer_list<std::pair<const char*, SpriteKind>> kSprites = {{"square", SpriteKind::square},
                                                                               {"disc", SpriteKind::disc}};
constexpr std::initializer_list<std::pair<const char*, SamplingMode>> kModes = {
    {"none", SamplingMode::none}, {"object_guided", SamplingMode::object_guided}, {"uniform", SamplingMode::uniform}};
constexpr std::initializer_list<std::pair<const char*, Aggregation>> kAggs = {
    {"heatmap_weighted", Aggregation::heatmap_weighted}, {"binary_block_mask", Aggregation::binary_block_mask}};

template <typename E>
std::string enum_name(E e, std::initializer_list<std::pair<const char*, E>> names) {
  for (const auto& [n, v] : names)
    if (v == e) return n;
  return "?";
}

void synth_fields(ordered_json& j, const SynthConfig& c) {
  j["frames"] = c.frames;
  j["height"] = c.height;
  j["width"] = c.width;
  j["num_objects"] = c.num_objects;
  j["num_classes"] = c.num_classes;
  j["sprite_kind"] = enum_name(c.sprite_kind, kSprites);
  j["sprite_size"] = c.sprite_size;
  j["noise_std"] = c.noise_std;
}

void read_synth(const json& j, SynthConfig& c) {
  read(j, "frames", c.frames);
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "num_objects", c.num_objects);
  read(j, "num_classes", c.num_classes);
  if (j.contains("sprite_kind")) c.sprite_kind = enum_from(j.at("sprite_kind").get<std::string>(), kSprites, "sprite_kind");
  read(j, "sprite_size", c.sprite_size);
  read(j, "noise_std", c.noise_std);
}

}  // namespace

ordered_json to_json(const SynthConfig& c) {
  ordered_json j = ordered_json::object();
  synth_fields(j, c);
  return j;
}

ordered_json to_json(const DataConfig& c) {
  ordered_json j = ordered_json::object();
  synth_fields(j, c.synth);
  j["num_train"] = c.num_train;
  j["num_val"] = c.num_val;
  j["seed"] = c.seed;
  return j;
}

ordered_json to_json(const ModelConfig& c) {
  ordered_json j = ordered_json::object();
  j["frames"] = c.frames;
  j["height"] = c.height;
  j["width"] = c.width;
  j["channels"] = c.channels;
  j["tube"] = {c.tube.t, c.tube.h, c.tube.w};
  j["pixel_mean"] = c.pixel_mean;
  j["pixel_std"] = c.pixel_std;
  j["depth"] = c.depth;
  j["dim"] = c.dim;
  j["heads"] = c.heads;
  j["mlp_hidden"] = c.mlp_hidden;
  j["num_classes"] = c.num_classes;
  j["oam_layers"] = c.oam_layers;
  j["aggregation"] = enum_name(c.aggregation, kAggs);
  j["use_identity_embedding"] = c.use_identity_embedding;
  j["max_tracks"] = c.max_tracks;
  return j;
}

ordered_json to_json(const SamplerConfig& c) {
  ordered_json j = ordered_json::object();
  j["mode"] = enum_name(c.mode, kModes);
  j["fg_ratio"] = c.fg_ratio;
  j["bg_ratio"] = c.bg_ratio;
  j["seed"] = c.seed;
  j["drop_layer"] = c.drop_layer;
  return j;
}

ordered_json to_json(const TrainConfig& c) {
  ordered_json j = ordered_json::object();
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["weight_decay"] = c.weight_decay;
  j["label_smoothing"] = c.label_smoothing;
  j["cosine_decay"] = c.cosine_decay;
  j["warmup_steps"] = c.warmup_steps;
  j["seed"] = c.seed;
  return j;
}

ordered_json to_json(const SweepConfig& c) {
  ordered_json j = ordered_json::object();
  j["keep_ratios"] = c.keep_ratios;
  j["methods"] = c.methods;
  j["views"] = c.views;
  j["seeds"] = c.seeds;
  if (c.checkpoint) j["checkpoint"] = *c.checkpoint;
  return j;
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j = ordered_json::object();
  j["data"] = to_json(c.data);
  j["model"] = to_json(c.model);
  j["sampler"] = to_json(c.sampler);
  j["train"] = to_json(c.train);
  j["sweep"] = to_json(c.sweep);
  return j;
}

void from_json(const json& j, SynthConfig& c) {
  reject_unknown(j, "synth",
                 {"frames", "height", "width", "num_objects", "num_classes", "sprite_kind", "sprite_size", "noise_std"});
  read_synth(j, c);
}

void from_json(const json& j, DataConfig& c) {
  reject_unknown(j, "data",
                 {"frames", "height", "width", "num_objects", "num_classes", "sprite_kind", "sprite_size", "noise_std",
                  "num_train", "num_val", "seed"});
  read_synth(j, c.synth);
  read(j, "num_train", c.num_train);
  read(j, "num_val", c.num_val);
  read(j, "seed", c.seed);
}

void from_json(const json& j, ModelConfig& c) {
  reject_unknown(j, "model",
                 {"frames", "height", "width", "channels", "tube", "pixel_mean", "pixel_std", "depth", "dim", "heads", "mlp_hidden", "num_classes",
                  "oam_layers", "aggregation", "use_identity_embedding", "max_tracks"});
  read(j, "frames", c.frames);
  read(j, "height", c.height);
  read(j, "width", c.width);
  read(j, "channels", c.channels);
  if (j.contains("tube")) {
    const auto t = j.at("tube").get<std::vector<int>>();
    if (t.size() != 3) throw std::invalid_argument("config: tube must be [dt, dh, dw]");
    c.tube = TubeDims{t[0], t[1], t[2]};
  }
  read(j, "pixel_mean", c.pixel_mean);
  read(j, "pixel_std", c.pixel_std);
  read(j, "depth", c.depth);
  read(j, "dim", c.dim);
  read(j, "heads", c.heads);
  read(j, "mlp_hidden", c.mlp_hidden);
  read(j, "num_classes", c.num_classes);
  read(j, "oam_layers", c.oam_layers);
  if (j.contains("aggregation")) c.aggregation = enum_from(j.at("aggregation").get<std::string>(), kAggs, "aggregation");
  read(j, "use_identity_embedding", c.use_identity_embedding);
  read(j, "max_tracks", c.max_tracks);
}

void from_json(const json& j, SamplerConfig& c) {
  reject_unknown(j, "sampler", {"mode", "fg_ratio", "bg_ratio", "seed", "drop_layer"});
  if (j.contains("mode")) c.mode = enum_from(j.at("mode").get<std::string>(), kModes, "sampler mode");
  read(j, "fg_ratio", c.fg_ratio);
  read(j, "bg_ratio", c.bg_ratio);
  read(j, "seed", c.seed);
  read(j, "drop_layer", c.drop_layer);
}

void from_json(const json& j, TrainConfig& c) {
  reject_unknown(j, "train",
                 {"epochs", "batch_size", "learning_rate", "weight_decay", "label_smoothing", "cosine_decay",
                  "warmup_steps", "seed"});
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.learning_rate);
  read(j, "weight_decay", c.weight_decay);
  read(j, "label_smoothing", c.label_smoothing);
  read(j, "cosine_decay", c.cosine_decay);
  read(j, "warmup_steps", c.warmup_steps);
  read(j, "seed", c.seed);
}

void from_json(const json& j, SweepConfig& c) {
  reject_unknown(j, "sweep", {"keep_ratios", "methods", "views", "seeds", "checkpoint"});
  read(j, "keep_ratios", c.keep_ratios);
  read(j, "methods", c.methods);
  read(j, "views", c.views);
  read(j, "seeds", c.seeds);
  if (j.contains("checkpoint")) c.checkpoint = j.at("checkpoint").get<std::string>();
}

void from_json(const json& j, ExperimentConfig& c) {
  reject_unknown(j, "config", {"data", "model", "sampler", "train", "sweep"});
  if (j.contains("data")) from_json(j.at("data"), c.data);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("sampler")) from_json(j.at("sampler"), c.sampler);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("sweep")) from_json(j.at("sweep"), c.sweep);
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  from_json(json::parse(text), c);
  return c;
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("OVV_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw std::invalid_argument(std::string("OVV_SEED is not an integer: ") + s);
  return static_cast<std::uint64_t>(v);
}

void apply_seed_override(ExperimentConfig& c, std::optional<std::uint64_t> seed) {
  if (!seed) return;
  c.data.seed = *seed;
  c.sampler.seed = *seed;
  c.train.seed = *seed;
  c.sweep.seeds = {*seed};
}

void apply_seed_override(ExperimentConfig& c) { apply_seed_override(c, env_seed()); }

ExperimentConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  ExperimentConfig c = parse_config(std::string(bytes.begin(), bytes.end()));
  apply_seed_override(c);
  c.data.synth.validate();
  c.model.validate();
  c.sampler.validate(c.model.depth);
  c.train.validate();
  if (c.sweep.views < 1) throw std::invalid_argument("config: sweep.views must be >= 1");
  for (const auto& m : c.sweep.methods) parse_method(m);
  return c;
}

}  // namespace ovv

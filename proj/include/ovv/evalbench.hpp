#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ovv/model.hpp"
#include "ovv/sampler.hpp"
#include "ovv/trainer.hpp"

namespace ovv {

/// Matmul-only FLOP accounting, one multiply-accumulate = 2 FLOPs.
struct FlopReport {
  int tokens = 0;
  int object_tokens = 0;
  int pooled_rows = 0;
  // Per block.
  std::vector<std::uint64_t> attention_projection;  // Q, K, V and output projections
  std::vector<std::uint64_t> attention_scores;      // QK^T and PV
  std::vector<std::uint64_t> mlp;
  std::vector<std::uint64_t> pooling;               // object-token MLP
  std::uint64_t attention_total = 0;
  std::uint64_t scores_total = 0;
  std::uint64_t mlp_total = 0;
  std::uint64_t pooling_total = 0;
  std::uint64_t total = 0;

  std::uint64_t attention(std::size_t block) const { return attention_projection[block] + attention_scores[block]; }
  std::uint64_t block_total(std::size_t block) const { return attention(block) + mlp[block] + pooling[block]; }
};

/// Vanilla block with n tokens: attention 8nD^2 + 4n^2 D, MLP 4nD*hidden.
/// OAM block with m object tokens: K/V projections also cover the m rows,
/// score terms become 4n(n+m)D, plus 4 * pooled_rows * D^2 for the pooling
/// MLP. `pooled_rows` defaults to m * round(n / nt), one token-frame's worth
/// of rows per object token.
FlopReport count_flops(const ModelConfig& cfg, int n_tokens, int n_object_tokens = 0,
                       std::optional<int> pooled_rows = std::nullopt);

struct EvalOptions {
  int views = 1;
  SamplerConfig sampler;
  /// Forces every view onto the same frame offset (for consistency checks).
  std::optional<int> forced_offset;
};

struct EvalResult {
  double accuracy = 0.0;
  double mean_tokens = 0.0;
  std::vector<int> predictions;
  /// [item][view][class]
  std::vector<std::vector<std::vector<double>>> view_logits;
  /// [item][class], arithmetic mean over views
  std::vector<std::vector<double>> mean_logits;
};

/// Multi-view testing: view v samples frames offset + k * stride with offset
/// floor(v * stride / views); logits are averaged over views.
EvalResult evaluate(const ModelConfig& cfg, const ParamStore<float>& params, std::span<const SyntheticVideo> items,
                    const EvalOptions& options);

struct SweepRow {
  std::string method;
  double keep_ratio = 0.0;  // actual surviving tokens / N
  double x = 0.0;
  double y = 0.0;
  int views = 1;
  double tokens = 0.0;
  double accuracy = 0.0;
  std::uint64_t flops = 0;
};

inline constexpr const char* kSweepCsvHeader = "method,keep_ratio,X,Y,views,tokens,accuracy,flops";

std::string sweep_csv(std::span<const SweepRow> rows);
void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows);
/// Accuracy vs keep ratio, one polyline per method.
std::string sweep_svg(std::span<const SweepRow> rows);

enum class Method { baseline_full, uniform_drop, ogs, ogs_oam };

std::string method_name(Method m);
Method parse_method(const std::string& name);

/// One trained-and-evaluated configuration of the comparison.
struct MethodRun {
  Method method = Method::ogs;
  double requested_ratio = 1.0;
  ModelConfig model;
  SamplerConfig sampler;
};

/// Sampler/model settings for a method at a requested keep ratio. OGS uses
/// X = R - Y with Y the default background ratio; uniform-drop keeps exactly
/// as many tokens as OGS does at the same ratio.
MethodRun configure_method(Method method, double keep_ratio, const ModelConfig& base_model,
                           const SamplerConfig& base_sampler);

/// Every (method, ratio) pair of the four-way comparison. baseline-full only
/// at ratio 1.0; uniform-drop and ogs only below 1.0 (at 1.0 they coincide
/// with the baseline).
std::vector<MethodRun> comparison_plan(std::span<const double> ratios, std::span<const Method> methods,
                                       const ModelConfig& base_model, const SamplerConfig& base_sampler);

/// Surviving tokens per clip and FLOPs for a run (detection-independent for
/// everything except the object-token estimate).
SweepRow describe_run(const MethodRun& run, int views, int objects_per_frame);

/// Trains one model per run on the same data, evaluates each with `views`.
std::vector<SweepRow> compare_methods(std::span<const MethodRun> runs, const Dataset& data, const TrainConfig& train_cfg,
                                      int views, std::ostream* progress = nullptr);

/// Evaluates one model at several ratios of its own method (single-model mode).
std::vector<SweepRow> sweep_single_model(const ModelConfig& model, const ParamStore<float>& params, Method method,
                                         const SamplerConfig& base_sampler, std::span<const double> ratios,
                                         std::span<const SyntheticVideo> items, int views, int objects_per_frame);

/// Plain-text table, one line per (method, ratio).
std::string format_comparison(std::span<const SweepRow> rows);

}  // namespace ovv

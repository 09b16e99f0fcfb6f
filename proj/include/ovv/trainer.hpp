#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <string>
#include <span>
#include <vector>

#include "ovv/data_synth.hpp"
#include "ovv/model.hpp"
#include "ovv/sampler.hpp"

namespace ovv {

struct DataConfig {
  SynthConfig synth;
  int num_train = 2000;
  int num_val = 200;
  std::uint64_t seed = 0;
};

struct Dataset {
  std::vector<SyntheticVideo> train;
  std::vector<SyntheticVideo> val;
};

/// Train and validation clips come from disjoint seed ranges derived from
/// cfg.seed, so growing one split never changes the other.
Dataset make_dataset(const DataConfig& cfg);

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 0.05;
  double label_smoothing = 0.1;
  bool cosine_decay = true;
  int warmup_steps = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Also decay 1-row tensors (biases, layer-norm affine terms).
  bool decay_vectors = true;
};

template <typename Scalar>
struct AdamWState {
  ParamStore<Scalar> m;
  ParamStore<Scalar> v;
  long step = 0;
};

/// One decoupled-weight-decay Adam step at learning rate `lr`:
///   p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
template <typename Scalar>
void adamw_step(ParamStore<Scalar>& params, const ParamStore<Scalar>& grads, AdamWState<Scalar>& state, double lr,
                const AdamWConfig& cfg);

/// Linear warmup then (optionally) half-cosine decay to zero at total_steps.
double scheduled_lr(const TrainConfig& cfg, long step, long total_steps);

/// Cross-entropy against (1 - eps) one-hot + eps / K. When `d_logits` is given
/// it receives softmax(logits) - target.
template <typename Scalar>
Scalar cross_entropy_smoothed(std::span<const Scalar> logits, int label, double eps,
                              std::span<Scalar> d_logits = {});

/// Frame grid of one view: frames offset + k * stride with
/// stride = source_frames / model_frames and offset = floor(view * stride / views).
struct ClipView {
  int offset = 0;
  int stride = 1;
};
ClipView clip_view(int source_frames, int model_frames, int view, int views);

template <typename Scalar>
ModelInput<Scalar> prepare_clip(const ModelConfig& cfg, const SyntheticVideo& item, ClipView view);

/// Token plan for one clip under a sampler config.
template <typename Scalar>
TokenPlan make_plan(const ModelInput<Scalar>& input, const SamplerConfig& cfg, std::uint64_t seed) {
  if (cfg.mode == SamplingMode::none) return TokenPlan{};
  const SampleResult r = select_tokens(input.scores, cfg, seed);
  return TokenPlan{r.row_order(), cfg.drop_layer};
}

/// Sampler seed used when evaluating item `index` (shared by all views).
std::uint64_t eval_sampler_seed(const SamplerConfig& cfg, std::size_t index);

/// Logits of one item under one view, sampling with eval_sampler_seed.
template <typename Scalar>
Matrix<Scalar> item_logits(const ModelConfig& cfg, const ParamStore<Scalar>& params, const SamplerConfig& sampler,
                           const SyntheticVideo& item, std::size_t index, ClipView view,
                           int* tokens_used = nullptr);

struct EpochMetrics {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

struct TrainResult {
  ParamStore<float> params;
  std::vector<EpochMetrics> log;
};

/// Mini-batch AdamW training. Each (step, item) draws its own sampler seed
/// from (train seed, step, item), so dropped tokens change across steps.
TrainResult train(const ModelConfig& model_cfg, const SamplerConfig& sampler_cfg, const Dataset& data,
                  const TrainConfig& train_cfg, std::ostream* progress = nullptr);

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> log);

/// A clip plus the plan it is evaluated under; used by gradient checks.
struct GradCheckItem {
  ModelInput<double> input;
  TokenPlan plan;
  int label = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t checked = 0;
};

/// Mean smoothed loss over items and its analytic gradient.
double batch_loss(const ModelConfig& cfg, const ParamStore<double>& params, std::span<const GradCheckItem> items,
                  double label_smoothing, ParamStore<double>* grads);

/// Central differences (step 1e-5) on every scalar parameter against the
/// analytic gradient; error |a - f| / max(|a|, |f|, 1e-6). The floor keeps
/// exactly-zero gradients (key biases, say) from turning roundoff into 100%.
GradCheckReport grad_check(const ModelConfig& cfg, const ParamStore<double>& params,
                           std::span<const GradCheckItem> items, double label_smoothing, double step = 1e-5);

/// Same metric for an arbitrary scalar function of a parameter store.
GradCheckReport finite_difference_check(const std::function<double(const ParamStore<double>&)>& loss,
                                        const ParamStore<double>& params, const ParamStore<double>& analytic,
                                        double step = 1e-5);

}  // namespace ovv

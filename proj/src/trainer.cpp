#include "ovv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ovv/random.hpp"

namespace ovv {

namespace {

constexpr std::uint64_t kTrainSplit = 0;
constexpr std::uint64_t kValSplit = 1;
constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kShuffleStream = 0x5417;
constexpr std::uint64_t kSampleStream = 0x5A3E;
constexpr std::uint64_t kViewStream = 0x71E3;
constexpr std::uint64_t kEvalStream = 0xE7A1;

template <typename S>
int argmax(const Matrix<S>& row) {
  Eigen::Index best = 0;
  row.row(0).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

Dataset make_dataset(const DataConfig& cfg) {
  cfg.synth.validate();
  if (cfg.num_train < 0 || cfg.num_val < 0) throw std::invalid_argument("dataset sizes must be non-negative");
  Dataset d;
  d.train.reserve(static_cast<std::size_t>(cfg.num_train));
  d.val.reserve(static_cast<std::size_t>(cfg.num_val));
  for (int i = 0; i < cfg.num_train; ++i) {
    d.train.push_back(generate_video(cfg.synth, derive_seed(cfg.seed, {kTrainSplit, static_cast<std::uint64_t>(i)})));
    d.train.back().tracks.video_id = "train_" + std::to_string(i);
  }
  for (int i = 0; i < cfg.num_val; ++i) {
    d.val.push_back(generate_video(cfg.synth, derive_seed(cfg.seed, {kValSplit, static_cast<std::uint64_t>(i)})));
    d.val.back().tracks.video_id = "val_" + std::to_string(i);
  }
  return d;
}

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size < 1) throw std::invalid_argument("train: epochs >= 0 and batch_size >= 1 required");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be positive");
  if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw std::invalid_argument("train: label_smoothing in [0, 1)");
  if (warmup_steps < 0) throw std::invalid_argument("train: warmup_steps must be >= 0");
}

template <typename S>
void adamw_step(ParamStore<S>& params, const ParamStore<S>& grads, AdamWState<S>& state, double lr,
                const AdamWConfig& cfg) {
  if (state.m.empty()) {
    state.m = zeros_like(params);
    state.v = zeros_like(params);
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S step_size = static_cast<S>(lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(cfg.eps);
  for (auto& [name, p] : params) {
    auto g_it = grads.find(name);
    if (g_it == grads.end()) continue;
    const auto& g = g_it->second;
    auto& m = state.m.at(name);
    auto& v = state.v.at(name);
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
    if (cfg.weight_decay > 0.0 && (cfg.decay_vectors || p.rows() > 1)) p *= static_cast<S>(1.0 - lr * cfg.weight_decay);
    p.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
  }
}

double scheduled_lr(const TrainConfig& cfg, long step, long total_steps) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.learning_rate * static_cast<double>(step + 1) / cfg.warmup_steps;
  if (!cfg.cosine_decay || total_steps <= cfg.warmup_steps) return cfg.learning_rate;
  const double progress =
      static_cast<double>(step - cfg.warmup_steps) / static_cast<double>(total_steps - cfg.warmup_steps);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename S>
S cross_entropy_smoothed(std::span<const S> logits, int label, double eps, std::span<S> d_logits) {
  const int k = static_cast<int>(logits.size());
  if (label < 0 || label >= k) throw std::invalid_argument("cross_entropy: label outside [0, K)");
  const S mx = *std::max_element(logits.begin(), logits.end());
  S denom = 0;
  for (S v : logits) denom += std::exp(v - mx);
  const S log_z = mx + std::log(denom);
  S loss = 0;
  for (int i = 0; i < k; ++i) {
    const S target = static_cast<S>(eps / k + (i == label ? 1.0 - eps : 0.0));
    const S log_p = logits[static_cast<std::size_t>(i)] - log_z;
    loss -= target * log_p;
    if (!d_logits.empty()) d_logits[static_cast<std::size_t>(i)] = std::exp(log_p) - target;
  }
  return loss;
}

ClipView clip_view(int source_frames, int model_frames, int view, int views) {
  if (views < 1 || view < 0 || view >= views) throw std::invalid_argument("clip_view: view outside [0, views)");
  if (model_frames < 1 || source_frames % model_frames != 0)
    throw std::invalid_argument("clip_view: source frames must be a multiple of model frames");
  const int stride = source_frames / model_frames;
  return ClipView{view * stride / views, stride};
}

template <typename S>
ModelInput<S> prepare_clip(const ModelConfig& cfg, const SyntheticVideo& item, ClipView view) {
  const VideoTensor clip = item.video.sample_frames(view.offset, view.stride, cfg.frames);
  const DetectionTrackSet tracks = item.tracks.sample_frames(view.offset, view.stride, cfg.frames);
  return prepare_input<S>(cfg, clip, tracks);
}

std::uint64_t eval_sampler_seed(const SamplerConfig& cfg, std::size_t index) {
  return derive_seed(cfg.seed, {kEvalStream, static_cast<std::uint64_t>(index)});
}

template <typename S>
Matrix<S> item_logits(const ModelConfig& cfg, const ParamStore<S>& params, const SamplerConfig& sampler,
                      const SyntheticVideo& item, std::size_t index, ClipView view, int* tokens_used) {
  const ModelInput<S> input = prepare_clip<S>(cfg, item, view);
  const TokenPlan plan = make_plan(input, sampler, eval_sampler_seed(sampler, index));
  if (tokens_used) *tokens_used = plan.keep ? static_cast<int>(plan.keep->size()) : input.grid.size();
  return forward(cfg, params, input, plan);
}

TrainResult train(const ModelConfig& model_cfg, const SamplerConfig& sampler_cfg, const Dataset& data,
                  const TrainConfig& cfg, std::ostream* progress) {
  model_cfg.validate();
  sampler_cfg.validate(model_cfg.depth);
  cfg.validate();

  TrainResult result;
  result.params = init_params<float>(model_cfg, derive_seed(cfg.seed, {kInitStream}));
  if (cfg.epochs == 0 || data.train.empty()) return result;

  const int n_train = static_cast<int>(data.train.size());
  const long steps_per_epoch = (n_train + cfg.batch_size - 1) / cfg.batch_size;
  const long total_steps = steps_per_epoch * cfg.epochs;
  const int source_frames = data.train.front().video.frames;

  AdamWState<float> opt;
  AdamWConfig adam;
  adam.weight_decay = cfg.weight_decay;
  adam.decay_vectors = false;
  ParamStore<float> grads = zeros_like(result.params);
  ForwardCache<float> cache;
  std::vector<int> order(static_cast<std::size_t>(n_train));
  long step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(),
                 std::mt19937_64(derive_seed(cfg.seed, {kShuffleStream, static_cast<std::uint64_t>(epoch)})));
    double loss_sum = 0.0;
    int correct = 0;

    for (long b = 0; b < steps_per_epoch; ++b, ++step) {
      for (auto& [name, g] : grads) g.setZero();
      const int begin = static_cast<int>(b * cfg.batch_size);
      const int end = std::min(n_train, begin + cfg.batch_size);
      for (int i = begin; i < end; ++i) {
        const auto& item = data.train[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        const auto item_seed = derive_seed(cfg.seed, {kSampleStream, static_cast<std::uint64_t>(step),
                                                      static_cast<std::uint64_t>(i - begin)});
        const int stride = source_frames / model_cfg.frames;
        const ClipView view{static_cast<int>(derive_seed(item_seed, {kViewStream}) % static_cast<std::uint64_t>(stride)),
                            stride};
        const ModelInput<float> input = prepare_clip<float>(model_cfg, item, view);
        const TokenPlan plan = make_plan(input, sampler_cfg, item_seed);
        const Matrix<float> logits = forward(model_cfg, result.params, input, plan, &cache);
        Matrix<float> d_logits(1, logits.cols());
        const float loss = cross_entropy_smoothed<float>({logits.data(), static_cast<std::size_t>(logits.cols())},
                                                         item.label, cfg.label_smoothing,
                                                         {d_logits.data(), static_cast<std::size_t>(d_logits.cols())});
        loss_sum += loss;
        if (argmax(logits) == item.label) ++correct;
        backward(model_cfg, result.params, input, plan, cache, d_logits, grads);
      }
      const float inv = 1.0f / static_cast<float>(end - begin);
      for (auto& [name, g] : grads) g *= inv;
      adamw_step(result.params, grads, opt, scheduled_lr(cfg, step, total_steps), adam);
    }

    int val_correct = 0;
    for (std::size_t i = 0; i < data.val.size(); ++i) {
      const auto& item = data.val[i];
      const Matrix<float> logits = item_logits(model_cfg, result.params, sampler_cfg, item, i,
                                               clip_view(item.video.frames, model_cfg.frames, 0, 1));
      if (argmax(logits) == item.label) ++val_correct;
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.step = step;
    m.loss = loss_sum / n_train;
    m.train_acc = static_cast<double>(correct) / n_train;
    m.val_acc = data.val.empty() ? 0.0 : static_cast<double>(val_correct) / static_cast<double>(data.val.size());
    result.log.push_back(m);
    if (progress)
      *progress << "epoch " << m.epoch << " step " << m.step << " loss " << m.loss << " train_acc " << m.train_acc
                << " val_acc " << m.val_acc << std::endl;
  }
  return result;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,step,loss,train_acc,val_acc\n";
  out << std::setprecision(9);
  for (const auto& m : log) out << m.epoch << ',' << m.step << ',' << m.loss << ',' << m.train_acc << ',' << m.val_acc << '\n';
}

double batch_loss(const ModelConfig& cfg, const ParamStore<double>& params, std::span<const GradCheckItem> items,
                  double label_smoothing, ParamStore<double>* grads) {
  if (items.empty()) throw std::invalid_argument("batch_loss: empty batch");
  double total = 0.0;
  ForwardCache<double> cache;
  const double inv = 1.0 / static_cast<double>(items.size());
  for (const auto& item : items) {
    const Matrix<double> logits = forward(cfg, params, item.input, item.plan, grads ? &cache : nullptr);
    Matrix<double> d_logits(1, logits.cols());
    total += cross_entropy_smoothed<double>({logits.data(), static_cast<std::size_t>(logits.cols())}, item.label,
                                            label_smoothing,
                                            {d_logits.data(), static_cast<std::size_t>(d_logits.cols())});
    if (grads) {
      d_logits *= inv;
      backward(cfg, params, item.input, item.plan, cache, d_logits, *grads);
    }
  }
  return total * inv;
}

GradCheckReport finite_difference_check(const std::function<double(const ParamStore<double>&)>& loss,
                                        const ParamStore<double>& params, const ParamStore<double>& analytic,
                                        double step) {
  GradCheckReport report;
  ParamStore<double> probe = params;
  for (auto& [name, p] : probe) {
    const auto a_it = analytic.find(name);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double original = p.data()[i];
      p.data()[i] = original + step;
      const double up = loss(probe);
      p.data()[i] = original - step;
      const double down = loss(probe);
      p.data()[i] = original;
      const double numeric = (up - down) / (2.0 * step);
      const double a = a_it == analytic.end() ? 0.0 : a_it->second.data()[i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++report.checked;
      if (err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst_parameter = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

GradCheckReport grad_check(const ModelConfig& cfg, const ParamStore<double>& params,
                           std::span<const GradCheckItem> items, double label_smoothing, double step) {
  ParamStore<double> grads = zeros_like(params);
  batch_loss(cfg, params, items, label_smoothing, &grads);
  return finite_difference_check(
      [&](const ParamStore<double>& p) { return batch_loss(cfg, p, items, label_smoothing, nullptr); }, params, grads,
      step);
}

template void adamw_step(ParamStore<float>&, const ParamStore<float>&, AdamWState<float>&, double,
                         const AdamWConfig&);
template void adamw_step(ParamStore<double>&, const ParamStore<double>&, AdamWState<double>&, double,
                         const AdamWConfig&);
template float cross_entropy_smoothed(std::span<const float>, int, double, std::span<float>);
template double cross_entropy_smoothed(std::span<const double>, int, double, std::span<double>);
template ModelInput<float> prepare_clip(const ModelConfig&, const SyntheticVideo&, ClipView);
template ModelInput<double> prepare_clip(const ModelConfig&, const SyntheticVideo&, ClipView);
template Matrix<float> item_logits(const ModelConfig&, const ParamStore<float>&, const SamplerConfig&,
                                   const SyntheticVideo&, std::size_t, ClipView, int*);
template Matrix<double> item_logits(const ModelConfig&, const ParamStore<double>&, const SamplerConfig&,
                                    const SyntheticVideo&, std::size_t, ClipView, int*);

}  // namespace ovv

#include "ovv/evalbench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ovv {

FlopReport count_flops(const ModelConfig& cfg, int n_tokens, int n_object_tokens, std::optional<int> pooled_rows) {
  if (n_tokens < 0 || n_object_tokens < 0) throw std::invalid_argument("count_flops: counts must be non-negative");
  const std::uint64_t n = static_cast<std::uint64_t>(n_tokens);
  const std::uint64_t d = static_cast<std::uint64_t>(cfg.dim);
  const std::uint64_t hidden = static_cast<std::uint64_t>(cfg.mlp_hidden);
  const int nt = cfg.grid().nt;
  const int rows = pooled_rows ? *pooled_rows
                               : n_object_tokens * static_cast<int>(std::lround(static_cast<double>(n_tokens) / nt));

  FlopReport r;
  r.tokens = n_tokens;
  r.object_tokens = n_object_tokens;
  r.pooled_rows = rows;
  for (int l = 0; l < cfg.depth; ++l) {
    const bool oam = cfg.is_oam_layer(l) && n_object_tokens > 0 && n_tokens > 0;
    const std::uint64_t m = oam ? static_cast<std::uint64_t>(n_object_tokens) : 0;
    // Q and output projections over n rows, K and V over n + m rows.
    r.attention_projection.push_back(4 * n * d * d + 4 * (n + m) * d * d);
    r.attention_scores.push_back(4 * n * (n + m) * d);
    r.mlp.push_back(4 * n * d * hidden);
    r.pooling.push_back(oam ? 4 * static_cast<std::uint64_t>(rows) * d * d : 0);
  }
  for (int l = 0; l < cfg.depth; ++l) {
    const auto b = static_cast<std::size_t>(l);
    r.attention_total += r.attention(b);
    r.scores_total += r.attention_scores[b];
    r.mlp_total += r.mlp[b];
    r.pooling_total += r.pooling[b];
  }
  r.total = r.attention_total + r.mlp_total + r.pooling_total;
  return r;
}

EvalResult evaluate(const ModelConfig& cfg, const ParamStore<float>& params, std::span<const SyntheticVideo> items,
                    const EvalOptions& options) {
  if (options.views < 1) throw std::invalid_argument("evaluate: views must be >= 1");
  EvalResult r;
  int correct = 0;
  double tokens = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& item = items[i];
    std::vector<std::vector<double>> per_view;
    std::vector<double> mean(static_cast<std::size_t>(cfg.num_classes), 0.0);
    for (int v = 0; v < options.views; ++v) {
      ClipView view = clip_view(item.video.frames, cfg.frames, v, options.views);
      if (options.forced_offset) view.offset = *options.forced_offset;
      int used = 0;
      const Matrix<float> logits = item_logits(cfg, params, options.sampler, item, i, view, &used);
      tokens += used;
      std::vector<double> row(static_cast<std::size_t>(logits.cols()));
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        row[static_cast<std::size_t>(c)] = logits(0, c);
        mean[static_cast<std::size_t>(c)] += logits(0, c);
      }
      per_view.push_back(std::move(row));
    }
    for (double& m : mean) m /= options.views;
    const int pred = static_cast<int>(std::max_element(mean.begin(), mean.end()) - mean.begin());
    if (pred == item.label) ++correct;
    r.predictions.push_back(pred);
    r.view_logits.push_back(std::move(per_view));
    r.mean_logits.push_back(std::move(mean));
  }
  if (!items.empty()) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
    r.mean_tokens = tokens / static_cast<double>(items.size() * static_cast<std::size_t>(options.views));
  }
  return r;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << kSweepCsvHeader << '\n';
  out << std::setprecision(10);
  for (const auto& r : rows)
    out << r.method << ',' << r.keep_ratio << ',' << r.x << ',' << r.y << ',' << r.views << ',' << r.tokens << ','
        << r.accuracy << ',' << r.flops << '\n';
  return out.str();
}

void write_sweep_csv(const std::filesystem::path& path, std::span<const SweepRow> rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << sweep_csv(rows);
}

std::string sweep_svg(std::span<const SweepRow> rows) {
  constexpr double kW = 640, kH = 420, kLeft = 60, kRight = 170, kTop = 30, kBottom = 50;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double keep) { return kLeft + keep * pw; };
  auto py = [&](double acc) { return kTop + (1.0 - acc) * ph; };
  static constexpr std::array<const char*, 6> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                                         "#8c564b"};

  std::vector<std::string> methods;
  for (const auto& r : rows)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\"" << kTop + ph
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + ph
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = i / 5.0;
    s << "<text x=\"" << px(v) << "\" y=\"" << kTop + ph + 18 << "\" font-size=\"11\" text-anchor=\"middle\">" << v
      << "</text>\n";
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(v) + 4 << "\" font-size=\"11\" text-anchor=\"end\">" << v
      << "</text>\n";
  }
  s << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kH - 10
    << "\" font-size=\"12\" text-anchor=\"middle\">keep ratio (X+Y)</text>\n";
  s << "<text x=\"15\" y=\"" << kTop + ph / 2 << "\" font-size=\"12\" transform=\"rotate(-90 15 " << kTop + ph / 2
    << ")\" text-anchor=\"middle\">accuracy</text>\n";

  for (std::size_t mi = 0; mi < methods.size(); ++mi) {
    const char* color = kColors[mi % kColors.size()];
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : rows)
      if (r.method == methods[mi]) pts.emplace_back(r.keep_ratio, r.accuracy);
    std::sort(pts.begin(), pts.end());
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) s << (i ? " " : "") << px(pts[i].first) << ',' << py(pts[i].second);
    s << "\"/>\n";
    for (const auto& [k, a] : pts)
      s << "<circle cx=\"" << px(k) << "\" cy=\"" << py(a) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    const double ly = kTop + 16.0 * static_cast<double>(mi);
    s << "<line x1=\"" << kW - kRight + 15 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 35 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << kW - kRight + 40 << "\" y=\"" << ly + 4 << "\" font-size=\"11\">" << methods[mi]
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string method_name(Method m) {
  switch (m) {
    case Method::baseline_full: return "baseline-full";
    case Method::uniform_drop: return "uniform-drop";
    case Method::ogs: return "ogs";
    case Method::ogs_oam: return "ogs+oam";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (Method m : {Method::baseline_full, Method::uniform_drop, Method::ogs, Method::ogs_oam})
    if (method_name(m) == name) return m;
  throw std::invalid_argument("unknown method '" + name + "'");
}

MethodRun configure_method(Method method, double keep_ratio, const ModelConfig& base_model,
                           const SamplerConfig& base_sampler) {
  if (!(keep_ratio > 0.0) || keep_ratio > 1.0) throw std::invalid_argument("keep ratio must be in (0, 1]");
  MethodRun run{method, keep_ratio, base_model, base_sampler};
  const double total = std::round(100.0 * keep_ratio * 1e6) / 1e6;
  const double bg = default_bg_ratio(total);
  const double fg = total - bg;
  const int n = base_model.grid().size();

  run.model.oam_layers.clear();
  switch (method) {
    case Method::baseline_full:
      run.sampler.mode = SamplingMode::none;
      break;
    case Method::ogs_oam:
      run.model.oam_layers = base_model.oam_layers.empty() ? default_oam_layers(base_model.depth) : base_model.oam_layers;
      [[fallthrough]];
    case Method::ogs:
      run.sampler.mode = SamplingMode::object_guided;
      run.sampler.fg_ratio = fg;
      run.sampler.bg_ratio = bg;
      break;
    case Method::uniform_drop: {
      const int k_fg = percent_count(fg, n);
      const int k = k_fg + std::min(percent_count(bg, n), n - k_fg);
      run.sampler.mode = SamplingMode::uniform;
      run.sampler.fg_ratio = 0.0;
      run.sampler.bg_ratio = 100.0 * k / n;
      break;
    }
  }
  return run;
}

std::vector<MethodRun> comparison_plan(std::span<const double> ratios, std::span<const Method> methods,
                                       const ModelConfig& base_model, const SamplerConfig& base_sampler) {
  std::vector<MethodRun> plan;
  for (Method m : methods)
    for (double r : ratios) {
      const bool full = r >= 1.0 - 1e-12;
      if (m == Method::baseline_full && !full) continue;
      if ((m == Method::uniform_drop || m == Method::ogs) && full) continue;
      plan.push_back(configure_method(m, r, base_model, base_sampler));
    }
  return plan;
}

SweepRow describe_run(const MethodRun& run, int views, int objects_per_frame) {
  const TokenGridSpec grid = run.model.grid();
  const std::vector<double> positive(static_cast<std::size_t>(grid.size()), 1.0);
  const int tokens = select_tokens(positive, run.sampler, run.sampler.seed).size();
  const int objects = run.model.oam_layers.empty() ? 0 : objects_per_frame * grid.nt;

  SweepRow row;
  row.method = method_name(run.method);
  row.keep_ratio = static_cast<double>(tokens) / grid.size();
  row.x = run.sampler.mode == SamplingMode::object_guided ? run.sampler.fg_ratio
          : run.sampler.mode == SamplingMode::none        ? 100.0
                                                          : 0.0;
  row.y = run.sampler.mode == SamplingMode::none ? 0.0 : run.sampler.bg_ratio;
  row.views = views;
  row.tokens = tokens;
  row.flops = count_flops(run.model, tokens, objects).total;
  return row;
}

std::vector<SweepRow> compare_methods(std::span<const MethodRun> runs, const Dataset& data, const TrainConfig& train_cfg,
                                      int views, std::ostream* progress) {
  std::vector<SweepRow> rows;
  const int objects = data.train.empty() ? 0 : data.train.front().tracks.num_tracks;
  for (const auto& run : runs) {
    if (progress)
      *progress << "== " << method_name(run.method) << " @ " << run.requested_ratio << " (X=" << run.sampler.fg_ratio
                << ", Y=" << run.sampler.bg_ratio << ")" << std::endl;
    const TrainResult trained = train(run.model, run.sampler, data, train_cfg, progress);
    const EvalResult eval = evaluate(run.model, trained.params, data.val, EvalOptions{views, run.sampler, std::nullopt});
    SweepRow row = describe_run(run, views, objects);
    row.accuracy = eval.accuracy;
    row.tokens = eval.mean_tokens;
    row.keep_ratio = eval.mean_tokens / run.model.grid().size();
    rows.push_back(row);
    if (progress) *progress << "   accuracy " << row.accuracy << " tokens " << row.tokens << std::endl;
  }
  return rows;
}

std::vector<SweepRow> sweep_single_model(const ModelConfig& model, const ParamStore<float>& params, Method method,
                                         const SamplerConfig& base_sampler, std::span<const double> ratios,
                                         std::span<const SyntheticVideo> items, int views, int objects_per_frame) {
  std::vector<SweepRow> rows;
  for (double r : ratios) {
    MethodRun run = configure_method(method, r, model, base_sampler);
    // The trained model decides the architecture; only the sampler varies.
    run.model = model;
    const EvalResult eval = evaluate(model, params, items, EvalOptions{views, run.sampler, std::nullopt});
    SweepRow row = describe_run(run, views, objects_per_frame);
    row.accuracy = eval.accuracy;
    row.tokens = eval.mean_tokens;
    row.keep_ratio = eval.mean_tokens / model.grid().size();
    rows.push_back(row);
  }
  return rows;
}

std::string format_comparison(std::span<const SweepRow> rows) {
  std::ostringstream out;
  out << std::left << std::setw(15) << "method" << std::setw(8) << "keep" << std::setw(8) << "X" << std::setw(8)
      << "Y" << std::setw(7) << "views" << std::setw(9) << "tokens" << std::setw(10) << "accuracy"
      << "flops\n";
  out << std::fixed;
  for (const auto& r : rows)
    out << std::setw(15) << r.method << std::setw(8) << std::setprecision(3) << r.keep_ratio << std::setw(8)
        << std::setprecision(1) << r.x << std::setw(8) << r.y << std::setw(7) << r.views << std::setw(9)
        << std::setprecision(1) << r.tokens << std::setw(10) << std::setprecision(4) << r.accuracy << r.flops
        << '\n';
  return out.str();
}

}  // namespace ovv

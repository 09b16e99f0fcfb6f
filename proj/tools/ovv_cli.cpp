// ovv: generate data, train, evaluate, sweep token budgets, count FLOPs and
// check gradients.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "ovv/annotations.hpp"
#include "ovv/checkpoint.hpp"
#include "ovv/config.hpp"
#include "ovv/evalbench.hpp"
#include "ovv/heatmap.hpp"
#include "ovv/random.hpp"
#include "ovv/trainer.hpp"
#include "ovv/video.hpp"

namespace fs = std::filesystem;
using namespace ovv;

namespace {

// Data directory layout:
//   labels.csv                 split,video_id,label,designated_track
//   {train,val}/<id>.ovvt      video, [T, H, W, C] f32
//   {train,val}/<id>.jsonl     per-frame boxes with track ids
//   {train,val}/<id>.heat.ovvt class-agnostic center heatmap, [T, H, W, 1]
void write_split(const fs::path& dir, const char* split, const std::vector<SyntheticVideo>& items, std::ostream& labels) {
  fs::create_directories(dir / split);
  for (const auto& item : items) {
    const std::string& id = item.tracks.video_id;
    write_video(dir / split / (id + ".ovvt"), item.video);
    write_annotations(dir / split / (id + ".jsonl"), item.tracks);
    std::vector<Heatmap> maps;
    for (const auto& frame : item.tracks.frames)
      maps.push_back(render_class_agnostic(frame, item.video.height, item.video.width));
    maps.resize(static_cast<std::size_t>(item.video.frames), Heatmap::zeros(item.video.height, item.video.width));
    write_heatmaps(dir / split / (id + ".heat.ovvt"), maps);
    labels << split << ',' << id << ',' << item.label << ',' << item.designated_track << '\n';
  }
}

Dataset read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "labels.csv");
  if (!in) throw std::runtime_error("cannot open " + (dir / "labels.csv").string());
  Dataset d;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string split, id, label, designated;
    std::getline(ss, split, ',');
    std::getline(ss, id, ',');
    std::getline(ss, label, ',');
    std::getline(ss, designated, ',');
    SyntheticVideo v;
    v.video = read_video(dir / split / (id + ".ovvt"));
    v.tracks = read_annotations(dir / split / (id + ".jsonl"));
    v.label = std::stoi(label);
    v.designated_track = std::stoi(designated);
    (split == "train" ? d.train : d.val).push_back(std::move(v));
  }
  return d;
}

Method method_of(const ModelConfig& model, const SamplerConfig& sampler) {
  if (!model.oam_layers.empty()) return Method::ogs_oam;
  switch (sampler.mode) {
    case SamplingMode::none: return Method::baseline_full;
    case SamplingMode::uniform: return Method::uniform_drop;
    case SamplingMode::object_guided: return Method::ogs;
  }
  return Method::ogs;
}

int cmd_gen(const fs::path& config, const fs::path& out) {
  const ExperimentConfig cfg = load_config(config);
  const Dataset data = make_dataset(cfg.data);
  fs::create_directories(out);
  std::ofstream labels(out / "labels.csv", std::ios::binary | std::ios::trunc);
  labels << "split,video_id,label,designated_track\n";
  write_split(out, "train", data.train, labels);
  write_split(out, "val", data.val, labels);
  std::ofstream(out / "data.json", std::ios::binary | std::ios::trunc) << to_json(cfg.data).dump(2) << '\n';
  std::cout << "wrote " << data.train.size() << " train and " << data.val.size() << " val clips to " << out << '\n';
  return 0;
}

int cmd_train(const fs::path& config, const fs::path& data_dir, const fs::path& out) {
  const ExperimentConfig cfg = load_config(config);
  const Dataset data = read_dataset(data_dir);
  const TrainResult r = train(cfg.model, cfg.sampler, data, cfg.train, &std::cout);
  save_checkpoint(out, Checkpoint{cfg.model, cfg.sampler, r.params});
  const fs::path metrics = out.string() + ".metrics.csv";
  write_metrics_csv(metrics, r.log);
  std::cout << "checkpoint " << out << ", metrics " << metrics << '\n';
  return 0;
}

int cmd_eval(const fs::path& ckpt_path, const fs::path& data_dir, int views, const std::string& split) {
  const Checkpoint ckpt = load_checkpoint(ckpt_path);
  const Dataset data = read_dataset(data_dir);
  const auto& items = split == "train" ? data.train : data.val;
  const EvalResult r = evaluate(ckpt.model, ckpt.params, items, EvalOptions{views, ckpt.sampler, std::nullopt});
  std::cout << std::fixed << std::setprecision(4) << "items " << items.size() << "  views " << views << "  tokens "
            << std::setprecision(1) << r.mean_tokens << "  accuracy " << std::setprecision(4) << r.accuracy << '\n';
  return 0;
}

int cmd_sweep(const fs::path& config, const fs::path& out) {
  const ExperimentConfig cfg = load_config(config);
  std::vector<SweepRow> rows;

  if (cfg.sweep.checkpoint) {
    const Checkpoint ckpt = load_checkpoint(*cfg.sweep.checkpoint);
    const Dataset data = make_dataset(cfg.data);
    rows = sweep_single_model(ckpt.model, ckpt.params, method_of(ckpt.model, ckpt.sampler), ckpt.sampler,
                              cfg.sweep.keep_ratios, data.val, cfg.sweep.views, cfg.data.synth.num_objects);
  } else {
    std::vector<Method> methods;
    for (const auto& m : cfg.sweep.methods) methods.push_back(parse_method(m));
    const auto plan = comparison_plan(cfg.sweep.keep_ratios, methods, cfg.model, cfg.sampler);
    // Seed means: accumulate per (method, ratio) position in the plan.
    for (std::size_t s = 0; s < cfg.sweep.seeds.size(); ++s) {
      ExperimentConfig seeded = cfg;
      apply_seed_override(seeded, cfg.sweep.seeds[s]);
      std::vector<MethodRun> runs = plan;
      for (auto& run : runs) run.sampler.seed = seeded.sampler.seed;
      std::cout << "# seed " << cfg.sweep.seeds[s] << '\n';
      const Dataset data = make_dataset(seeded.data);
      const auto seed_rows = compare_methods(runs, data, seeded.train, cfg.sweep.views, &std::cout);
      if (rows.empty()) {
        rows = seed_rows;
      } else {
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i].accuracy += seed_rows[i].accuracy;
      }
    }
    for (auto& r : rows) r.accuracy /= static_cast<double>(cfg.sweep.seeds.size());
  }

  write_sweep_csv(out, rows);
  fs::path svg = out;
  svg.replace_extension(".svg");
  std::ofstream(svg, std::ios::binary | std::ios::trunc) << sweep_svg(rows);
  std::cout << format_comparison(rows) << "wrote " << out << " and " << svg << '\n';
  return 0;
}

int cmd_flops(const fs::path& config, int tokens, int objects) {
  const ExperimentConfig cfg = load_config(config);
  const FlopReport r = count_flops(cfg.model, tokens, objects);
  std::cout << "block  attention      scores         mlp            pooling        total\n";
  for (std::size_t b = 0; b < r.mlp.size(); ++b)
    std::cout << std::left << std::setw(7) << b << std::setw(15) << r.attention(b) << std::setw(15)
              << r.attention_scores[b] << std::setw(15) << r.mlp[b] << std::setw(15) << r.pooling[b]
              << r.block_total(b) << '\n';
  std::cout << "total  " << r.total << " FLOPs (" << std::setprecision(4) << r.total / 1e9 << " GFLOPs)\n";
  return 0;
}

int cmd_gradcheck(const fs::path& config, int items, double tolerance, double scale) {
  const ExperimentConfig cfg = load_config(config);
  DataConfig dc = cfg.data;
  dc.num_train = items;
  dc.num_val = 0;
  const Dataset data = make_dataset(dc);
  auto params = init_params<double>(cfg.model, derive_seed(cfg.train.seed, {0x6C}));
  perturb_params(params, derive_seed(cfg.train.seed, {0x6D}), scale);
  std::vector<GradCheckItem> batch;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    const auto& item = data.train[i];
    const ClipView view = clip_view(item.video.frames, cfg.model.frames, 0, 1);
    auto input = prepare_clip<double>(cfg.model, item, view);
    TokenPlan plan = make_plan(input, cfg.sampler, derive_seed(cfg.sampler.seed, {i}));
    batch.push_back({std::move(input), std::move(plan), item.label});
  }
  const GradCheckReport r = grad_check(cfg.model, params, batch, cfg.train.label_smoothing);
  std::cout << std::scientific << std::setprecision(3) << "checked " << r.checked << " scalars, max relative error "
            << r.max_relative_error << " (" << r.worst_parameter << ")\n";
  return r.max_relative_error < tolerance ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Object-guided token sampling and object-aware attention for a small video transformer"};
  app.require_subcommand(1);

  std::string config, out, data, ckpt, split = "val";
  int views = 1, tokens = 0, objects = 0, items = 2;
  double tolerance = 1e-4, scale = 0.6;

  auto* gen = app.add_subcommand("gen", "Generate the synthetic moving-shapes dataset");
  gen->add_option("--config", config)->required();
  gen->add_option("--out", out)->required();

  auto* tr = app.add_subcommand("train", "Train one model");
  tr->add_option("--config", config)->required();
  tr->add_option("--data", data)->required();
  tr->add_option("--out", out, "Checkpoint path")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint with multi-view testing");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--data", data)->required();
  ev->add_option("--views", views)->check(CLI::PositiveNumber);
  ev->add_option("--split", split)->check(CLI::IsMember({"train", "val"}));

  auto* sw = app.add_subcommand("sweep", "Token-budget sweep, CSV plus SVG");
  sw->add_option("--config", config)->required();
  sw->add_option("--out", out, "CSV path")->required();

  auto* fl = app.add_subcommand("flops", "Matmul FLOPs for a token count");
  fl->add_option("--config", config)->required();
  fl->add_option("--tokens", tokens)->required()->check(CLI::NonNegativeNumber);
  fl->add_option("--objects", objects, "Object tokens in OAM layers")->check(CLI::NonNegativeNumber);

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check in double precision");
  gc->add_option("--config", config)->required();
  gc->add_option("--items", items)->check(CLI::PositiveNumber);
  gc->add_option("--tolerance", tolerance);
  gc->add_option("--perturb", scale, "Uniform noise width added to the initial parameters");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(config, out);
    if (*tr) return cmd_train(config, data, out);
    if (*ev) return cmd_eval(ckpt, data, views, split);
    if (*sw) return cmd_sweep(config, out);
    if (*fl) return cmd_flops(config, tokens, objects);
    if (*gc) return cmd_gradcheck(config, items, tolerance, scale);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

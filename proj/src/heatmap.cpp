#include "ovv/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "ovv/tensor_file.hpp"

namespace ovv {

Heatmap Heatmap::zeros(int height, int width) {
  return Heatmap{height, width, std::vector<double>(static_cast<std::size_t>(height) * width, 0.0)};
}

double sigma_of_box(double box_w, double box_h) {
  if (!(box_w > 0.0) || !(box_h > 0.0)) throw std::invalid_argument("sigma_of_box: box size must be positive");
  return std::max(std::max(box_w, box_h) / 6.0, 1.0);
}

Heatmap render_object_heatmap(const Box& box, int height, int width) {
  Heatmap hm = Heatmap::zeros(height, width);
  const double sigma = sigma_of_box(box.w, box.h);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < height; ++y) {
    const double dy = y - box.cy;
    for (int x = 0; x < width; ++x) {
      const double dx = x - box.cx;
      const double v = std::exp(-(dx * dx + dy * dy) * inv);
      hm.at(y, x) = v < kHeatmapFloor ? 0.0 : v;
    }
  }
  return hm;
}

Heatmap render_class_agnostic(std::span<const Detection> detections, int height, int width) {
  Heatmap out = Heatmap::zeros(height, width);
  for (const auto& d : detections) {
    const Heatmap one = render_object_heatmap(d.box, height, width);
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = std::max(out.values[i], one.values[i]);
  }
  return out;
}

std::vector<Heatmap> render_heatmap(std::span<const Detection> detections, int height, int width, HeatmapMode mode) {
  if (mode == HeatmapMode::class_agnostic) return {render_class_agnostic(detections, height, width)};
  std::vector<Heatmap> out;
  out.reserve(detections.size());
  for (const auto& d : detections) out.push_back(render_object_heatmap(d.box, height, width));
  return out;
}

TokenScores project_to_tubelets(std::span<const Heatmap> frames, const TokenGridSpec& grid) {
  const auto& tube = grid.tube;
  if (static_cast<int>(frames.size()) != grid.nt * tube.t)
    throw std::invalid_argument("project_to_tubelets: frame count does not match the grid");
  for (const auto& f : frames)
    if (f.height != grid.nh * tube.h || f.width != grid.nw * tube.w)
      throw std::invalid_argument("project_to_tubelets: heatmap size does not match the grid");

  TokenScores scores(static_cast<std::size_t>(grid.size()), 0.0);
  for (int n = 0; n < grid.size(); ++n) {
    const TokenCoord k = grid.coord(n);
    double s = 0.0;
    for (int dt = 0; dt < tube.t; ++dt) {
      const Heatmap& f = frames[static_cast<std::size_t>(k.t * tube.t + dt)];
      for (int dy = 0; dy < tube.h; ++dy)
        for (int dx = 0; dx < tube.w; ++dx) s += f.at(k.h * tube.h + dy, k.w * tube.w + dx);
    }
    scores[static_cast<std::size_t>(n)] = s;
  }
  return scores;
}

std::vector<std::vector<InstanceHeatmap>> render_instance_heatmaps(const DetectionTrackSet& tracks, int frames,
                                                                   int height, int width) {
  std::vector<std::vector<InstanceHeatmap>> out(static_cast<std::size_t>(frames));
  for (std::size_t t = 0; t < tracks.frames.size() && t < out.size(); ++t)
    for (const auto& d : tracks.frames[t]) {
      if (!d.track_id) throw std::invalid_argument("per-instance heatmaps need track ids; link tracks first");
      out[t].push_back({*d.track_id, render_object_heatmap(d.box, height, width)});
    }
  return out;
}

namespace {

InstanceAffinity empty_affinity(const std::set<int>& ids, std::span<const int> tokens, const TokenGridSpec& grid) {
  InstanceAffinity a;
  a.object_ids.assign(ids.begin(), ids.end());
  a.tokens.assign(tokens.begin(), tokens.end());
  for (int n : a.tokens)
    if (n < 0 || n >= grid.size()) throw std::out_of_range("affinity: token index outside grid");
  a.values = Matrix<double>::Zero(static_cast<Eigen::Index>(a.object_ids.size()),
                                  static_cast<Eigen::Index>(a.tokens.size()));
  return a;
}

}  // namespace

InstanceAffinity project_instance_affinity(std::span<const std::vector<InstanceHeatmap>> per_frame,
                                           const TokenGridSpec& grid, std::span<const int> tokens) {
  const auto& tube = grid.tube;
  if (static_cast<int>(per_frame.size()) != grid.nt * tube.t)
    throw std::invalid_argument("project_instance_affinity: frame count does not match the grid");

  std::set<int> ids;
  for (const auto& f : per_frame)
    for (const auto& ih : f) ids.insert(ih.object_id);
  InstanceAffinity a = empty_affinity(ids, tokens, grid);
  std::map<int, Eigen::Index> row_of;
  for (std::size_t i = 0; i < a.object_ids.size(); ++i) row_of[a.object_ids[i]] = static_cast<Eigen::Index>(i);

  for (std::size_t col = 0; col < a.tokens.size(); ++col) {
    const TokenCoord k = grid.coord(a.tokens[col]);
    for (int dt = 0; dt < tube.t; ++dt)
      for (const auto& ih : per_frame[static_cast<std::size_t>(k.t * tube.t + dt)]) {
        double s = 0.0;
        for (int dy = 0; dy < tube.h; ++dy)
          for (int dx = 0; dx < tube.w; ++dx) s += ih.map.at(k.h * tube.h + dy, k.w * tube.w + dx);
        a.values(row_of[ih.object_id], static_cast<Eigen::Index>(col)) += s / tube.t;
      }
  }
  return a;
}

InstanceAffinity block_mask_affinity(const DetectionTrackSet& tracks, const TokenGridSpec& grid,
                                     std::span<const int> tokens) {
  const auto& tube = grid.tube;
  std::set<int> ids;
  for (const auto& f : tracks.frames)
    for (const auto& d : f) {
      if (!d.track_id) throw std::invalid_argument("block mask affinity needs track ids; link tracks first");
      ids.insert(*d.track_id);
    }
  InstanceAffinity a = empty_affinity(ids, tokens, grid);
  std::map<int, Eigen::Index> row_of;
  for (std::size_t i = 0; i < a.object_ids.size(); ++i) row_of[a.object_ids[i]] = static_cast<Eigen::Index>(i);

  for (std::size_t col = 0; col < a.tokens.size(); ++col) {
    const TokenCoord k = grid.coord(a.tokens[col]);
    const double x = k.w * tube.w + 0.5 * (tube.w - 1);
    const double y = k.h * tube.h + 0.5 * (tube.h - 1);
    for (int dt = 0; dt < tube.t; ++dt) {
      const auto f = static_cast<std::size_t>(k.t * tube.t + dt);
      if (f >= tracks.frames.size()) continue;
      for (const auto& d : tracks.frames[f])
        if (x >= d.box.left() && x <= d.box.right() && y >= d.box.top() && y <= d.box.bottom())
          a.values(row_of[*d.track_id], static_cast<Eigen::Index>(col)) = 1.0;
    }
  }
  return a;
}

void write_heatmaps(const std::filesystem::path& path, std::span<const Heatmap> frames) {
  if (frames.empty()) throw std::invalid_argument("write_heatmaps: no frames");
  const int h = frames[0].height, w = frames[0].width;
  std::vector<float> data;
  data.reserve(frames.size() * static_cast<std::size_t>(h) * w);
  for (const auto& f : frames) {
    if (f.height != h || f.width != w) throw std::invalid_argument("write_heatmaps: inconsistent frame sizes");
    for (double v : f.values) data.push_back(static_cast<float>(v));
  }
  write_tensor_file(path, TensorRecord::from_f32({frames.size(), static_cast<std::uint64_t>(h),
                                                  static_cast<std::uint64_t>(w), 1},
                                                 data));
}

}  // namespace ovv

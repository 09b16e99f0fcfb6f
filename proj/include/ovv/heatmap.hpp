#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "ovv/detections.hpp"
#include "ovv/tokenizer.hpp"
#include "ovv/types.hpp"

namespace ovv {

/// Gaussian values below this are stored as exact zeros.
inline constexpr double kHeatmapFloor = 1e-12;

struct Heatmap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  static Heatmap zeros(int height, int width);
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const Heatmap&) const = default;
};

enum class HeatmapMode { class_agnostic, per_instance };

/// One objectness score per tubelet, indexed like the token grid.
using TokenScores = std::vector<double>;

/// max(w, h) / 6, never below 1.
double sigma_of_box(double box_w, double box_h);

/// Single Gaussian peak exp(-((x-cx)^2 + (y-cy)^2) / (2 sigma^2)) evaluated at
/// integer pixel positions.
Heatmap render_object_heatmap(const Box& box, int height, int width);

/// class_agnostic: one map, the pixelwise max over objects (all zero when
/// there are no detections). per_instance: one map per detection, in order.
std::vector<Heatmap> render_heatmap(std::span<const Detection> detections, int height, int width, HeatmapMode mode);

Heatmap render_class_agnostic(std::span<const Detection> detections, int height, int width);

/// Score of a tubelet = sum of the heatmap values it covers.
TokenScores project_to_tubelets(std::span<const Heatmap> frames, const TokenGridSpec& grid);

struct InstanceHeatmap {
  int object_id = 0;
  Heatmap map;
};

/// Per-frame per-instance heatmaps keyed by track id (requires track ids).
std::vector<std::vector<InstanceHeatmap>> render_instance_heatmaps(const DetectionTrackSet& tracks, int frames,
                                                                   int height, int width);

/// Object-to-token affinities for a subset of tokens.
struct InstanceAffinity {
  std::vector<int> object_ids;  // ascending
  std::vector<int> tokens;      // flat token index of each column
  Matrix<double> values;        // objects x tokens
};

/// Entry (o, n): mean over the tube's frames of the per-frame sum of object
/// o's heatmap over the tube's pixels. Frames without o contribute zero.
InstanceAffinity project_instance_affinity(std::span<const std::vector<InstanceHeatmap>> per_frame,
                                           const TokenGridSpec& grid, std::span<const int> tokens);

/// Binary alternative: entry (o, n) is 1 when the spatial center of token n
/// lies inside o's box in any frame of the tube, else 0.
InstanceAffinity block_mask_affinity(const DetectionTrackSet& tracks, const TokenGridSpec& grid,
                                     std::span<const int> tokens);

/// Debug dump of a heatmap sequence as an OVVT (t, h, w, 1) f32 tensor.
void write_heatmaps(const std::filesystem::path& path, std::span<const Heatmap> frames);

}  // namespace ovv

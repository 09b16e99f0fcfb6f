#pragma once

#include <optional>
#include <string>
#include <vector>

namespace ovv {

/// Axis-aligned box in continuous pixel coordinates: pixel (x, y) has its
/// center at (x, y), so a box tightly covering pixels x0..x1 has
/// cx = (x0 + x1) / 2 and w = x1 - x0 + 1.
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double left() const { return cx - 0.5 * w; }
  double right() const { return cx + 0.5 * w; }
  double top() const { return cy - 0.5 * h; }
  double bottom() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  bool operator==(const Box&) const = default;
};

struct Detection {
  int frame = 0;
  Box box;
  std::optional<int> track_id;

  bool operator==(const Detection&) const = default;
};

/// Detections grouped by frame. frames[t] holds the detections of frame t;
/// trailing frames without detections are not represented.
struct DetectionTrackSet {
  std::string video_id;
  std::vector<std::vector<Detection>> frames;
  int num_tracks = 0;

  std::size_t size() const;
  bool has_track_ids() const;

  /// Frames first, first + stride, ... (count of them), renumbered from 0.
  DetectionTrackSet sample_frames(int first, int stride, int count) const;

  /// Per-frame unique track ids below num_tracks; frame indices consistent.
  void validate() const;

  bool operator==(const DetectionTrackSet&) const = default;
};

/// Intersection over union of two boxes, in [0, 1].
double iou(const Box& a, const Box& b);

}  // namespace ovv

#include "ovv/tracking.hpp"

#include <algorithm>
#include <tuple>

namespace ovv {

DetectionTrackSet link_tracks(const std::vector<std::vector<Box>>& boxes_per_frame, double iou_threshold) {
  DetectionTrackSet out;
  out.frames.resize(boxes_per_frame.size());

  // (track id, box) of every detection in the previous frame.
  std::vector<std::pair<int, Box>> alive;
  int next_id = 0;

  for (std::size_t t = 0; t < boxes_per_frame.size(); ++t) {
    const auto& boxes = boxes_per_frame[t];
    std::vector<int> assigned(boxes.size(), -1);

    struct Candidate {
      double iou;
      std::size_t track;
      std::size_t det;
    };
    std::vector<Candidate> candidates;
    for (std::size_t a = 0; a < alive.size(); ++a)
      for (std::size_t d = 0; d < boxes.size(); ++d) {
        const double v = iou(alive[a].second, boxes[d]);
        if (v >= iou_threshold && v > 0.0) candidates.push_back({v, a, d});
      }
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& x, const Candidate& y) {
      return std::tie(y.iou, x.track, x.det) < std::tie(x.iou, y.track, y.det);
    });

    std::vector<bool> track_used(alive.size(), false);
    for (const auto& c : candidates) {
      if (track_used[c.track] || assigned[c.det] >= 0) continue;
      track_used[c.track] = true;
      assigned[c.det] = alive[c.track].first;
    }
    for (auto& id : assigned)
      if (id < 0) id = next_id++;

    alive.clear();
    auto& frame = out.frames[t];
    for (std::size_t d = 0; d < boxes.size(); ++d) {
      frame.push_back(Detection{static_cast<int>(t), boxes[d], assigned[d]});
      alive.emplace_back(assigned[d], boxes[d]);
    }
  }
  out.num_tracks = next_id;
  while (!out.frames.empty() && out.frames.back().empty()) out.frames.pop_back();
  return out;
}

DetectionTrackSet link_tracks(const DetectionTrackSet& detections, double iou_threshold) {
  std::vector<std::vector<Box>> boxes(detections.frames.size());
  for (std::size_t t = 0; t < detections.frames.size(); ++t)
    for (const auto& d : detections.frames[t]) boxes[t].push_back(d.box);
  auto out = link_tracks(boxes, iou_threshold);
  out.video_id = detections.video_id;
  return out;
}

}  // namespace ovv

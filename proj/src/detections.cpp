#include "ovv/detections.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace ovv {

std::size_t DetectionTrackSet::size() const {
  std::size_t n = 0;
  for (const auto& f : frames) n += f.size();
  return n;
}

bool DetectionTrackSet::has_track_ids() const {
  for (const auto& f : frames)
    for (const auto& d : f)
      if (!d.track_id) return false;
  return true;
}

DetectionTrackSet DetectionTrackSet::sample_frames(int first, int stride, int count) const {
  DetectionTrackSet out;
  out.video_id = video_id;
  out.num_tracks = num_tracks;
  out.frames.resize(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const int src = first + k * stride;
    if (src < 0 || src >= static_cast<int>(frames.size())) continue;
    for (Detection d : frames[static_cast<std::size_t>(src)]) {
      d.frame = k;
      out.frames[static_cast<std::size_t>(k)].push_back(d);
    }
  }
  while (!out.frames.empty() && out.frames.back().empty()) out.frames.pop_back();
  return out;
}

void DetectionTrackSet::validate() const {
  for (std::size_t t = 0; t < frames.size(); ++t) {
    std::set<int> seen;
    for (const auto& d : frames[t]) {
      if (d.frame != static_cast<int>(t)) throw std::invalid_argument("detection frame index out of place");
      if (!(d.box.w > 0.0) || !(d.box.h > 0.0)) throw std::invalid_argument("detection box must have positive size");
      if (d.track_id) {
        if (*d.track_id < 0 || *d.track_id >= num_tracks)
          throw std::invalid_argument("track id " + std::to_string(*d.track_id) + " outside [0, num_tracks)");
        if (!seen.insert(*d.track_id).second)
          throw std::invalid_argument("duplicate track id within frame " + std::to_string(t));
      }
    }
  }
}

double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.right(), b.right()) - std::max(a.left(), b.left()));
  const double ih = std::max(0.0, std::min(a.bottom(), b.bottom()) - std::max(a.top(), b.top()));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace ovv

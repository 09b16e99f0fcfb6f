#pragma once

#include <vector>

#include "ovv/detections.hpp"

namespace ovv {

inline constexpr double kDefaultTrackIou = 0.3;

/// Greedy frame-to-frame IoU linking. Pairs between the tracks alive in the
/// previous frame and the current detections are matched in descending IoU
/// order; detections left unmatched (or only matching below the threshold)
/// open new tracks. A track that misses a frame is not resumed.
DetectionTrackSet link_tracks(const std::vector<std::vector<Box>>& boxes_per_frame,
                              double iou_threshold = kDefaultTrackIou);

/// Same as above, reusing frame indices and boxes of an existing set and
/// discarding any previous identities.
DetectionTrackSet link_tracks(const DetectionTrackSet& detections, double iou_threshold = kDefaultTrackIou);

}  // namespace ovv

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ovv/detections.hpp"
#include "ovv/video.hpp"

namespace ovv {

enum class SpriteKind { square, disc };

/// Motion patterns, indexed by class label.
enum class MotionPattern { rightward, downward, counterclockwise, still, leftward, upward, clockwise, diagonal };

inline constexpr int kMaxSynthClasses = 8;

std::string_view motion_pattern_name(MotionPattern p);

struct SynthConfig {
  int frames = 16;
  int height = 32;
  int width = 32;
  int num_objects = 2;
  int num_classes = 4;
  SpriteKind sprite_kind = SpriteKind::square;
  /// Square side or disc diameter, in pixels.
  int sprite_size = 6;
  double noise_std = 0.05;

  void validate() const;
};

struct SyntheticVideo {
  VideoTensor video;
  DetectionTrackSet tracks;
  int label = 0;
  /// Track id of the object executing the labelled motion.
  int designated_track = 0;
};

/// Renders a seeded clip: one red sprite follows the motion pattern of the
/// label, the others are coloured distractors bouncing with random
/// velocities. Every object gets one tight box per frame; track ids are a
/// random permutation so the designated object is not always track 0.
SyntheticVideo generate_video(const SynthConfig& cfg, std::uint64_t seed);

/// Pixels covered by a sprite whose continuous center is (cx, cy).
/// Returned as (x, y) pairs; pixels outside the frame are dropped.
std::vector<std::pair<int, int>> sprite_pixels(SpriteKind kind, int size, double cx, double cy, int height,
                                               int width);

/// Tight box of a pixel set (see Box for the coordinate convention).
Box tight_box(const std::vector<std::pair<int, int>>& pixels);

}  // namespace ovv

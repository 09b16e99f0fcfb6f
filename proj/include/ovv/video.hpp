#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace ovv {

/// Dense (t, h, w, c) pixel volume, row-major, values in [0, 1].
struct VideoTensor {
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<float> data;

  static VideoTensor zeros(int frames, int height, int width, int channels = 3);

  std::size_t offset(int t, int y, int x, int c) const {
    return ((static_cast<std::size_t>(t) * height + y) * width + x) * channels + c;
  }
  float at(int t, int y, int x, int c) const { return data[offset(t, y, x, c)]; }
  float& at(int t, int y, int x, int c) { return data[offset(t, y, x, c)]; }

  /// Frames first, first + stride, ... (count of them).
  VideoTensor sample_frames(int first, int stride, int count) const;

  /// Throws std::invalid_argument when the size or value-range invariants fail.
  void validate() const;

  bool operator==(const VideoTensor&) const = default;
};

void write_video(const std::filesystem::path& path, const VideoTensor& video);
VideoTensor read_video(const std::filesystem::path& path);

}  // namespace ovv

#include "ovv/video.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ovv/tensor_file.hpp"

namespace ovv {

VideoTensor VideoTensor::zeros(int frames, int height, int width, int channels) {
  if (frames <= 0 || height <= 0 || width <= 0 || channels <= 0)
    throw std::invalid_argument("video dimensions must be positive");
  VideoTensor v{frames, height, width, channels, {}};
  v.data.assign(static_cast<std::size_t>(frames) * height * width * channels, 0.0f);
  return v;
}

VideoTensor VideoTensor::sample_frames(int first, int stride, int count) const {
  if (stride < 1 || first < 0 || count < 1 || first + (count - 1) * stride >= frames)
    throw std::invalid_argument("frame sampling out of range: first=" + std::to_string(first) +
                                " stride=" + std::to_string(stride) + " count=" + std::to_string(count) +
                                " frames=" + std::to_string(frames));
  VideoTensor out = zeros(count, height, width, channels);
  const std::size_t frame_size = static_cast<std::size_t>(height) * width * channels;
  for (int k = 0; k < count; ++k) {
    auto src = data.begin() + static_cast<std::ptrdiff_t>(offset(first + k * stride, 0, 0, 0));
    std::copy(src, src + static_cast<std::ptrdiff_t>(frame_size),
              out.data.begin() + static_cast<std::ptrdiff_t>(k * frame_size));
  }
  return out;
}

void VideoTensor::validate() const {
  if (data.size() != static_cast<std::size_t>(frames) * height * width * channels)
    throw std::invalid_argument("video data length does not match t*h*w*c");
  for (float v : data)
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw std::invalid_argument("video value outside [0,1]");
}

void write_video(const std::filesystem::path& path, const VideoTensor& video) {
  write_tensor_file(path, TensorRecord::from_f32({static_cast<std::uint64_t>(video.frames),
                                                  static_cast<std::uint64_t>(video.height),
                                                  static_cast<std::uint64_t>(video.width),
                                                  static_cast<std::uint64_t>(video.channels)},
                                                 video.data));
}

VideoTensor read_video(const std::filesystem::path& path) {
  auto record = read_tensor_file(path);
  if (record.dims.size() != 4) throw FormatError(path.string() + ": video tensor must have ndim=4");
  if (record.dtype != DType::f32) throw FormatError(path.string() + ": video tensor must be f32");
  VideoTensor v;
  v.frames = static_cast<int>(record.dims[0]);
  v.height = static_cast<int>(record.dims[1]);
  v.width = static_cast<int>(record.dims[2]);
  v.channels = static_cast<int>(record.dims[3]);
  v.data = record.to_f32();
  return v;
}

}  // namespace ovv

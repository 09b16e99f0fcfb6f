#include "ovv/tokenizer.hpp"

#include <stdexcept>
#include <string>

namespace ovv {

TokenGridSpec TokenGridSpec::for_video(int frames, int height, int width, TubeDims tube) {
  if (tube.t < 1 || tube.h < 1 || tube.w < 1) throw std::invalid_argument("tube dims must be positive");
  if (frames % tube.t != 0 || height % tube.h != 0 || width % tube.w != 0)
    throw std::invalid_argument("video (" + std::to_string(frames) + "," + std::to_string(height) + "," +
                                std::to_string(width) + ") is not divisible by tube (" + std::to_string(tube.t) +
                                "," + std::to_string(tube.h) + "," + std::to_string(tube.w) +
                                "); pad or crop the input first");
  TokenGridSpec g{tube, frames / tube.t, height / tube.h, width / tube.w};
  if (g.size() < 1) throw std::invalid_argument("token grid is empty");
  return g;
}

TubeletPatches tubelet_split(const VideoTensor& video, TubeDims tube) {
  TubeletPatches out;
  out.grid = TokenGridSpec::for_video(video.frames, video.height, video.width, tube);
  const auto& g = out.grid;
  const int c = video.channels;
  out.values.resize(g.size(), tube.volume() * c);
  out.coords.resize(static_cast<std::size_t>(g.size()));
  for (int n = 0; n < g.size(); ++n) {
    const TokenCoord k = g.coord(n);
    out.coords[static_cast<std::size_t>(n)] = k;
    float* row = out.values.row(n).data();
    int i = 0;
    for (int dt = 0; dt < tube.t; ++dt)
      for (int dy = 0; dy < tube.h; ++dy) {
        const float* src = &video.data[video.offset(k.t * tube.t + dt, k.h * tube.h + dy, k.w * tube.w, 0)];
        for (int j = 0; j < tube.w * c; ++j) row[i++] = src[j];
      }
  }
  return out;
}

VideoTensor assemble_tubelets(const TubeletPatches& patches, int channels) {
  const auto& g = patches.grid;
  const auto& tube = g.tube;
  VideoTensor v = VideoTensor::zeros(g.nt * tube.t, g.nh * tube.h, g.nw * tube.w, channels);
  for (int n = 0; n < static_cast<int>(patches.coords.size()); ++n) {
    const TokenCoord k = patches.coords[static_cast<std::size_t>(n)];
    const float* row = patches.values.row(n).data();
    int i = 0;
    for (int dt = 0; dt < tube.t; ++dt)
      for (int dy = 0; dy < tube.h; ++dy) {
        float* dst = &v.data[v.offset(k.t * tube.t + dt, k.h * tube.h + dy, k.w * tube.w, 0)];
        for (int j = 0; j < tube.w * channels; ++j) dst[j] = row[i++];
      }
  }
  return v;
}

template <typename Scalar>
TokenSet<Scalar> TokenSet<Scalar>::select(std::span<const int> rows) const {
  TokenSet out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.coords.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int r = rows[i];
    if (r < 0 || r >= size()) throw std::out_of_range("token row out of range");
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(r);
    out.coords.push_back(coords[static_cast<std::size_t>(r)]);
    if (!scores.empty()) out.scores.push_back(scores[static_cast<std::size_t>(r)]);
  }
  return out;
}

template <typename Scalar>
TokenSet<Scalar> embed_tokens(const Matrix<Scalar>& patches, std::span<const TokenCoord> coords,
                              const TokenGridSpec& grid, const EmbedParams<Scalar>& params) {
  if (patches.rows() != static_cast<Eigen::Index>(coords.size()))
    throw std::invalid_argument("embed_tokens: patch rows and coords disagree");
  if (patches.cols() != params.projection.rows())
    throw std::invalid_argument("embed_tokens: patch width does not match projection");
  if (params.bias.rows() != 1 || params.bias.cols() != params.projection.cols())
    throw std::invalid_argument("embed_tokens: bias shape mismatch");
  if (params.positional.rows() != grid.size() || params.positional.cols() != params.projection.cols())
    throw std::invalid_argument("embed_tokens: positional table must cover the full grid");

  TokenSet<Scalar> out;
  out.features.noalias() = patches * params.projection;
  out.features.rowwise() += params.bias.row(0);
  out.coords.assign(coords.begin(), coords.end());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (!grid.contains(coords[i])) throw std::invalid_argument("embed_tokens: coord outside grid");
    out.features.row(static_cast<Eigen::Index>(i)) += params.positional.row(grid.flat_index(coords[i]));
  }
  return out;
}

template struct TokenSet<float>;
template struct TokenSet<double>;
template TokenSet<float> embed_tokens(const Matrix<float>&, std::span<const TokenCoord>, const TokenGridSpec&,
                                      const EmbedParams<float>&);
template TokenSet<double> embed_tokens(const Matrix<double>&, std::span<const TokenCoord>, const TokenGridSpec&,
                                       const EmbedParams<double>&);

}  // namespace ovv

#pragma once

#include <compare>
#include <span>
#include <vector>

#include "ovv/types.hpp"
#include "ovv/video.hpp"

namespace ovv {

struct TubeDims {
  int t = 2;
  int h = 8;
  int w = 8;

  int volume() const { return t * h * w; }
  bool operator==(const TubeDims&) const = default;
};

/// Grid index of a tubelet. `t` is the token-frame.
struct TokenCoord {
  int t = 0;
  int h = 0;
  int w = 0;

  auto operator<=>(const TokenCoord&) const = default;
};

struct TokenGridSpec {
  TubeDims tube;
  int nt = 0;
  int nh = 0;
  int nw = 0;

  /// Requires exact divisibility of (frames, height, width) by the tube.
  static TokenGridSpec for_video(int frames, int height, int width, TubeDims tube);

  int size() const { return nt * nh * nw; }
  int flat_index(const TokenCoord& c) const { return (c.t * nh + c.h) * nw + c.w; }
  TokenCoord coord(int flat) const { return {flat / (nh * nw), (flat / nw) % nh, flat % nw}; }
  bool contains(const TokenCoord& c) const {
    return c.t >= 0 && c.h >= 0 && c.w >= 0 && c.t < nt && c.h < nh && c.w < nw;
  }

  bool operator==(const TokenGridSpec&) const = default;
};

struct TubeletPatches {
  TokenGridSpec grid;
  /// N x (dt*dh*dw*c), each row in (t, h, w, c) order within the tube.
  Matrix<float> values;
  std::vector<TokenCoord> coords;
};

TubeletPatches tubelet_split(const VideoTensor& video, TubeDims tube);

/// Inverse of tubelet_split (used to check reconstruction).
VideoTensor assemble_tubelets(const TubeletPatches& patches, int channels = 3);

template <typename Scalar>
struct TokenSet {
  Matrix<Scalar> features;
  std::vector<TokenCoord> coords;
  /// Objectness score per row, when attached.
  std::vector<double> scores;

  int size() const { return static_cast<int>(features.rows()); }

  /// Rows in the given order. Positional identity travels with the row.
  TokenSet select(std::span<const int> rows) const;
};

template <typename Scalar>
struct EmbedParams {
  Matrix<Scalar> projection;  // (dt*dh*dw*c) x D
  Matrix<Scalar> bias;        // 1 x D
  Matrix<Scalar> positional;  // N x D, full grid
};

/// features[n] = patches[n] * projection + bias + positional[flat(coords[n])]
template <typename Scalar>
TokenSet<Scalar> embed_tokens(const Matrix<Scalar>& patches, std::span<const TokenCoord> coords,
                              const TokenGridSpec& grid, const EmbedParams<Scalar>& params);

}  // namespace ovv

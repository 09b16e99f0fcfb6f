#include "ovv/data_synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace ovv {

namespace {

using Color = std::array<float, 3>;

constexpr Color kDesignatedColor = {0.95f, 0.15f, 0.1f};
constexpr std::array<Color, 4> kDistractorColors = {{
    {0.1f, 0.85f, 0.2f},
    {0.15f, 0.3f, 0.95f},
    {0.9f, 0.9f, 0.15f},
    {0.2f, 0.85f, 0.85f},
}};

struct Point {
  double x;
  double y;
};

// Centers along which the sprite stays fully inside the frame.
struct Range {
  double lo_x, hi_x, lo_y, hi_y;
};

std::vector<Point> designated_path(MotionPattern pattern, const Range& r, int frames, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double span_x = r.hi_x - r.lo_x;
  const double span_y = r.hi_y - r.lo_y;
  auto lerp = [](double a, double b, double p) { return a + (b - a) * p; };
  std::vector<Point> path(static_cast<std::size_t>(frames));

  // Linear sweeps cover most of the frame; the start jitters by up to 15%.
  const double jx0 = 0.15 * span_x * unit(rng), jx1 = 0.15 * span_x * unit(rng);
  const double jy0 = 0.15 * span_y * unit(rng), jy1 = 0.15 * span_y * unit(rng);
  const double fixed_x = lerp(r.lo_x, r.hi_x, unit(rng));
  const double fixed_y = lerp(r.lo_y, r.hi_y, unit(rng));

  const double radius = 0.3 * std::min(span_x, span_y);
  const double ccx = lerp(r.lo_x + radius, r.hi_x - radius, unit(rng));
  const double ccy = lerp(r.lo_y + radius, r.hi_y - radius, unit(rng));
  const double phase = 2.0 * std::numbers::pi * unit(rng);
  const bool diag_flip = unit(rng) < 0.5;

  for (int t = 0; t < frames; ++t) {
    const double p = frames > 1 ? static_cast<double>(t) / (frames - 1) : 0.0;
    Point& q = path[static_cast<std::size_t>(t)];
    switch (pattern) {
      case MotionPattern::rightward: q = {lerp(r.lo_x + jx0, r.hi_x - jx1, p), fixed_y}; break;
      case MotionPattern::leftward: q = {lerp(r.hi_x - jx1, r.lo_x + jx0, p), fixed_y}; break;
      case MotionPattern::downward: q = {fixed_x, lerp(r.lo_y + jy0, r.hi_y - jy1, p)}; break;
      case MotionPattern::upward: q = {fixed_x, lerp(r.hi_y - jy1, r.lo_y + jy0, p)}; break;
      case MotionPattern::counterclockwise:
      case MotionPattern::clockwise: {
        const double dir = pattern == MotionPattern::clockwise ? 1.0 : -1.0;
        const double a = phase + dir * 2.0 * std::numbers::pi * p;
        q = {ccx + radius * std::cos(a), ccy + radius * std::sin(a)};
        break;
      }
      case MotionPattern::still: q = {fixed_x, fixed_y}; break;
      case MotionPattern::diagonal: {
        const double y0 = diag_flip ? r.hi_y - jy1 : r.lo_y + jy0;
        const double y1 = diag_flip ? r.lo_y + jy0 : r.hi_y - jy1;
        q = {lerp(r.lo_x + jx0, r.hi_x - jx1, p), lerp(y0, y1, p)};
        break;
      }
    }
  }
  return path;
}

std::vector<Point> distractor_path(const Range& r, int frames, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Point pos{r.lo_x + (r.hi_x - r.lo_x) * unit(rng), r.lo_y + (r.hi_y - r.lo_y) * unit(rng)};
  const double angle = 2.0 * std::numbers::pi * unit(rng);
  const double speed = 0.5 + 1.5 * unit(rng);
  Point vel{speed * std::cos(angle), speed * std::sin(angle)};

  auto reflect = [](double& x, double& v, double lo, double hi) {
    if (hi <= lo) {
      x = lo;
      return;
    }
    for (int guard = 0; guard < 8 && (x < lo || x > hi); ++guard) {
      if (x < lo) {
        x = 2 * lo - x;
        v = -v;
      }
      if (x > hi) {
        x = 2 * hi - x;
        v = -v;
      }
    }
    x = std::clamp(x, lo, hi);
  };

  std::vector<Point> path(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    path[static_cast<std::size_t>(t)] = pos;
    pos.x += vel.x;
    pos.y += vel.y;
    reflect(pos.x, vel.x, r.lo_x, r.hi_x);
    reflect(pos.y, vel.y, r.lo_y, r.hi_y);
  }
  return path;
}

long round_half_away(double v) { return std::lround(v); }

}  // namespace

std::string_view motion_pattern_name(MotionPattern p) {
  switch (p) {
    case MotionPattern::rightward: return "rightward";
    case MotionPattern::downward: return "downward";
    case MotionPattern::counterclockwise: return "counterclockwise";
    case MotionPattern::still: return "still";
    case MotionPattern::leftward: return "leftward";
    case MotionPattern::upward: return "upward";
    case MotionPattern::clockwise: return "clockwise";
    case MotionPattern::diagonal: return "diagonal";
  }
  return "unknown";
}

void SynthConfig::validate() const {
  if (frames < 1 || height < 1 || width < 1) throw std::invalid_argument("synth: frame dimensions must be positive");
  if (num_objects < 1) throw std::invalid_argument("synth: num_objects must be >= 1");
  if (num_classes < 2 || num_classes > kMaxSynthClasses)
    throw std::invalid_argument("synth: num_classes must be in [2, " + std::to_string(kMaxSynthClasses) + "]");
  if (sprite_size < 2) throw std::invalid_argument("synth: sprite_size must be >= 2");
  if (sprite_size + 2 > std::min(height, width))
    throw std::invalid_argument("synth: sprite of size " + std::to_string(sprite_size) + " cannot move inside a " +
                                std::to_string(height) + "x" + std::to_string(width) + " frame");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) throw std::invalid_argument("synth: noise_std must be >= 0");
}

std::vector<std::pair<int, int>> sprite_pixels(SpriteKind kind, int size, double cx, double cy, int height,
                                               int width) {
  std::vector<std::pair<int, int>> out;
  if (kind == SpriteKind::square) {
    const long x0 = round_half_away(cx - 0.5 * (size - 1));
    const long y0 = round_half_away(cy - 0.5 * (size - 1));
    for (long y = y0; y < y0 + size; ++y)
      for (long x = x0; x < x0 + size; ++x)
        if (x >= 0 && y >= 0 && x < width && y < height) out.emplace_back(static_cast<int>(x), static_cast<int>(y));
  } else {
    const double r = 0.5 * size;
    const int x_lo = static_cast<int>(std::floor(cx - r)), x_hi = static_cast<int>(std::ceil(cx + r));
    const int y_lo = static_cast<int>(std::floor(cy - r)), y_hi = static_cast<int>(std::ceil(cy + r));
    for (int y = std::max(0, y_lo); y <= std::min(height - 1, y_hi); ++y)
      for (int x = std::max(0, x_lo); x <= std::min(width - 1, x_hi); ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r * r) out.emplace_back(x, y);
      }
  }
  return out;
}

Box tight_box(const std::vector<std::pair<int, int>>& pixels) {
  if (pixels.empty()) throw std::invalid_argument("tight_box: empty pixel set");
  int x0 = pixels[0].first, x1 = x0, y0 = pixels[0].second, y1 = y0;
  for (auto [x, y] : pixels) {
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
  }
  return Box{0.5 * (x0 + x1), 0.5 * (y0 + y1), static_cast<double>(x1 - x0 + 1), static_cast<double>(y1 - y0 + 1)};
}

SyntheticVideo generate_video(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticVideo out;
  out.label = static_cast<int>(rng() % static_cast<std::uint64_t>(cfg.num_classes));

  // For a disc of diameter s the extreme pixels sit within s/2 of the center.
  const double half = cfg.sprite_kind == SpriteKind::square ? 0.5 * (cfg.sprite_size - 1) : 0.5 * cfg.sprite_size;
  const Range range{half + 0.5, cfg.width - 1.5 - half, half + 0.5, cfg.height - 1.5 - half};

  std::vector<int> track_of(static_cast<std::size_t>(cfg.num_objects));
  std::iota(track_of.begin(), track_of.end(), 0);
  std::shuffle(track_of.begin(), track_of.end(), rng);
  out.designated_track = track_of[0];

  std::vector<std::vector<Point>> paths;
  paths.push_back(designated_path(static_cast<MotionPattern>(out.label), range, cfg.frames, rng));
  for (int o = 1; o < cfg.num_objects; ++o) paths.push_back(distractor_path(range, cfg.frames, rng));

  std::vector<Color> colors{kDesignatedColor};
  for (int o = 1; o < cfg.num_objects; ++o)
    colors.push_back(kDistractorColors[static_cast<std::size_t>(rng() % kDistractorColors.size())]);

  const float background = static_cast<float>(0.25 + 0.3 * unit(rng));
  out.video = VideoTensor::zeros(cfg.frames, cfg.height, cfg.width, 3);
  std::fill(out.video.data.begin(), out.video.data.end(), background);

  out.tracks.num_tracks = cfg.num_objects;
  out.tracks.frames.resize(static_cast<std::size_t>(cfg.frames));
  for (int t = 0; t < cfg.frames; ++t) {
    auto& frame_dets = out.tracks.frames[static_cast<std::size_t>(t)];
    // Distractors first so the designated sprite is drawn on top.
    for (int o = cfg.num_objects - 1; o >= 0; --o) {
      const Point p = paths[static_cast<std::size_t>(o)][static_cast<std::size_t>(t)];
      auto pixels = sprite_pixels(cfg.sprite_kind, cfg.sprite_size, p.x, p.y, cfg.height, cfg.width);
      for (auto [x, y] : pixels)
        for (int c = 0; c < 3; ++c) out.video.at(t, y, x, c) = colors[static_cast<std::size_t>(o)][static_cast<std::size_t>(c)];
      frame_dets.push_back(Detection{t, tight_box(pixels), track_of[static_cast<std::size_t>(o)]});
    }
    std::sort(frame_dets.begin(), frame_dets.end(),
              [](const Detection& a, const Detection& b) { return *a.track_id < *b.track_id; });
  }

  if (cfg.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_std);
    for (float& v : out.video.data) v = static_cast<float>(std::clamp(v + noise(rng), 0.0, 1.0));
  }
  return out;
}

}  // namespace ovv

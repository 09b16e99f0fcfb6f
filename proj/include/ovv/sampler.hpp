#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "ovv/heatmap.hpp"
#include "ovv/tokenizer.hpp"

namespace ovv {

enum class SamplingMode { none, object_guided, uniform };

struct SamplerConfig {
  /// X: percent of tokens kept by objectness.
  double fg_ratio = 30.0;
  /// Y: percent of N drawn uniformly from the remaining background.
  double bg_ratio = 10.0;
  /// In uniform mode X is ignored and (X + Y) is not used: the keep ratio is
  /// bg_ratio / 100, i.e. apply_uniform == apply_ogs with X = 0.
  SamplingMode mode = SamplingMode::object_guided;
  std::uint64_t seed = 0;
  /// Block index before which tokens are dropped.
  int drop_layer = 0;

  void validate(int depth) const;
};

/// Background ratio used by default for a total keep percentage.
double default_bg_ratio(double total_percent);

struct SampleResult {
  std::vector<int> fg;       // ascending
  std::vector<int> bg;       // sampled background, ascending
  std::vector<int> indices;  // fg ∪ bg, ascending
  double threshold = 0.0;    // smallest foreground score (tau)

  int fg_count() const { return static_cast<int>(fg.size()); }
  int bg_count() const { return static_cast<int>(bg.size()); }
  int size() const { return static_cast<int>(indices.size()); }
  /// Output row order: foreground rows then background rows.
  std::vector<int> row_order() const;
};

/// round(percent / 100 * n), halves away from zero.
int percent_count(double percent, int n);

/// Top-X% by score, ties broken by ascending index; both parts ascending.
std::pair<std::vector<int>, std::vector<int>> split_fg_bg(std::span<const double> scores, double fg_ratio);

/// min(round(Y/100 * N), |bg|) indices drawn without replacement, ascending.
std::vector<int> sample_background(std::span<const int> bg, double bg_ratio, int n, std::uint64_t seed);

/// Index-level object-guided sampling. With all-zero scores the foreground is
/// itself drawn uniformly (seeded) so no corner of the grid is favoured.
SampleResult select_object_guided(std::span<const double> scores, double fg_ratio, double bg_ratio,
                                  std::uint64_t seed);

/// Index-level uniform drop: select_object_guided with X = 0.
SampleResult select_uniform(int n, double keep_ratio, std::uint64_t seed);

/// Dispatch on cfg.mode. Mode none keeps every index.
SampleResult select_tokens(std::span<const double> scores, const SamplerConfig& cfg, std::uint64_t seed);

template <typename Scalar>
std::pair<TokenSet<Scalar>, SampleResult> apply_ogs(const TokenSet<Scalar>& tokens, std::span<const double> scores,
                                                    const SamplerConfig& cfg);

template <typename Scalar>
std::pair<TokenSet<Scalar>, SampleResult> apply_uniform(const TokenSet<Scalar>& tokens, double keep_ratio,
                                                        std::uint64_t seed);

}  // namespace ovv

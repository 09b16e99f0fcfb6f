#include "ovv/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "ovv/random.hpp"

namespace ovv {

void SamplerConfig::validate(int depth) const {
  if (fg_ratio < 0.0 || fg_ratio > 100.0 || bg_ratio < 0.0 || bg_ratio > 100.0)
    throw std::invalid_argument("sampler: ratios must lie in [0, 100]");
  if (mode == SamplingMode::object_guided && fg_ratio + bg_ratio > 100.0 + 1e-9)
    throw std::invalid_argument("sampler: X + Y must not exceed 100");
  if (drop_layer < 0 || drop_layer >= depth) throw std::invalid_argument("sampler: drop_layer must be in [0, depth)");
}

double default_bg_ratio(double total_percent) { return std::abs(total_percent - 10.0) < 1e-9 ? 5.0 : 10.0; }

std::vector<int> SampleResult::row_order() const {
  std::vector<int> order(fg);
  order.insert(order.end(), bg.begin(), bg.end());
  return order;
}

int percent_count(double percent, int n) { return static_cast<int>(std::lround(percent * n / 100.0)); }

namespace {

// Partial Fisher-Yates: k distinct picks from pool, returned ascending.
std::vector<int> draw_without_replacement(std::vector<int> pool, int k, std::uint64_t seed) {
  k = std::clamp(k, 0, static_cast<int>(pool.size()));
  std::mt19937_64 rng(seed);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(rng))]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<int> complement(int n, std::span<const int> sorted_subset) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n) - sorted_subset.size());
  std::size_t j = 0;
  for (int i = 0; i < n; ++i) {
    if (j < sorted_subset.size() && sorted_subset[j] == i) {
      ++j;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

std::vector<int> iota_vector(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

constexpr std::uint64_t kFallbackStream = 0xF6;
constexpr std::uint64_t kBackgroundStream = 0xB6;

}  // namespace

std::pair<std::vector<int>, std::vector<int>> split_fg_bg(std::span<const double> scores, double fg_ratio) {
  const int n = static_cast<int>(scores.size());
  const int k = std::clamp(percent_count(fg_ratio, n), 0, n);
  std::vector<int> order = iota_vector(n);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  std::vector<int> fg(order.begin(), order.begin() + k);
  std::sort(fg.begin(), fg.end());
  return {fg, complement(n, fg)};
}

std::vector<int> sample_background(std::span<const int> bg, double bg_ratio, int n, std::uint64_t seed) {
  if (bg_ratio < 0.0 || bg_ratio > 100.0) throw std::invalid_argument("sample_background: Y must be in [0, 100]");
  const int k = std::min(percent_count(bg_ratio, n), static_cast<int>(bg.size()));
  return draw_without_replacement({bg.begin(), bg.end()}, k, derive_seed(seed, {kBackgroundStream}));
}

SampleResult select_object_guided(std::span<const double> scores, double fg_ratio, double bg_ratio,
                                  std::uint64_t seed) {
  const int n = static_cast<int>(scores.size());
  SampleResult r;
  const bool degenerate = std::all_of(scores.begin(), scores.end(), [](double s) { return s == 0.0; });
  if (degenerate) {
    r.fg = draw_without_replacement(iota_vector(n), std::clamp(percent_count(fg_ratio, n), 0, n),
                                    derive_seed(seed, {kFallbackStream}));
    r.bg = sample_background(complement(n, r.fg), bg_ratio, n, seed);
  } else {
    auto [fg, bg] = split_fg_bg(scores, fg_ratio);
    r.fg = std::move(fg);
    r.bg = sample_background(bg, bg_ratio, n, seed);
  }
  r.threshold = 0.0;
  if (!r.fg.empty()) {
    r.threshold = scores[static_cast<std::size_t>(r.fg[0])];
    for (int i : r.fg) r.threshold = std::min(r.threshold, scores[static_cast<std::size_t>(i)]);
  }
  r.indices = r.fg;
  r.indices.insert(r.indices.end(), r.bg.begin(), r.bg.end());
  std::sort(r.indices.begin(), r.indices.end());
  return r;
}

SampleResult select_uniform(int n, double keep_ratio, std::uint64_t seed) {
  if (keep_ratio < 0.0 || keep_ratio > 1.0) throw std::invalid_argument("apply_uniform: keep_ratio must be in [0, 1]");
  const std::vector<double> zeros(static_cast<std::size_t>(n), 0.0);
  return select_object_guided(zeros, 0.0, 100.0 * keep_ratio, seed);
}

SampleResult select_tokens(std::span<const double> scores, const SamplerConfig& cfg, std::uint64_t seed) {
  switch (cfg.mode) {
    case SamplingMode::none: {
      SampleResult r;
      r.fg = iota_vector(static_cast<int>(scores.size()));
      r.indices = r.fg;
      return r;
    }
    case SamplingMode::object_guided: return select_object_guided(scores, cfg.fg_ratio, cfg.bg_ratio, seed);
    case SamplingMode::uniform: return select_uniform(static_cast<int>(scores.size()), cfg.bg_ratio / 100.0, seed);
  }
  throw std::invalid_argument("unknown sampling mode");
}

template <typename Scalar>
std::pair<TokenSet<Scalar>, SampleResult> apply_ogs(const TokenSet<Scalar>& tokens, std::span<const double> scores,
                                                    const SamplerConfig& cfg) {
  if (static_cast<int>(scores.size()) != tokens.size())
    throw std::invalid_argument("apply_ogs: scores are not aligned with tokens");
  SampleResult r = select_object_guided(scores, cfg.fg_ratio, cfg.bg_ratio, cfg.seed);
  const auto order = r.row_order();
  TokenSet<Scalar> out = tokens.select(order);
  if (out.scores.empty()) {
    for (int i : order) out.scores.push_back(scores[static_cast<std::size_t>(i)]);
  }
  return {std::move(out), std::move(r)};
}

template <typename Scalar>
std::pair<TokenSet<Scalar>, SampleResult> apply_uniform(const TokenSet<Scalar>& tokens, double keep_ratio,
                                                        std::uint64_t seed) {
  SampleResult r = select_uniform(tokens.size(), keep_ratio, seed);
  return {tokens.select(r.row_order()), std::move(r)};
}

template std::pair<TokenSet<float>, SampleResult> apply_ogs(const TokenSet<float>&, std::span<const double>,
                                                            const SamplerConfig&);
template std::pair<TokenSet<double>, SampleResult> apply_ogs(const TokenSet<double>&, std::span<const double>,
                                                             const SamplerConfig&);
template std::pair<TokenSet<float>, SampleResult> apply_uniform(const TokenSet<float>&, double, std::uint64_t);
template std::pair<TokenSet<double>, SampleResult> apply_uniform(const TokenSet<double>&, double, std::uint64_t);

}  // namespace ovv

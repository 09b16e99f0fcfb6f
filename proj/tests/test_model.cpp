#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ovv/model.hpp"
#include "ovv/trainer.hpp"
#include "test_util.hpp"

using namespace ovv;
using fixture::busy_params;
using fixture::tiny_clip;
using fixture::tiny_model;

namespace {

ParamStore<double> attention_params(int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  ParamStore<double> p;
  for (const char* w : {"q", "k", "v", "o"}) {
    Matrix<double> m(d, d), b(1, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = n(rng);
    p[std::string("a.w") + w] = m;
    p[std::string("a.b") + w] = b;
  }
  return p;
}

Matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Block-only parameter store (prefix "b.") sized for D and hidden.
ParamStore<double> block_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamStore<double> p;
  for (auto& [name, m] : busy_params<double>(cfg, seed))
    if (name.rfind("blocks.0.", 0) == 0) p["b." + name.substr(9)] = m;
  return p;
}

}  // namespace

TEST(Attention, ScalarOracleOneHead) {
  const auto p = attention_params(2, 1);
  const Matrix<double> x = random_matrix(2, 2, 2);
  const Matrix<double> out = mha(x, x, x, p, "a.", 1);

  // Independent scalar evaluation of softmax(QK^T / sqrt(2)) V, then W_o.
  auto proj = [&](const char* w, int row, int col) {
    double s = p.at(std::string("a.b") + w)(0, col);
    for (int k = 0; k < 2; ++k) s += x(row, k) * p.at(std::string("a.w") + w)(k, col);
    return s;
  };
  for (int i = 0; i < 2; ++i) {
    double score[2], mx = -1e300;
    for (int j = 0; j < 2; ++j) {
      score[j] = (proj("q", i, 0) * proj("k", j, 0) + proj("q", i, 1) * proj("k", j, 1)) / std::sqrt(2.0);
      mx = std::max(mx, score[j]);
    }
    const double e0 = std::exp(score[0] - mx), e1 = std::exp(score[1] - mx);
    double head[2];
    for (int c = 0; c < 2; ++c) head[c] = (e0 * proj("v", 0, c) + e1 * proj("v", 1, c)) / (e0 + e1);
    for (int c = 0; c < 2; ++c) {
      const double expect = p.at("a.bo")(0, c) + head[0] * p.at("a.wo")(0, c) + head[1] * p.at("a.wo")(1, c);
      EXPECT_NEAR(out(i, c), expect, 1e-13);
    }
  }
}

TEST(Attention, SingleKeyPassesValueThrough) {
  const auto p = attention_params(4, 3);
  const Matrix<double> q = random_matrix(3, 4, 4), kv = random_matrix(1, 4, 5);
  AttentionCache<double> cache;
  const Matrix<double> out = mha(q, kv, kv, p, "a.", 2, &cache);
  const Matrix<double> v = (kv * p.at("a.wv")).rowwise() + p.at("a.bv").row(0);
  const Matrix<double> expect = (v * p.at("a.wo")).rowwise() + p.at("a.bo").row(0);
  for (int i = 0; i < 3; ++i) EXPECT_LT((out.row(i) - expect.row(0)).cwiseAbs().maxCoeff(), 1e-13);
  for (const auto& probs : cache.probs) EXPECT_TRUE((probs.array() == 1.0).all());
}

TEST(Attention, KeyValuePermutationInvariance) {
  const auto p = attention_params(4, 6);
  const Matrix<double> q = random_matrix(3, 4, 7), kv = random_matrix(5, 4, 8);
  Matrix<double> perm(5, 4);
  const int order[5] = {3, 0, 4, 2, 1};
  for (int i = 0; i < 5; ++i) perm.row(i) = kv.row(order[i]);
  EXPECT_LT(fixture::rel_diff(mha(q, kv, kv, p, "a.", 2), mha(q, perm, perm, p, "a.", 2)), 1e-14);
}

TEST(Block, ZeroResidualBranchesAreIdentity) {
  const auto cfg = tiny_model(false);
  auto p = block_params(cfg, 2);
  for (const char* n : {"b.attn.wo", "b.attn.bo", "b.mlp.w2", "b.mlp.b2"}) p[n].setZero();
  const Matrix<double> x = random_matrix(5, cfg.dim, 3);
  EXPECT_EQ(vanilla_block<double>(x, p, "b.", cfg.heads), x);
}

TEST(Block, ShapePreserved) {
  const auto cfg = tiny_model(false);
  const auto p = block_params(cfg, 2);
  for (int n : {1, 3, 8}) {
    const Matrix<double> y = vanilla_block<double>(random_matrix(n, cfg.dim, 4), p, "b.", cfg.heads);
    EXPECT_EQ(y.rows(), n);
    EXPECT_EQ(y.cols(), cfg.dim);
  }
}

TEST(Block, GradientMatchesFiniteDifferences) {
  const auto cfg = tiny_model(false);
  const auto params = block_params(cfg, 5);
  const Matrix<double> x = random_matrix(6, cfg.dim, 6), r = random_matrix(6, cfg.dim, 7);
  auto loss = [&](const ParamStore<double>& p) {
    return vanilla_block<double>(x, p, "b.", cfg.heads).cwiseProduct(r).sum();
  };
  BlockCache<double> cache;
  vanilla_block<double>(x, params, "b.", cfg.heads, &cache);
  ParamStore<double> grads = zeros_like(params);
  const Matrix<double> dx = transformer_block_backward<double>(cache, r, params, grads, "b.", cfg.heads, false);
  EXPECT_LT(finite_difference_check(loss, params, grads).max_relative_error, 1e-4);

  // Input gradient as well.
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Matrix<double> up = x, down = x;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd = (vanilla_block<double>(up, params, "b.", cfg.heads).cwiseProduct(r).sum() -
                       vanilla_block<double>(down, params, "b.", cfg.heads).cwiseProduct(r).sum()) /
                      (2 * h);
    EXPECT_NEAR(dx.data()[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Pool, OneHotAffinitySelectsMlpOfRow) {
  const auto cfg = tiny_model();
  const auto p = block_params(cfg, 8);
  const Matrix<double> z = random_matrix(4, cfg.dim, 9);
  const std::vector<PoolGroup<double>> groups{{1, 0, {2}, {1.0}}};
  const auto objs = pool_object_tokens<double>(z, groups, p, "b.pool.");
  ASSERT_EQ(objs.size(), 1);
  // MLP by hand.
  Matrix<double> h = (z.row(2) * p.at("b.pool.w1")) + p.at("b.pool.b1");
  h = h.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); });
  const Matrix<double> expect = h * p.at("b.pool.w2") + p.at("b.pool.b2");
  EXPECT_LT((objs.features - expect).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Pool, WeightingThenElementwiseMax) {
  ParamStore<double> p;
  p["x.w1"] = Matrix<double>::Identity(2, 2);
  p["x.b1"] = Matrix<double>::Zero(1, 2);
  p["x.w2"] = Matrix<double>::Identity(2, 2);
  p["x.b2"] = Matrix<double>::Zero(1, 2);
  Matrix<double> z(2, 2);
  z << 4.0, 1.0,
       1.0, 3.0;
  const std::vector<PoolGroup<double>> groups{{0, 0, {0, 1}, {0.5, 1.0}}};
  const auto objs = pool_object_tokens<double>(z, groups, p, "x.");
  auto gelu = [](double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); };
  // Weighted rows (2, 0.5) and (1, 3); the linear layers are identities.
  EXPECT_DOUBLE_EQ(objs.features(0, 0), std::max(gelu(2.0), gelu(1.0)));
  EXPECT_DOUBLE_EQ(objs.features(0, 1), std::max(gelu(0.5), gelu(3.0)));
}

TEST(Pool, GroupsSkipAbsentObjects) {
  const auto grid = TokenGridSpec::for_video(4, 16, 16, TubeDims{2, 8, 8});
  InstanceAffinity aff;
  aff.object_ids = {0, 3};
  aff.tokens = {0, 1, 2, 3, 4, 5, 6, 7};
  aff.values = Matrix<double>::Zero(2, 8);
  aff.values(0, 1) = 0.4;  // object 0 only in token-frame 0
  aff.values(1, 4) = 0.2;  // object 3 only in token-frame 1
  aff.values(1, 6) = 0.7;
  const std::vector<int> rows{6, 1, 4};
  const auto groups = build_pool_groups<double>(aff, rows, grid);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].object_id, 0);
  EXPECT_EQ(groups[0].rows, (std::vector<int>{1}));
  EXPECT_EQ(groups[1].object_id, 3);
  EXPECT_EQ(groups[1].token_frame, 1);
  EXPECT_EQ(groups[1].rows, (std::vector<int>{0, 2}));
  EXPECT_EQ(groups[1].weights, (std::vector<double>{0.7, 0.2}));
  // Survivors that exclude object 0's token produce no token for it.
  const std::vector<int> no_zero{6, 4};
  EXPECT_EQ(build_pool_groups<double>(aff, no_zero, grid).size(), 1u);
}

TEST(Identity, TableBehaviour) {
  ObjectTokenSet<double> objs;
  objs.features = random_matrix(3, 4, 1);
  objs.object_ids = {2, 2, 0};
  objs.token_frames = {0, 1, 0};
  const auto before = objs.features;
  add_identity(objs, Matrix<double>(Matrix<double>::Zero(4, 4)));
  EXPECT_EQ(objs.features, before);

  const Matrix<double> table = random_matrix(4, 4, 2);
  add_identity(objs, table);
  EXPECT_EQ((objs.features.row(0) - before.row(0)).eval(), table.row(2));
  EXPECT_EQ((objs.features.row(1) - before.row(1)).eval(), table.row(2));

  objs.object_ids[0] = 9;
  EXPECT_THROW(add_identity(objs, table), std::out_of_range);
}

TEST(OamBlock, EmptyGroupsMatchVanillaBitForBit) {
  const auto cfg = tiny_model();
  const auto p = block_params(cfg, 3);
  const Matrix<double> x = random_matrix(5, cfg.dim, 4);
  EXPECT_EQ(oam_block<double>(x, {}, p, "b.", cfg.heads, true), vanilla_block<double>(x, p, "b.", cfg.heads));
}

TEST(OamBlock, KeysIncludeObjectTokens) {
  const auto cfg = tiny_model();
  const auto p = block_params(cfg, 3);
  const Matrix<double> x = random_matrix(5, cfg.dim, 4);
  const std::vector<PoolGroup<double>> groups{{0, 0, {0, 1}, {0.3, 1.0}}, {1, 1, {4}, {0.8}}};
  BlockCache<double> cache;
  oam_block<double>(x, groups, p, "b.", cfg.heads, true, &cache);
  EXPECT_EQ(cache.attn.k.rows(), 5 + 2);
  EXPECT_EQ(cache.attn.q.rows(), 5);
}

TEST(OamBlock, IdentityFlagOff) {
  const auto cfg = tiny_model();
  auto p = block_params(cfg, 3);
  const Matrix<double> x = random_matrix(5, cfg.dim, 4);
  const std::vector<PoolGroup<double>> groups{{0, 0, {0, 1}, {0.3, 1.0}}};
  const auto off = oam_block<double>(x, groups, p, "b.", cfg.heads, false);
  p["b.identity"].setRandom();
  EXPECT_EQ(oam_block<double>(x, groups, p, "b.", cfg.heads, false), off);
  EXPECT_NE(oam_block<double>(x, groups, p, "b.", cfg.heads, true), off);
}

TEST(OamBlock, GradientMatchesFiniteDifferences) {
  const auto cfg = tiny_model();
  const auto params = block_params(cfg, 11);
  const Matrix<double> x = random_matrix(6, cfg.dim, 12), r = random_matrix(6, cfg.dim, 13);
  const std::vector<PoolGroup<double>> groups{{0, 0, {0, 1, 2}, {0.3, 1.0, 0.6}}, {2, 1, {3, 5}, {0.8, 0.1}},
                                              {1, 0, {4}, {1.2}}};
  auto loss = [&](const ParamStore<double>& p) {
    return oam_block<double>(x, groups, p, "b.", cfg.heads, true).cwiseProduct(r).sum();
  };
  BlockCache<double> cache;
  oam_block<double>(x, groups, params, "b.", cfg.heads, true, &cache);
  ParamStore<double> grads = zeros_like(params);
  transformer_block_backward<double>(cache, r, params, grads, "b.", cfg.heads, true);
  const auto report = finite_difference_check(loss, params, grads);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_parameter;
  // Identity rows of objects that never appear get exactly zero gradient.
  EXPECT_TRUE((grads.at("b.identity").row(3).array() == 0.0).all());
  EXPECT_TRUE((grads.at("b.identity").row(0).array() != 0.0).any());
}

TEST(Params, DeterministicInitAndZeroIdentity) {
  const auto cfg = tiny_model();
  const auto a = init_params<float>(cfg, 4), b = init_params<float>(cfg, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.at("head.w"), init_params<float>(cfg, 5).at("head.w"));
  for (int l : cfg.oam_layers) EXPECT_TRUE(a.at("blocks." + std::to_string(l) + ".identity").isZero(0.0));
}

TEST(Params, ClosedFormCount) {
  ModelConfig cfg;
  cfg.frames = 8;
  cfg.height = cfg.width = 32;
  cfg.tube = {2, 8, 8};
  cfg.depth = 2;
  cfg.dim = 16;
  cfg.heads = 2;
  cfg.mlp_hidden = 64;
  cfg.num_classes = 4;
  ASSERT_EQ(cfg.grid().size(), 64);
  const std::size_t patch = 2 * 8 * 8 * 3, d = 16, hidden = 64, n = 64, k = 4;
  const std::size_t embed = patch * d + d + n * d;
  const std::size_t block = 4 * d + 4 * (d * d + d) + (d * hidden + hidden) + (hidden * d + d);
  const std::size_t head = 2 * d + d * k + k;
  EXPECT_EQ(parameter_count(init_params<double>(cfg, 0)), embed + 2 * block + head);
  EXPECT_EQ(embed + 2 * block + head, 13844u);
}

TEST(Model, LogitsShapeAndNoDropEquivalence) {
  const auto cfg = tiny_model();
  const auto p = busy_params<float>(cfg, 1);
  const auto input = prepare_clip<float>(cfg, tiny_clip(1), ClipView{0, 1});
  const Matrix<float> full = forward(cfg, p, input, TokenPlan{});
  EXPECT_EQ(full.cols(), cfg.num_classes);
  SamplerConfig s;
  s.fg_ratio = 100;
  s.bg_ratio = 0;
  EXPECT_EQ(forward(cfg, p, input, make_plan(input, s, 3)), full);
}

TEST(Model, EmptyDetectionsEqualVanilla) {
  const auto cfg = tiny_model();
  auto vanilla_cfg = cfg;
  vanilla_cfg.oam_layers.clear();
  const auto p = busy_params<double>(cfg, 2);
  auto clip = tiny_clip(2);
  clip.tracks.frames.clear();
  clip.tracks.num_tracks = 0;
  const auto input = prepare_clip<double>(cfg, clip, ClipView{0, 1});
  EXPECT_EQ(forward(cfg, p, input, TokenPlan{}), forward(vanilla_cfg, p, input, TokenPlan{}));
}

TEST(Model, PermutationOfSampledRows) {
  const auto cfg = tiny_model();
  const auto pd = busy_params<double>(cfg, 3);
  const auto pf = cast_params<float>(pd);
  const auto clip = tiny_clip(3);
  const auto in_d = prepare_clip<double>(cfg, clip, ClipView{0, 1});
  const auto in_f = prepare_clip<float>(cfg, clip, ClipView{0, 1});
  SamplerConfig s;
  s.fg_ratio = 50;
  s.bg_ratio = 25;
  const TokenPlan plan = make_plan(in_d, s, 1);
  const auto ref_d = forward(cfg, pd, in_d, plan);
  const auto ref_f = forward(cfg, pf, in_f, plan);
  std::mt19937_64 rng(0);
  for (int i = 0; i < 10; ++i) {
    TokenPlan shuffled = plan;
    std::shuffle(shuffled.keep->begin(), shuffled.keep->end(), rng);
    EXPECT_LT(fixture::rel_diff(forward(cfg, pd, in_d, shuffled), ref_d), 1e-10);
    EXPECT_LT(fixture::rel_diff(forward(cfg, pf, in_f, shuffled), ref_f), 1e-5);
  }
}

namespace {

std::vector<GradCheckItem> tiny_batch(const ModelConfig& cfg, const SamplerConfig& s, int drop_layer) {
  std::vector<GradCheckItem> items;
  for (std::uint64_t seed : {4u, 5u}) {
    const auto clip = tiny_clip(seed);
    auto input = prepare_clip<double>(cfg, clip, ClipView{0, 1});
    TokenPlan plan = make_plan(input, s, seed);
    plan.drop_layer = drop_layer;
    items.push_back({std::move(input), std::move(plan), clip.label});
  }
  return items;
}

}  // namespace

TEST(Model, FullGradientCheckOgsOam) {
  const auto cfg = tiny_model();
  SamplerConfig s;
  s.fg_ratio = 50;
  s.bg_ratio = 25;
  const auto params = busy_params<double>(cfg, 6);
  const auto items = tiny_batch(cfg, s, 0);
  ASSERT_TRUE(items[0].input.affinity.values.rows() > 0);
  const auto report = grad_check(cfg, params, items, 0.1);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_parameter;
}

TEST(Model, GradientCheckWithLateDrop) {
  const auto cfg = tiny_model();
  SamplerConfig s;
  s.fg_ratio = 25;
  s.bg_ratio = 25;
  const auto params = busy_params<double>(cfg, 7);
  const auto report = grad_check(cfg, params, tiny_batch(cfg, s, 1), 0.1);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_parameter;
}

TEST(Model, GradientCheckBinaryMask) {
  auto cfg = tiny_model();
  cfg.aggregation = Aggregation::binary_block_mask;
  SamplerConfig s;
  s.mode = SamplingMode::none;
  const auto params = busy_params<double>(cfg, 8);
  const auto report = grad_check(cfg, params, tiny_batch(cfg, s, 0), 0.0);
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_parameter;
}

TEST(Model, UnusedIdentityHasZeroGradient) {
  const auto cfg = tiny_model();
  const auto params = busy_params<double>(cfg, 9);
  auto clip = tiny_clip(9);
  clip.tracks.frames.clear();
  clip.tracks.num_tracks = 0;
  std::vector<GradCheckItem> items{{prepare_clip<double>(cfg, clip, ClipView{0, 1}), TokenPlan{}, clip.label}};
  ParamStore<double> grads = zeros_like(params);
  batch_loss(cfg, params, items, 0.1, &grads);
  for (int l : cfg.oam_layers) {
    const std::string b = "blocks." + std::to_string(l) + ".";
    for (const char* n : {"identity", "pool.w1", "pool.b1", "pool.w2", "pool.b2"})
      EXPECT_TRUE(grads.at(b + n).isZero(0.0)) << b << n;
  }
}

TEST(Model, LinearHeadGradient) {
  // Cross-entropy on a linear layer over fixed features.
  const Matrix<double> f = random_matrix(1, 6, 3);
  ParamStore<double> p{{"w", random_matrix(6, 4, 4)}, {"b", random_matrix(1, 4, 5)}};
  auto loss = [&](const ParamStore<double>& q) {
    const Matrix<double> z = f * q.at("w") + q.at("b");
    return cross_entropy_smoothed<double>({z.data(), 4}, 2, 0.1);
  };
  const Matrix<double> z = f * p.at("w") + p.at("b");
  Matrix<double> dz(1, 4);
  cross_entropy_smoothed<double>({z.data(), 4}, 2, 0.1, {dz.data(), 4});
  ParamStore<double> g{{"w", f.transpose() * dz}, {"b", dz}};
  EXPECT_LT(finite_difference_check(loss, p, g).max_relative_error, 1e-8);
}

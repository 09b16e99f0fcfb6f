#include "ovv/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include "ovv/tracking.hpp"

namespace ovv {

namespace {

constexpr double kLayerNormEps = 1e-6;

template <typename S>
const Matrix<S>& param(const ParamStore<S>& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

template <typename S>
Matrix<S>& grad_slot(ParamStore<S>& g, const ParamStore<S>& p, const std::string& name) {
  auto it = g.find(name);
  if (it != g.end()) return it->second;
  const auto& w = param(p, name);
  return g.emplace(name, Matrix<S>::Zero(w.rows(), w.cols())).first->second;
}

template <typename S>
Matrix<S> linear(const Matrix<S>& x, const Matrix<S>& w, const Matrix<S>& b) {
  Matrix<S> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename S>
Matrix<S> linear_backward(const Matrix<S>& x, const Matrix<S>& w, const Matrix<S>& dy, Matrix<S>& dw,
                          Matrix<S>& db) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  Matrix<S> dx(dy.rows(), w.rows());
  dx.noalias() = dy * w.transpose();
  return dx;
}

template <typename S>
Matrix<S> layer_norm(const Matrix<S>& x, const Matrix<S>& gain, const Matrix<S>& bias, LayerNormCache<S>* cache) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Matrix<S> xhat(n, d);
  ColumnVector<S> inv(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const S mean = x.row(r).mean();
    xhat.row(r) = x.row(r).array() - mean;
    const S var = xhat.row(r).squaredNorm() / static_cast<S>(d);
    inv(r) = S(1) / std::sqrt(var + static_cast<S>(kLayerNormEps));
    xhat.row(r) *= inv(r);
  }
  Matrix<S> y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.rowwise() += bias.row(0);
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

template <typename S>
Matrix<S> layer_norm_backward(const LayerNormCache<S>& c, const Matrix<S>& gain, const Matrix<S>& dy,
                              Matrix<S>& dgain, Matrix<S>& dbias) {
  const auto& xhat = c.normalized;
  dgain += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbias += dy.colwise().sum();
  const Matrix<S> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
  const S d = static_cast<S>(dy.cols());
  Matrix<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const S mean_g = dxhat.row(r).sum() / d;
    const S mean_gx = dxhat.row(r).dot(xhat.row(r)) / d;
    dx.row(r) = c.inv_std(r) * (dxhat.row(r).array() - mean_g - xhat.row(r).array() * mean_gx).matrix();
  }
  return dx;
}

template <typename S>
Matrix<S> gelu(const Matrix<S>& x) {
  const S inv_sqrt2 = static_cast<S>(1.0 / std::numbers::sqrt2);
  return x.unaryExpr([inv_sqrt2](S v) { return S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)); });
}

template <typename S>
Matrix<S> gelu_backward(const Matrix<S>& x, const Matrix<S>& dy) {
  const S inv_sqrt2 = static_cast<S>(1.0 / std::numbers::sqrt2);
  const S inv_sqrt2pi = static_cast<S>(1.0 / std::sqrt(2.0 * std::numbers::pi));
  Matrix<S> d = x.unaryExpr([=](S v) {
    return S(0.5) * (S(1) + std::erf(v * inv_sqrt2)) + v * std::exp(S(-0.5) * v * v) * inv_sqrt2pi;
  });
  return (d.array() * dy.array()).matrix();
}

template <typename S>
void softmax_rows(Matrix<S>& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const S m = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - m).exp();
    s.row(r) /= s.row(r).sum();
  }
}

template <typename S>
Matrix<S> select_rows(const Matrix<S>& m, std::span<const int> rows) {
  Matrix<S> out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

std::string block_prefix(int layer) { return "blocks." + std::to_string(layer) + "."; }

template <typename S>
Matrix<S> pool_backward(const PoolCache<S>& c, const Matrix<S>& d_objects, Eigen::Index token_rows,
                        const ParamStore<S>& p, ParamStore<S>& g, const std::string& prefix) {
  const Eigen::Index dim = d_objects.cols();
  Matrix<S> d_out = Matrix<S>::Zero(c.out.rows(), c.out.cols());
  for (Eigen::Index j = 0; j < d_objects.rows(); ++j)
    for (Eigen::Index d = 0; d < dim; ++d) d_out(c.argmax(j, d), d) += d_objects(j, d);
  Matrix<S> d_hidden = linear_backward(c.hidden, param(p, prefix + "w2"), d_out, grad_slot(g, p, prefix + "w2"),
                                       grad_slot(g, p, prefix + "b2"));
  Matrix<S> d_pre = gelu_backward(c.hidden_pre, d_hidden);
  Matrix<S> d_weighted = linear_backward(c.weighted, param(p, prefix + "w1"), d_pre,
                                         grad_slot(g, p, prefix + "w1"), grad_slot(g, p, prefix + "b1"));
  Matrix<S> d_tokens = Matrix<S>::Zero(token_rows, dim);
  for (std::size_t k = 0; k < c.pair_row.size(); ++k)
    d_tokens.row(c.pair_row[k]) += c.pair_weight[k] * d_weighted.row(static_cast<Eigen::Index>(k));
  return d_tokens;
}

}  // namespace

// ---------------------------------------------------------------------------

TokenGridSpec ModelConfig::grid() const { return TokenGridSpec::for_video(frames, height, width, tube); }

bool ModelConfig::is_oam_layer(int layer) const {
  return std::find(oam_layers.begin(), oam_layers.end(), layer) != oam_layers.end();
}

void ModelConfig::validate() const {
  (void)grid();
  if (depth < 1 || dim < 1 || heads < 1 || mlp_hidden < 1) throw std::invalid_argument("model: sizes must be positive");
  if (dim % heads != 0) throw std::invalid_argument("model: heads must divide dim");
  if (num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
  if (channels < 1) throw std::invalid_argument("model: channels must be positive");
  for (int l : oam_layers)
    if (l < 0 || l >= depth) throw std::invalid_argument("model: oam layer " + std::to_string(l) + " outside [0, depth)");
  if (max_tracks < 1) throw std::invalid_argument("model: max_tracks must be >= 1");
  if (!(pixel_std > 0.0) || !std::isfinite(pixel_mean)) throw std::invalid_argument("model: bad pixel normalization");
}

std::vector<int> default_oam_layers(int depth) {
  std::set<int> s{depth / 6, depth / 2, depth - 1};
  return {s.begin(), s.end()};
}

template <typename S>
ParamStore<S> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  ParamStore<S> p;
  auto weight = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
    Matrix<S> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(normal(rng));
    p.emplace(name, std::move(m));
  };
  auto constant = [&](const std::string& name, Eigen::Index r, Eigen::Index c, double v) {
    p.emplace(name, Matrix<S>::Constant(r, c, static_cast<S>(v)));
  };
  const int d = cfg.dim;
  weight("embed.proj", cfg.patch_dim(), d);
  constant("embed.bias", 1, d, 0.0);
  weight("embed.pos", cfg.grid().size(), d);
  for (int l = 0; l < cfg.depth; ++l) {
    const std::string b = block_prefix(l);
    constant(b + "ln1.gain", 1, d, 1.0);
    constant(b + "ln1.bias", 1, d, 0.0);
    for (const char* w : {"q", "k", "v", "o"}) {
      weight(b + "attn.w" + w, d, d);
      constant(b + "attn.b" + w, 1, d, 0.0);
    }
    constant(b + "ln2.gain", 1, d, 1.0);
    constant(b + "ln2.bias", 1, d, 0.0);
    weight(b + "mlp.w1", d, cfg.mlp_hidden);
    constant(b + "mlp.b1", 1, cfg.mlp_hidden, 0.0);
    weight(b + "mlp.w2", cfg.mlp_hidden, d);
    constant(b + "mlp.b2", 1, d, 0.0);
    if (cfg.is_oam_layer(l)) {
      weight(b + "pool.w1", d, d);
      constant(b + "pool.b1", 1, d, 0.0);
      weight(b + "pool.w2", d, d);
      constant(b + "pool.b2", 1, d, 0.0);
      if (cfg.use_identity_embedding) constant(b + "identity", cfg.max_tracks, d, 0.0);
    }
  }
  constant("final_ln.gain", 1, d, 1.0);
  constant("final_ln.bias", 1, d, 0.0);
  weight("head.w", d, cfg.num_classes);
  constant("head.b", 1, cfg.num_classes, 0.0);
  return p;
}

template <typename S>
void perturb_params(ParamStore<S>& p, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5 * scale, 0.5 * scale);
  for (auto& [name, m] : p)
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += static_cast<S>(u(rng));
}

// ---------------------------------------------------------------------------

template <typename S>
Matrix<S> mha(const Matrix<S>& queries, const Matrix<S>& keys, const Matrix<S>& values, const ParamStore<S>& p,
              const std::string& prefix, int heads, AttentionCache<S>* cache) {
  const auto& wq = param(p, prefix + "wq");
  const Eigen::Index dim = wq.cols();
  if (heads < 1 || dim % heads != 0) throw std::invalid_argument("mha: heads must divide the model width");
  if (keys.rows() < 1) throw std::invalid_argument("mha: need at least one key");
  if (keys.rows() != values.rows()) throw std::invalid_argument("mha: keys and values differ in row count");
  if (queries.cols() != dim || keys.cols() != dim || values.cols() != dim)
    throw std::invalid_argument("mha: input width does not match parameters");

  const Eigen::Index hd = dim / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  Matrix<S> q = linear(queries, wq, param(p, prefix + "bq"));
  Matrix<S> k = linear(keys, param(p, prefix + "wk"), param(p, prefix + "bk"));
  Matrix<S> v = linear(values, param(p, prefix + "wv"), param(p, prefix + "bv"));
  Matrix<S> heads_out(q.rows(), dim);
  std::vector<Matrix<S>> probs;
  for (int h = 0; h < heads; ++h) {
    Matrix<S> s(q.rows(), k.rows());
    s.noalias() = q.middleCols(h * hd, hd) * k.middleCols(h * hd, hd).transpose();
    s *= scale;
    softmax_rows(s);
    heads_out.middleCols(h * hd, hd).noalias() = s * v.middleCols(h * hd, hd);
    if (cache) probs.push_back(std::move(s));
  }
  Matrix<S> out = linear(heads_out, param(p, prefix + "wo"), param(p, prefix + "bo"));
  if (cache) {
    cache->q_in = queries;
    cache->k_in = keys;
    cache->v_in = values;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->heads_out = std::move(heads_out);
    cache->probs = std::move(probs);
  }
  return out;
}

template <typename S>
AttentionGrads<S> mha_backward(const AttentionCache<S>& c, const Matrix<S>& d_out, const ParamStore<S>& p,
                               ParamStore<S>& g, const std::string& prefix, int heads) {
  const Eigen::Index dim = c.q.cols();
  const Eigen::Index hd = dim / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));
  Matrix<S> d_heads = linear_backward(c.heads_out, param(p, prefix + "wo"), d_out, grad_slot(g, p, prefix + "wo"),
                                      grad_slot(g, p, prefix + "bo"));
  Matrix<S> dq(c.q.rows(), dim), dk(c.k.rows(), dim), dv(c.v.rows(), dim);
  for (int h = 0; h < heads; ++h) {
    const auto d_o = d_heads.middleCols(h * hd, hd);
    const Matrix<S>& prob = c.probs[static_cast<std::size_t>(h)];
    dv.middleCols(h * hd, hd).noalias() = prob.transpose() * d_o;
    Matrix<S> d_prob(prob.rows(), prob.cols());
    d_prob.noalias() = d_o * c.v.middleCols(h * hd, hd).transpose();
    const ColumnVector<S> row_dot = (d_prob.array() * prob.array()).rowwise().sum();
    Matrix<S> d_score = (prob.array() * (d_prob.array().colwise() - row_dot.array())).matrix();
    d_score *= scale;
    dq.middleCols(h * hd, hd).noalias() = d_score * c.k.middleCols(h * hd, hd);
    dk.middleCols(h * hd, hd).noalias() = d_score.transpose() * c.q.middleCols(h * hd, hd);
  }
  AttentionGrads<S> out;
  out.queries = linear_backward(c.q_in, param(p, prefix + "wq"), dq, grad_slot(g, p, prefix + "wq"),
                                grad_slot(g, p, prefix + "bq"));
  out.keys = linear_backward(c.k_in, param(p, prefix + "wk"), dk, grad_slot(g, p, prefix + "wk"),
                             grad_slot(g, p, prefix + "bk"));
  out.values = linear_backward(c.v_in, param(p, prefix + "wv"), dv, grad_slot(g, p, prefix + "wv"),
                               grad_slot(g, p, prefix + "bv"));
  return out;
}

// ---------------------------------------------------------------------------

template <typename S>
std::vector<PoolGroup<S>> build_pool_groups(const InstanceAffinity& affinity, std::span<const int> row_tokens,
                                            const TokenGridSpec& grid) {
  // Column of each flat token in the affinity matrix.
  std::vector<int> column(static_cast<std::size_t>(grid.size()), -1);
  for (std::size_t c = 0; c < affinity.tokens.size(); ++c) column[static_cast<std::size_t>(affinity.tokens[c])] = static_cast<int>(c);

  std::vector<PoolGroup<S>> groups;
  for (std::size_t o = 0; o < affinity.object_ids.size(); ++o) {
    std::vector<PoolGroup<S>> per_frame(static_cast<std::size_t>(grid.nt));
    for (std::size_t r = 0; r < row_tokens.size(); ++r) {
      const int token = row_tokens[r];
      const int col = column[static_cast<std::size_t>(token)];
      if (col < 0) throw std::invalid_argument("build_pool_groups: row token has no affinity column");
      const double a = affinity.values(static_cast<Eigen::Index>(o), col);
      if (!(a > 0.0)) continue;
      auto& grp = per_frame[static_cast<std::size_t>(grid.coord(token).t)];
      grp.rows.push_back(static_cast<int>(r));
      grp.weights.push_back(static_cast<S>(a));
    }
    for (int t = 0; t < grid.nt; ++t) {
      auto& grp = per_frame[static_cast<std::size_t>(t)];
      if (grp.rows.empty()) continue;
      grp.object_id = affinity.object_ids[o];
      grp.token_frame = t;
      groups.push_back(std::move(grp));
    }
  }
  return groups;
}

template <typename S>
ObjectTokenSet<S> pool_object_tokens(const Matrix<S>& tokens, std::span<const PoolGroup<S>> groups,
                                     const ParamStore<S>& p, const std::string& prefix, PoolCache<S>* cache) {
  const Eigen::Index dim = tokens.cols();
  PoolCache<S> local;
  PoolCache<S>& c = cache ? *cache : local;
  c.pair_row.clear();
  c.pair_weight.clear();
  std::vector<std::size_t> group_start;
  for (const auto& g : groups) {
    if (g.rows.size() != g.weights.size()) throw std::invalid_argument("pool: rows and weights differ");
    group_start.push_back(c.pair_row.size());
    for (std::size_t i = 0; i < g.rows.size(); ++i) {
      if (g.rows[i] < 0 || g.rows[i] >= tokens.rows()) throw std::out_of_range("pool: row out of range");
      c.pair_row.push_back(g.rows[i]);
      c.pair_weight.push_back(g.weights[i]);
    }
  }
  group_start.push_back(c.pair_row.size());

  c.weighted.resize(static_cast<Eigen::Index>(c.pair_row.size()), dim);
  for (std::size_t k = 0; k < c.pair_row.size(); ++k)
    c.weighted.row(static_cast<Eigen::Index>(k)) = c.pair_weight[k] * tokens.row(c.pair_row[k]);
  c.hidden_pre = linear(c.weighted, param(p, prefix + "w1"), param(p, prefix + "b1"));
  c.hidden = gelu(c.hidden_pre);
  c.out = linear(c.hidden, param(p, prefix + "w2"), param(p, prefix + "b2"));

  ObjectTokenSet<S> objects;
  objects.features.resize(static_cast<Eigen::Index>(groups.size()), dim);
  c.argmax.resize(static_cast<Eigen::Index>(groups.size()), dim);
  for (std::size_t j = 0; j < groups.size(); ++j) {
    objects.object_ids.push_back(groups[j].object_id);
    objects.token_frames.push_back(groups[j].token_frame);
    const auto begin = static_cast<Eigen::Index>(group_start[j]);
    const auto end = static_cast<Eigen::Index>(group_start[j + 1]);
    for (Eigen::Index d = 0; d < dim; ++d) {
      Eigen::Index best = begin;
      for (Eigen::Index k = begin + 1; k < end; ++k)
        if (c.out(k, d) > c.out(best, d)) best = k;
      objects.features(static_cast<Eigen::Index>(j), d) = c.out(best, d);
      c.argmax(static_cast<Eigen::Index>(j), d) = static_cast<int>(best);
    }
  }
  return objects;
}

template <typename S>
void add_identity(ObjectTokenSet<S>& objects, const Matrix<S>& table) {
  for (int j = 0; j < objects.size(); ++j) {
    const int id = objects.object_ids[static_cast<std::size_t>(j)];
    if (id < 0 || id >= table.rows())
      throw std::out_of_range("identity embedding: object id " + std::to_string(id) + " exceeds table capacity " +
                              std::to_string(table.rows()));
    objects.features.row(j) += table.row(id);
  }
}

template <typename S>
Matrix<S> transformer_block(const Matrix<S>& x, const ParamStore<S>& p, const std::string& prefix, int heads,
                            std::span<const PoolGroup<S>> groups, bool use_identity, BlockCache<S>* cache) {
  BlockCache<S> local;
  BlockCache<S>& c = cache ? *cache : local;
  c.input = x;
  c.normed = layer_norm(x, param(p, prefix + "ln1.gain"), param(p, prefix + "ln1.bias"), &c.ln1);
  c.has_objects = !groups.empty();
  Matrix<S> attn;
  if (c.has_objects) {
    c.groups.assign(groups.begin(), groups.end());
    ObjectTokenSet<S> objects = pool_object_tokens<S>(c.normed, groups, p, prefix + "pool.", &c.pool);
    if (use_identity) add_identity(objects, param(p, prefix + "identity"));
    Matrix<S> kv(c.normed.rows() + objects.features.rows(), c.normed.cols());
    kv.topRows(c.normed.rows()) = c.normed;
    kv.bottomRows(objects.features.rows()) = objects.features;
    attn = mha(c.normed, kv, kv, p, prefix + "attn.", heads, &c.attn);
  } else {
    c.groups.clear();
    attn = mha(c.normed, c.normed, c.normed, p, prefix + "attn.", heads, &c.attn);
  }
  c.mid = x + attn;
  c.normed2 = layer_norm(c.mid, param(p, prefix + "ln2.gain"), param(p, prefix + "ln2.bias"), &c.ln2);
  c.mlp_pre = linear(c.normed2, param(p, prefix + "mlp.w1"), param(p, prefix + "mlp.b1"));
  c.mlp_act = gelu(c.mlp_pre);
  Matrix<S> out = c.mid + linear(c.mlp_act, param(p, prefix + "mlp.w2"), param(p, prefix + "mlp.b2"));
  return out;
}

template <typename S>
Matrix<S> transformer_block_backward(const BlockCache<S>& c, const Matrix<S>& d_out, const ParamStore<S>& p,
                                     ParamStore<S>& g, const std::string& prefix, int heads, bool use_identity) {
  Matrix<S> d_act = linear_backward(c.mlp_act, param(p, prefix + "mlp.w2"), d_out, grad_slot(g, p, prefix + "mlp.w2"),
                                    grad_slot(g, p, prefix + "mlp.b2"));
  Matrix<S> d_pre = gelu_backward(c.mlp_pre, d_act);
  Matrix<S> d_normed2 = linear_backward(c.normed2, param(p, prefix + "mlp.w1"), d_pre,
                                        grad_slot(g, p, prefix + "mlp.w1"), grad_slot(g, p, prefix + "mlp.b1"));
  Matrix<S> d_mid = d_out + layer_norm_backward(c.ln2, param(p, prefix + "ln2.gain"), d_normed2,
                                                grad_slot(g, p, prefix + "ln2.gain"),
                                                grad_slot(g, p, prefix + "ln2.bias"));

  AttentionGrads<S> ag = mha_backward(c.attn, d_mid, p, g, prefix + "attn.", heads);
  Matrix<S> d_normed = std::move(ag.queries);
  const Eigen::Index n = c.normed.rows();
  if (c.has_objects) {
    Matrix<S> d_kv = ag.keys + ag.values;
    d_normed += d_kv.topRows(n);
    const Matrix<S> d_objects = d_kv.bottomRows(d_kv.rows() - n);
    if (use_identity) {
      Matrix<S>& d_table = grad_slot(g, p, prefix + "identity");
      for (std::size_t j = 0; j < c.groups.size(); ++j)
        d_table.row(c.groups[j].object_id) += d_objects.row(static_cast<Eigen::Index>(j));
    }
    d_normed += pool_backward(c.pool, d_objects, n, p, g, prefix + "pool.");
  } else {
    d_normed += ag.keys;
    d_normed += ag.values;
  }
  Matrix<S> d_x = d_mid + layer_norm_backward(c.ln1, param(p, prefix + "ln1.gain"), d_normed,
                                              grad_slot(g, p, prefix + "ln1.gain"),
                                              grad_slot(g, p, prefix + "ln1.bias"));
  return d_x;
}

// ---------------------------------------------------------------------------

template <typename S>
ModelInput<S> prepare_input(const ModelConfig& cfg, const VideoTensor& clip, const DetectionTrackSet& tracks) {
  if (clip.frames != cfg.frames || clip.height != cfg.height || clip.width != cfg.width || clip.channels != cfg.channels)
    throw std::invalid_argument("prepare_input: clip geometry does not match the model config");
  const DetectionTrackSet linked = tracks.has_track_ids() ? tracks : link_tracks(tracks);

  ModelInput<S> in;
  TubeletPatches patches = tubelet_split(clip, cfg.tube);
  in.grid = patches.grid;
  in.patches = ((patches.values.template cast<double>().array() - cfg.pixel_mean) / cfg.pixel_std).template cast<S>();
  in.coords = std::move(patches.coords);

  const auto instances = render_instance_heatmaps(linked, clip.frames, clip.height, clip.width);
  std::vector<Heatmap> agnostic;
  agnostic.reserve(instances.size());
  for (const auto& frame : instances) {
    Heatmap h = Heatmap::zeros(clip.height, clip.width);
    for (const auto& ih : frame)
      for (std::size_t i = 0; i < h.values.size(); ++i) h.values[i] = std::max(h.values[i], ih.map.values[i]);
    agnostic.push_back(std::move(h));
  }
  in.scores = project_to_tubelets(agnostic, in.grid);

  std::vector<int> all(static_cast<std::size_t>(in.grid.size()));
  for (int i = 0; i < in.grid.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  in.affinity = cfg.aggregation == Aggregation::heatmap_weighted ? project_instance_affinity(instances, in.grid, all)
                                                                  : block_mask_affinity(linked, in.grid, all);
  return in;
}

template <typename S>
Matrix<S> forward(const ModelConfig& cfg, const ParamStore<S>& p, const ModelInput<S>& input, const TokenPlan& plan,
                  ForwardCache<S>* cache) {
  const TokenGridSpec grid = cfg.grid();
  if (!(input.grid == grid)) throw std::invalid_argument("forward: input grid does not match the model config");
  if (plan.keep) {
    if (plan.keep->empty()) throw std::invalid_argument("forward: token plan keeps no tokens");
    if (plan.drop_layer < 0 || plan.drop_layer >= cfg.depth)
      throw std::invalid_argument("forward: drop_layer outside [0, depth)");
    for (int t : *plan.keep)
      if (t < 0 || t >= grid.size()) throw std::out_of_range("forward: kept token outside grid");
  }

  ForwardCache<S> local;
  ForwardCache<S>& c = cache ? *cache : local;
  c.blocks.assign(static_cast<std::size_t>(cfg.depth), BlockCache<S>{});

  std::vector<int> rows;
  if (plan.keep && plan.drop_layer == 0) {
    rows = *plan.keep;
  } else {
    rows.resize(static_cast<std::size_t>(grid.size()));
    for (int i = 0; i < grid.size(); ++i) rows[static_cast<std::size_t>(i)] = i;
  }
  c.embedded_tokens = rows;

  Matrix<S> x(static_cast<Eigen::Index>(rows.size()), cfg.dim);
  x.noalias() = select_rows(input.patches, rows) * param(p, "embed.proj");
  x.rowwise() += param(p, "embed.bias").row(0);
  const auto& pos = param(p, "embed.pos");
  for (std::size_t i = 0; i < rows.size(); ++i) x.row(static_cast<Eigen::Index>(i)) += pos.row(rows[i]);

  for (int l = 0; l < cfg.depth; ++l) {
    if (plan.keep && l == plan.drop_layer && l > 0) {
      x = select_rows(x, *plan.keep);
      rows = *plan.keep;
    }
    std::vector<PoolGroup<S>> groups;
    const bool oam = cfg.is_oam_layer(l);
    if (oam && input.affinity.values.rows() > 0) groups = build_pool_groups<S>(input.affinity, rows, grid);
    x = transformer_block<S>(x, p, block_prefix(l), cfg.heads, groups, oam && cfg.use_identity_embedding,
                             &c.blocks[static_cast<std::size_t>(l)]);
  }
  c.final_tokens = rows;

  const Matrix<S> h = layer_norm(x, param(p, "final_ln.gain"), param(p, "final_ln.bias"), &c.final_ln);
  c.pooled = h.colwise().mean();
  return linear(c.pooled, param(p, "head.w"), param(p, "head.b"));
}

template <typename S>
void backward(const ModelConfig& cfg, const ParamStore<S>& p, const ModelInput<S>& input, const TokenPlan& plan,
              const ForwardCache<S>& c, const Matrix<S>& d_logits, ParamStore<S>& g) {
  const Matrix<S> d_pooled =
      linear_backward(c.pooled, param(p, "head.w"), d_logits, grad_slot(g, p, "head.w"), grad_slot(g, p, "head.b"));
  const auto n = static_cast<Eigen::Index>(c.final_tokens.size());
  const Matrix<S> d_h = d_pooled.replicate(n, 1) / static_cast<S>(n);
  Matrix<S> d_x = layer_norm_backward(c.final_ln, param(p, "final_ln.gain"), d_h, grad_slot(g, p, "final_ln.gain"),
                                      grad_slot(g, p, "final_ln.bias"));

  for (int l = cfg.depth - 1; l >= 0; --l) {
    d_x = transformer_block_backward<S>(c.blocks[static_cast<std::size_t>(l)], d_x, p, g, block_prefix(l), cfg.heads,
                                        cfg.is_oam_layer(l) && cfg.use_identity_embedding);
    if (plan.keep && l == plan.drop_layer && l > 0) {
      Matrix<S> full = Matrix<S>::Zero(static_cast<Eigen::Index>(c.embedded_tokens.size()), d_x.cols());
      for (std::size_t i = 0; i < plan.keep->size(); ++i)
        full.row((*plan.keep)[i]) += d_x.row(static_cast<Eigen::Index>(i));
      d_x = std::move(full);
    }
  }

  const Matrix<S> patches = select_rows(input.patches, c.embedded_tokens);
  grad_slot(g, p, "embed.proj").noalias() += patches.transpose() * d_x;
  grad_slot(g, p, "embed.bias") += d_x.colwise().sum();
  Matrix<S>& d_pos = grad_slot(g, p, "embed.pos");
  for (std::size_t i = 0; i < c.embedded_tokens.size(); ++i)
    d_pos.row(c.embedded_tokens[i]) += d_x.row(static_cast<Eigen::Index>(i));
}

#define OVV_INSTANTIATE_MODEL(S)                                                                                   \
  template ParamStore<S> init_params<S>(const ModelConfig&, std::uint64_t);                                        \
  template void perturb_params(ParamStore<S>&, std::uint64_t, double);                                             \
  template Matrix<S> mha(const Matrix<S>&, const Matrix<S>&, const Matrix<S>&, const ParamStore<S>&,                \
                         const std::string&, int, AttentionCache<S>*);                                              \
  template AttentionGrads<S> mha_backward(const AttentionCache<S>&, const Matrix<S>&, const ParamStore<S>&,         \
                                          ParamStore<S>&, const std::string&, int);                                 \
  template std::vector<PoolGroup<S>> build_pool_groups<S>(const InstanceAffinity&, std::span<const int>,           \
                                                          const TokenGridSpec&);                                    \
  template ObjectTokenSet<S> pool_object_tokens(const Matrix<S>&, std::span<const PoolGroup<S>>,                    \
                                                const ParamStore<S>&, const std::string&, PoolCache<S>*);           \
  template void add_identity(ObjectTokenSet<S>&, const Matrix<S>&);                                                 \
  template Matrix<S> transformer_block(const Matrix<S>&, const ParamStore<S>&, const std::string&, int,              \
                                       std::span<const PoolGroup<S>>, bool, BlockCache<S>*);                        \
  template Matrix<S> transformer_block_backward(const BlockCache<S>&, const Matrix<S>&, const ParamStore<S>&,        \
                                                ParamStore<S>&, const std::string&, int, bool);                     \
  template ModelInput<S> prepare_input<S>(const ModelConfig&, const VideoTensor&, const DetectionTrackSet&);         \
  template Matrix<S> forward(const ModelConfig&, const ParamStore<S>&, const ModelInput<S>&, const TokenPlan&,      \
                             ForwardCache<S>*);                                                                     \
  template void backward(const ModelConfig&, const ParamStore<S>&, const ModelInput<S>&, const TokenPlan&,          \
                         const ForwardCache<S>&, const Matrix<S>&, ParamStore<S>&);

OVV_INSTANTIATE_MODEL(float)
OVV_INSTANTIATE_MODEL(double)

#undef OVV_INSTANTIATE_MODEL

}  // namespace ovv

#include "cnapwp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "cnapwp/errors.hpp"

namespace cnapwp {

namespace {

constexpr double kProbabilityFloor = 1e-12;

void xavier(Matrix& m, std::mt19937_64& rng, std::size_t fan_in, std::size_t fan_out, double gain) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& x : m.data()) x = dist(rng);
}

void add_bias_rows(Matrix& m, const Matrix& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias(0, c);
  }
}

void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

using IndexMap = std::function<std::size_t(std::size_t)>;

Matrix remap(const Matrix& m, std::size_t rows, std::size_t cols, const IndexMap& row_map,
             const IndexMap& col_map) {
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const std::size_t nr = row_map(r);
    for (std::size_t c = 0; c < m.cols(); ++c) out(nr, col_map(c)) = m(r, c);
  }
  return out;
}

void remap_param(Parameter& p, std::size_t rows, std::size_t cols, const IndexMap& row_map,
                 const IndexMap& col_map) {
  p.value = remap(p.value, rows, cols, row_map, col_map);
  p.grad = remap(p.grad, rows, cols, row_map, col_map);
}

}  // namespace

std::vector<Parameter*> Backbone::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.insert(out.end(), {&dense_w, &dense_b, &classifier_w, &classifier_b});
  return out;
}

std::vector<const Parameter*> Backbone::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.insert(out.end(), {&dense_w, &dense_b, &classifier_w, &classifier_b});
  return out;
}

std::size_t token_width(std::size_t vocab, std::size_t heads) {
  return (vocab + 1 + heads - 1) / heads * heads;
}

std::pair<Matrix, Matrix> attach_prefix(const Matrix& prompt_k, const Matrix& prompt_v,
                                        const Matrix& keys, const Matrix& values) {
  if ((prompt_k.rows() && prompt_k.cols() != keys.cols()) ||
      (prompt_v.rows() && prompt_v.cols() != values.cols()))
    throw ShapeError("attach_prefix: prompt width differs from key/value width");
  if (prompt_k.rows() != prompt_v.rows())
    throw ShapeError("attach_prefix: key and value prompts differ in length");
  return {vstack(prompt_k, keys), vstack(prompt_v, values)};
}

double cross_entropy(std::span<const double> probabilities, int target) {
  if (target < 1 || static_cast<std::size_t>(target) > probabilities.size())
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " out of range");
  return -std::log(std::max(probabilities[static_cast<std::size_t>(target - 1)], kProbabilityFloor));
}

int argmax_activity(std::span<const double> probabilities) {
  if (probabilities.empty()) return 0;
  auto it = std::max_element(probabilities.begin(), probabilities.end());
  return static_cast<int>(it - probabilities.begin()) + 1;
}

Model::Model(const ModelConfig& config, std::size_t vocab) : config_(config) {
  if (config_.heads == 0) throw ConfigError("heads must be positive");
  if (config_.layers == 0) throw ConfigError("at least one attention layer is required");
  if (config_.max_len == 0) throw ConfigError("max_len must be positive");
  for (auto l : config_.g_layers)
    if (l >= config_.layers) throw ConfigError("g_layers index out of range");
  for (auto l : config_.e_layers)
    if (l >= config_.layers) throw ConfigError("e_layers index out of range");
  backbone_.vocab = vocab;
  reinitialize();
  dropout_rng_.seed(config_.seed ^ 0xd1b54a32d192ed03ULL);
}

void Model::reinitialize() {
  const std::size_t vocab = backbone_.vocab;
  const std::size_t d = token_width(vocab, config_.heads);
  const std::size_t flat = config_.max_len * d;
  std::mt19937_64 rng(config_.seed);

  Backbone b;
  b.width = d;
  b.attention_scale = 1.0 / std::sqrt(static_cast<double>(d / config_.heads));
  b.vocab = vocab;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    AttentionLayer layer;
    Matrix w(d, 3 * d);
    // One-hot input rows are embeddings: scale to unit variance per row.
    xavier(w, rng, d, 3 * d, config_.init_gain * (l == 0 ? std::sqrt(static_cast<double>(d)) : 1.0));
    if (l == 0) {
      // One-hot columns not yet backed by an activity start at zero.
      for (std::size_t r = vocab + 1; r < d; ++r) std::fill(w.row(r).begin(), w.row(r).end(), 0.0);
    }
    layer.weight = Parameter("layer" + std::to_string(l) + ".weight", std::move(w));
    layer.bias = Parameter("layer" + std::to_string(l) + ".bias", Matrix(1, 3 * d));
    b.layers.push_back(std::move(layer));
  }
  Matrix dw(flat, flat);
  xavier(dw, rng, flat, flat, config_.init_gain);
  b.dense_w = Parameter("dense.weight", std::move(dw));
  b.dense_b = Parameter("dense.bias", Matrix(1, flat));
  Matrix cw(flat, vocab);
  xavier(cw, rng, flat, std::max<std::size_t>(vocab, 1), config_.init_gain);
  b.classifier_w = Parameter("classifier.weight", std::move(cw));
  b.classifier_b = Parameter("classifier.bias", Matrix(1, vocab));

  // Keep trainable flags across re-initialization.
  if (!backbone_.layers.empty()) {
    auto old = backbone_.parameters();
    auto fresh = b.parameters();
    for (std::size_t i = 0; i < old.size(); ++i) fresh[i]->trainable = old[i]->trainable;
  }
  backbone_ = std::move(b);
}

PromptBlock Model::make_block(std::mt19937_64& rng, double range) const {
  std::uniform_real_distribution<double> dist(-range, range);
  Matrix k(config_.prompt_len, width()), v(config_.prompt_len, width());
  for (double& x : k.data()) x = dist(rng);
  for (double& x : v.data()) x = dist(rng);
  return PromptBlock{Parameter("key", std::move(k)), Parameter("value", std::move(v))};
}

GPrompt Model::init_gprompt() const {
  std::seed_seq seq{config_.seed, std::uint64_t{0x6770726f6d7074ULL}};
  std::mt19937_64 rng(seq);
  GPrompt g;
  for (std::size_t i = 0; i < config_.g_layers.size(); ++i) g.blocks.push_back(make_block(rng, config_.g_init));
  return g;
}

EPromptSet Model::init_eprompts(int task_id, std::size_t bucket_count) const {
  std::seed_seq seq{config_.seed, static_cast<std::uint64_t>(task_id),
                    std::uint64_t{0x6570726f6d7074ULL}};
  std::mt19937_64 rng(seq);
  EPromptSet e;
  e.task_id = task_id;
  for (std::size_t i = 0; i < config_.e_layers.size(); ++i) e.task.push_back(make_block(rng, config_.e_init));
  e.buckets.resize(bucket_count);
  for (auto& bucket : e.buckets)
    for (std::size_t i = 0; i < config_.e_layers.size(); ++i) bucket.push_back(make_block(rng, config_.e_init));
  return e;
}

std::vector<PromptBlock*> Model::blocks_for_layer(std::size_t l, const PromptContext& prompts) const {
  std::vector<PromptBlock*> out;
  if (config_.prompt_len == 0) return out;
  if (prompts.g) {
    for (std::size_t i = 0; i < config_.g_layers.size(); ++i)
      if (config_.g_layers[i] == l) out.push_back(&prompts.g->blocks.at(i));
  }
  if (prompts.e) {
    for (std::size_t i = 0; i < config_.e_layers.size(); ++i) {
      if (config_.e_layers[i] != l) continue;
      out.push_back(&prompts.e->task.at(i));
      out.push_back(&prompts.e->bucket(prompts.bucket).at(i));
    }
  }
  return out;
}

Matrix Model::layer_forward(std::size_t l, const Matrix& x, const PromptContext& prompts,
                            bool train_mode, LayerCache& lc) {
  const std::size_t d = width();
  const std::size_t heads = config_.heads;
  const std::size_t hd = d / heads;
  const std::size_t lp = config_.prompt_len;
  const bool prompt_mode = config_.mode == PromptMode::Prompt;
  const AttentionLayer& layer = backbone_.layers[l];

  lc.blocks = blocks_for_layer(l, prompts);
  const std::size_t p = lc.blocks.size() * lp;
  lc.prompt_rows = p;
  Matrix pk(p, d), pv(p, d);
  for (std::size_t b = 0; b < lc.blocks.size(); ++b) {
    const auto& kb = lc.blocks[b]->key.value;
    const auto& vb = lc.blocks[b]->value.value;
    if (kb.cols() != d || vb.cols() != d) throw ShapeError("prompt width differs from token width");
    std::copy(kb.data().begin(), kb.data().end(), pk.data().begin() + static_cast<std::ptrdiff_t>(b * lp * d));
    std::copy(vb.data().begin(), vb.data().end(), pv.data().begin() + static_cast<std::ptrdiff_t>(b * lp * d));
  }

  lc.input = prompt_mode ? vstack(pk, x) : x;
  Matrix z = matmul(lc.input, layer.weight.value);
  add_bias_rows(z, layer.bias.value);
  const std::size_t n = z.rows();

  Matrix q(n, d), k(n, d), v(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    auto zr = z.row(r);
    std::copy(zr.begin(), zr.begin() + static_cast<std::ptrdiff_t>(d), q.row(r).begin());
    std::copy(zr.begin() + static_cast<std::ptrdiff_t>(d), zr.begin() + static_cast<std::ptrdiff_t>(2 * d), k.row(r).begin());
    std::copy(zr.begin() + static_cast<std::ptrdiff_t>(2 * d), zr.end(), v.row(r).begin());
  }
  lc.q = std::move(q);
  if (prompt_mode) {
    lc.k = std::move(k);
    lc.v = std::move(v);
  } else {
    std::tie(lc.k, lc.v) = attach_prefix(pk, pv, k, v);
  }

  const std::size_t nk = lc.k.rows();
  const double scale = backbone_.attention_scale;
  Matrix out(n, d);
  lc.attention.assign(heads, Matrix(n, nk));
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * hd;
    Matrix& a = lc.attention[h];
    for (std::size_t i = 0; i < n; ++i) {
      const double* qi = lc.q.row(i).data() + c0;
      auto ai = a.row(i);
      for (std::size_t j = 0; j < nk; ++j) {
        const double* kj = lc.k.row(j).data() + c0;
        double s = 0.0;
        for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
        ai[j] = s * scale;
      }
      softmax_inplace(ai);
      double* oi = out.row(i).data() + c0;
      for (std::size_t j = 0; j < nk; ++j) {
        const double aij = ai[j];
        const double* vj = lc.v.row(j).data() + c0;
        for (std::size_t c = 0; c < hd; ++c) oi[c] += aij * vj[c];
      }
    }
  }

  const std::size_t first = prompt_mode ? p : 0;
  const std::size_t t = n - first;
  lc.output_rows = t;
  Matrix y(t, d);
  std::copy(out.data().begin() + static_cast<std::ptrdiff_t>(first * d), out.data().end(), y.data().begin());

  lc.mask = Matrix();
  if (train_mode && config_.dropout > 0.0) {
    lc.mask = Matrix(t, d);
    std::bernoulli_distribution keep(1.0 - config_.dropout);
    const double s = 1.0 / (1.0 - config_.dropout);
    for (std::size_t i = 0; i < y.size(); ++i) {
      lc.mask.data()[i] = keep(dropout_rng_) ? s : 0.0;
      y.data()[i] *= lc.mask.data()[i];
    }
  }
  if (!y.all_finite()) throw NumericError("non-finite attention output", static_cast<int>(l));
  return y;
}

std::vector<double> Model::forward(const EncodedSample& sample, const PromptContext& prompts,
                                   bool train_mode, ForwardCache* cache) {
  if (sample.tokens.size() != config_.max_len)
    throw ShapeError("sample length differs from max_len");
  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.train_mode = train_mode;
  fc.layers.resize(config_.layers);

  Matrix x = sample.one_hot(width());
  for (std::size_t l = 0; l < config_.layers; ++l) x = layer_forward(l, x, prompts, train_mode, fc.layers[l]);

  fc.flat = Matrix(1, x.size());
  fc.flat.data() = std::move(x.data());
  fc.hidden = matmul(fc.flat, backbone_.dense_w.value);
  add_bias_rows(fc.hidden, backbone_.dense_b.value);
  if (!fc.hidden.all_finite()) throw NumericError("non-finite dense output", static_cast<int>(config_.layers));
  Matrix logits = matmul(fc.hidden, backbone_.classifier_w.value);
  add_bias_rows(logits, backbone_.classifier_b.value);
  if (!logits.all_finite()) throw NumericError("non-finite logits", static_cast<int>(config_.layers) + 1);
  fc.probabilities = logits.data();
  softmax_inplace(fc.probabilities);
  return fc.probabilities;
}

void Model::backward(const ForwardCache& cache, int target, double loss_scale) {
  const std::size_t vocab = backbone_.vocab;
  if (target < 1 || static_cast<std::size_t>(target) > vocab)
    throw std::out_of_range("backward: target out of range");
  Backbone& bb = backbone_;

  Matrix dlogits(1, vocab);
  const double pt = cache.probabilities[static_cast<std::size_t>(target - 1)];
  if (pt >= kProbabilityFloor) {
    for (std::size_t c = 0; c < vocab; ++c) dlogits(0, c) = loss_scale * cache.probabilities[c];
    dlogits(0, static_cast<std::size_t>(target - 1)) -= loss_scale;
  }  // clamped region: the loss is locally constant

  if (bb.classifier_w.trainable) matmul_at_b_acc(cache.hidden, dlogits, bb.classifier_w.grad);
  if (bb.classifier_b.trainable)
    for (std::size_t c = 0; c < vocab; ++c) bb.classifier_b.grad(0, c) += dlogits(0, c);

  bool upstream = bb.dense_w.trainable || bb.dense_b.trainable;
  for (std::size_t l = 0; l < cache.layers.size() && !upstream; ++l) {
    upstream = bb.layers[l].weight.trainable || bb.layers[l].bias.trainable;
    for (auto* blk : cache.layers[l].blocks) upstream = upstream || blk->key.trainable || blk->value.trainable;
  }
  if (!upstream) return;

  Matrix dhidden = matmul_a_bt(dlogits, bb.classifier_w.value);
  if (bb.dense_w.trainable) matmul_at_b_acc(cache.flat, dhidden, bb.dense_w.grad);
  if (bb.dense_b.trainable)
    for (std::size_t c = 0; c < dhidden.cols(); ++c) bb.dense_b.grad(0, c) += dhidden(0, c);
  Matrix dflat = matmul_a_bt(dhidden, bb.dense_w.value);

  const std::size_t d = width();
  const std::size_t t = config_.max_len;
  const std::size_t heads = config_.heads;
  const std::size_t hd = d / heads;
  const std::size_t lp = config_.prompt_len;
  const double scale = backbone_.attention_scale;
  const bool prompt_mode = config_.mode == PromptMode::Prompt;

  Matrix dy(t, d);
  dy.data() = std::move(dflat.data());

  for (std::size_t li = cache.layers.size(); li-- > 0;) {
    const LayerCache& lc = cache.layers[li];
    AttentionLayer& layer = bb.layers[li];
    const std::size_t n = lc.q.rows();
    const std::size_t nk = lc.k.rows();
    const std::size_t p = lc.prompt_rows;
    const std::size_t first = prompt_mode ? p : 0;

    Matrix dout(n, d);
    for (std::size_t r = 0; r < t; ++r) {
      auto src = dy.row(r);
      auto dst = dout.row(first + r);
      for (std::size_t c = 0; c < d; ++c)
        dst[c] = lc.mask.empty() ? src[c] : src[c] * lc.mask(r, c);
    }

    Matrix dq(n, d), dk(nk, d), dv(nk, d);
    std::vector<double> da(nk), ds(nk);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * hd;
      const Matrix& a = lc.attention[h];
      for (std::size_t i = 0; i < n; ++i) {
        const double* doi = dout.row(i).data() + c0;
        auto ai = a.row(i);
        double rowdot = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          const double* vj = lc.v.row(j).data() + c0;
          double s = 0.0;
          for (std::size_t c = 0; c < hd; ++c) s += doi[c] * vj[c];
          da[j] = s;
          rowdot += s * ai[j];
          double* dvj = dv.row(j).data() + c0;
          for (std::size_t c = 0; c < hd; ++c) dvj[c] += ai[j] * doi[c];
        }
        const double* qi = lc.q.row(i).data() + c0;
        double* dqi = dq.row(i).data() + c0;
        for (std::size_t j = 0; j < nk; ++j) {
          ds[j] = ai[j] * (da[j] - rowdot) * scale;
          const double* kj = lc.k.row(j).data() + c0;
          double* dkj = dk.row(j).data() + c0;
          for (std::size_t c = 0; c < hd; ++c) {
            dqi[c] += ds[j] * kj[c];
            dkj[c] += ds[j] * qi[c];
          }
        }
      }
    }

    // Split key/value gradients between prompt rows and token rows.
    const std::size_t koff = prompt_mode ? 0 : p;
    Matrix dz(n, 3 * d);
    for (std::size_t r = 0; r < n; ++r) {
      auto zr = dz.row(r);
      std::copy(dq.row(r).begin(), dq.row(r).end(), zr.begin());
      std::copy(dk.row(r + koff).begin(), dk.row(r + koff).end(), zr.begin() + static_cast<std::ptrdiff_t>(d));
      std::copy(dv.row(r + koff).begin(), dv.row(r + koff).end(), zr.begin() + static_cast<std::ptrdiff_t>(2 * d));
    }
    if (!prompt_mode) {
      for (std::size_t b = 0; b < lc.blocks.size(); ++b) {
        PromptBlock* blk = lc.blocks[b];
        for (std::size_t r = 0; r < lp; ++r) {
          if (blk->key.trainable) {
            auto g = blk->key.grad.row(r);
            auto s = dk.row(b * lp + r);
            for (std::size_t c = 0; c < d; ++c) g[c] += s[c];
          }
          if (blk->value.trainable) {
            auto g = blk->value.grad.row(r);
            auto s = dv.row(b * lp + r);
            for (std::size_t c = 0; c < d; ++c) g[c] += s[c];
          }
        }
      }
    }

    if (layer.weight.trainable) matmul_at_b_acc(lc.input, dz, layer.weight.grad);
    if (layer.bias.trainable)
      for (std::size_t r = 0; r < n; ++r) {
        auto zr = dz.row(r);
        for (std::size_t c = 0; c < 3 * d; ++c) layer.bias.grad(0, c) += zr[c];
      }

    const bool need_input_grad = li > 0 || (prompt_mode && p > 0);
    if (!need_input_grad) break;
    Matrix dinput = matmul_a_bt(dz, layer.weight.value);
    if (prompt_mode) {
      for (std::size_t b = 0; b < lc.blocks.size(); ++b) {
        PromptBlock* blk = lc.blocks[b];
        if (!blk->key.trainable) continue;
        for (std::size_t r = 0; r < lp; ++r) {
          auto g = blk->key.grad.row(r);
          auto s = dinput.row(b * lp + r);
          for (std::size_t c = 0; c < d; ++c) g[c] += s[c];
        }
      }
    }
    if (li == 0) break;
    Matrix next(t, d);
    std::copy(dinput.data().begin() + static_cast<std::ptrdiff_t>(first * d), dinput.data().end(),
              next.data().begin());
    dy = std::move(next);
  }
}

void Model::grow_vocabulary(std::size_t new_vocab, GPrompt* g, std::span<EPromptSet*> eprompts) {
  Backbone& bb = backbone_;
  if (new_vocab < bb.vocab) throw PreconditionError("grow_vocabulary: cannot shrink vocabulary");
  if (new_vocab == bb.vocab) return;

  const std::size_t old_d = bb.width;
  const std::size_t new_d = std::max(old_d, token_width(new_vocab, config_.heads));
  const std::size_t t = config_.max_len;
  const std::size_t old_hd = old_d / config_.heads;
  const std::size_t new_hd = new_d / config_.heads;

  const IndexMap same = [](std::size_t i) { return i; };
  const IndexMap head = [=](std::size_t c) { return c / old_hd * new_hd + c % old_hd; };
  const IndexMap qkv = [=](std::size_t c) { return c / old_d * new_d + head(c % old_d); };
  const IndexMap flat = [=](std::size_t i) { return i / old_d * new_d + head(i % old_d); };

  if (new_d != old_d) {
    for (std::size_t l = 0; l < bb.layers.size(); ++l) {
      const IndexMap& in = l == 0 ? same : head;
      remap_param(bb.layers[l].weight, new_d, 3 * new_d, in, qkv);
      remap_param(bb.layers[l].bias, 1, 3 * new_d, same, qkv);
    }
    remap_param(bb.dense_w, t * new_d, t * new_d, flat, flat);
    remap_param(bb.dense_b, 1, t * new_d, same, flat);
    remap_param(bb.classifier_w, t * new_d, bb.vocab, flat, same);

    const bool prompt_mode = config_.mode == PromptMode::Prompt;
    const auto remap_block = [&](PromptBlock& blk, std::size_t layer) {
      // Prompt-mode rows live in the layer's input space, prefix rows in head space.
      const IndexMap& cols = (prompt_mode && layer == 0) ? same : head;
      remap_param(blk.key, blk.key.value.rows(), new_d, same, cols);
      remap_param(blk.value, blk.value.value.rows(), new_d, same, cols);
    };
    if (g)
      for (std::size_t i = 0; i < g->blocks.size(); ++i) remap_block(g->blocks[i], config_.g_layers[i]);
    for (EPromptSet* e : eprompts) {
      for (std::size_t i = 0; i < e->task.size(); ++i) remap_block(e->task[i], config_.e_layers[i]);
      for (auto& bucket : e->buckets)
        for (std::size_t i = 0; i < bucket.size(); ++i) remap_block(bucket[i], config_.e_layers[i]);
    }
    bb.width = new_d;
  }
  remap_param(bb.classifier_w, t * new_d, new_vocab, same, same);
  remap_param(bb.classifier_b, 1, new_vocab, same, same);
  bb.vocab = new_vocab;
}

std::vector<std::size_t> Model::output_lengths(const ForwardCache& cache) {
  std::vector<std::size_t> out;
  for (const auto& lc : cache.layers) out.push_back(lc.output_rows);
  return out;
}

void sgd_step(std::span<Parameter* const> params, double lr) {
  for (Parameter* p : params) {
    if (p->trainable) {
      auto& v = p->value.data();
      const auto& g = p->grad.data();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    }
    p->zero_grad();
  }
}

std::vector<Parameter*> prompt_parameters(GPrompt& g) {
  std::vector<Parameter*> out;
  for (auto& b : g.blocks) {
    out.push_back(&b.key);
    out.push_back(&b.value);
  }
  return out;
}

std::vector<Parameter*> prompt_parameters(EPromptSet& e) {
  std::vector<Parameter*> out;
  for (auto& b : e.task) {
    out.push_back(&b.key);
    out.push_back(&b.value);
  }
  for (auto& bucket : e.buckets)
    for (auto& b : bucket) {
      out.push_back(&b.key);
      out.push_back(&b.value);
    }
  return out;
}

double train_window(Model& model, GPrompt* g, std::span<const TrainGroup> groups,
                    std::size_t epochs, double lr) {
  ForwardCache cache;
  double epoch_loss = 0.0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    epoch_loss = 0.0;
    std::size_t seen = 0;
    for (const TrainGroup& group : groups) {
      for (const auto& batch : group.batches) {
        if (batch.empty()) continue;
        std::vector<Parameter*> params = model.backbone().parameters();
        if (g)
          for (auto* p : prompt_parameters(*g)) params.push_back(p);
        std::set<EPromptSet*> touched;
        for (const auto& item : batch)
          if (item.eprompt && touched.insert(item.eprompt).second) {
            for (auto& b : item.eprompt->task) params.insert(params.end(), {&b.key, &b.value});
            for (auto& b : item.eprompt->bucket(group.bucket)) params.insert(params.end(), {&b.key, &b.value});
          }

        const double scale = 1.0 / static_cast<double>(batch.size());
        for (const auto& item : batch) {
          PromptContext ctx{g, item.eprompt, group.bucket};
          auto probs = model.forward(*item.sample, ctx, true, &cache);
          epoch_loss += cross_entropy(probs, item.sample->target);
          model.backward(cache, item.sample->target, scale);
        }
        seen += batch.size();
        sgd_step(params, lr);
      }
    }
    if (seen) epoch_loss /= static_cast<double>(seen);
  }
  return epoch_loss;
}

namespace {

void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
  out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  char buf[64];
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%a", m(r, c));
      if (c) out << ' ';
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace

void save_checkpoint(std::ostream& out, const Model& model, const GPrompt* g,
                     const std::map<int, EPromptSet>& eprompts) {
  out << "CNAPWP1\n";
  out << "width " << model.width() << " vocab " << model.vocab() << '\n';
  for (const Parameter* p : model.backbone().parameters()) write_tensor(out, p->name, p->value);
  if (g)
    for (std::size_t i = 0; i < g->blocks.size(); ++i) {
      write_tensor(out, "g." + std::to_string(i) + ".key", g->blocks[i].key.value);
      write_tensor(out, "g." + std::to_string(i) + ".value", g->blocks[i].value.value);
    }
  for (const auto& [task, e] : eprompts) {
    const std::string base = "e." + std::to_string(task);
    for (std::size_t i = 0; i < e.task.size(); ++i) {
      write_tensor(out, base + ".task." + std::to_string(i) + ".key", e.task[i].key.value);
      write_tensor(out, base + ".task." + std::to_string(i) + ".value", e.task[i].value.value);
    }
    for (std::size_t b = 0; b < e.buckets.size(); ++b)
      for (std::size_t i = 0; i < e.buckets[b].size(); ++i) {
        const std::string pre = base + ".bucket" + std::to_string(b + 1) + "." + std::to_string(i);
        write_tensor(out, pre + ".key", e.buckets[b][i].key.value);
        write_tensor(out, pre + ".value", e.buckets[b][i].value.value);
      }
  }
  out << "end\n";
}

Checkpoint load_checkpoint(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != "CNAPWP1") throw ParseError("missing CNAPWP1 magic", lineno);
  Checkpoint ck;
  std::string word;
  ++lineno;
  if (!std::getline(in, line)) throw ParseError("missing shape header", lineno);
  {
    std::istringstream hs(line);
    std::string w1, w2;
    if (!(hs >> w1 >> ck.width >> w2 >> ck.vocab) || w1 != "width" || w2 != "vocab")
      throw ParseError("bad shape header", lineno);
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line == "end") return ck;
    std::istringstream hs(line);
    std::string tag, name;
    std::size_t rows = 0, cols = 0;
    if (!(hs >> tag >> name >> rows >> cols) || tag != "tensor") throw ParseError("bad tensor header", lineno);
    Matrix m(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
      ++lineno;
      if (!std::getline(in, line)) throw ParseError("truncated tensor " + name, lineno);
      std::istringstream rs(line);
      for (std::size_t c = 0; c < cols; ++c) {
        std::string tok;
        if (!(rs >> tok)) throw ParseError("short row in tensor " + name, lineno);
        m(r, c) = std::strtod(tok.c_str(), nullptr);
      }
    }
    ck.tensors.emplace(name, std::move(m));
  }
  throw ParseError("missing end marker", lineno);
}

}  // namespace cnapwp

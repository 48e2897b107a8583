#include "ppcgen/lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kernels.hpp"
#include "ppcgen/rldaf.hpp"

namespace ppc {

namespace {

thread_local int64_t g_forward_count = 0;

}  // namespace

int64_t forward_count() { return g_forward_count; }
void reset_forward_count() { g_forward_count = 0; }
namespace detail {
void bump_forward_count() { ++g_forward_count; }
}  // namespace detail

// ---- config -------------------------------------------------------------------

void LMConfig::validate() const {
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || context_len <= 0)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (prefix_len < 0) throw ConfigError("prefix_len must be nonnegative");
  if (context_len < prefix_len + 2) throw ConfigError("context_len must be at least prefix_len + 2");
}

// ---- model --------------------------------------------------------------------

LanguageModel LanguageModel::init(const LMConfig& cfg, uint64_t seed) {
  cfg.validate();
  LanguageModel lm;
  lm.cfg_ = cfg;
  lm.seed_ = seed;
  Rng rng = Rng::stream(seed, "init");
  const double std = 0.08;
  const int64_t d = cfg.d_model;
  lm.tok_emb = Tensor::randn({cfg.vocab_size, d}, rng, std);
  lm.pos_emb = Tensor::randn({cfg.context_len, d}, rng, std);
  lm.layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& layer : lm.layers) {
    layer.ln1_g = Tensor::full({d}, 1.0);
    layer.ln1_b = Tensor::zeros({d});
    layer.w_q = Tensor::randn({d, d}, rng, std);
    layer.b_q = Tensor::zeros({d});
    layer.w_k = Tensor::randn({d, d}, rng, std);
    layer.b_k = Tensor::zeros({d});
    layer.w_v = Tensor::randn({d, d}, rng, std);
    layer.b_v = Tensor::zeros({d});
    layer.w_o = Tensor::randn({d, d}, rng, std);
    layer.b_o = Tensor::zeros({d});
    layer.ln2_g = Tensor::full({d}, 1.0);
    layer.ln2_b = Tensor::zeros({d});
    layer.w_fc1 = Tensor::randn({d, 4 * d}, rng, std);
    layer.b_fc1 = Tensor::zeros({4 * d});
    layer.w_fc2 = Tensor::randn({4 * d, d}, rng, std);
    layer.b_fc2 = Tensor::zeros({d});
  }
  lm.lnf_g = Tensor::full({d}, 1.0);
  lm.lnf_b = Tensor::zeros({d});
  lm.w_out = Tensor::randn({d, cfg.vocab_size}, rng, std);
  return lm;
}

std::vector<std::pair<std::string, Tensor>> LanguageModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    const LayerParams& l = layers[i];
    out.emplace_back(p + "ln1_g", l.ln1_g);
    out.emplace_back(p + "ln1_b", l.ln1_b);
    out.emplace_back(p + "w_q", l.w_q);
    out.emplace_back(p + "b_q", l.b_q);
    out.emplace_back(p + "w_k", l.w_k);
    out.emplace_back(p + "b_k", l.b_k);
    out.emplace_back(p + "w_v", l.w_v);
    out.emplace_back(p + "b_v", l.b_v);
    out.emplace_back(p + "w_o", l.w_o);
    out.emplace_back(p + "b_o", l.b_o);
    out.emplace_back(p + "ln2_g", l.ln2_g);
    out.emplace_back(p + "ln2_b", l.ln2_b);
    out.emplace_back(p + "w_fc1", l.w_fc1);
    out.emplace_back(p + "b_fc1", l.b_fc1);
    out.emplace_back(p + "w_fc2", l.w_fc2);
    out.emplace_back(p + "b_fc2", l.b_fc2);
  }
  out.emplace_back("lnf_g", lnf_g);
  out.emplace_back("lnf_b", lnf_b);
  out.emplace_back("w_out", w_out);
  return out;
}

std::vector<Tensor> LanguageModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void LanguageModel::set_trainable(bool trainable) {
  for (Tensor& t : parameters()) t.set_requires_grad(trainable);
}

void LanguageModel::zero_grads() {
  for (Tensor& t : parameters()) t.zero_grad();
}

LanguageModel LanguageModel::clone() const {
  LanguageModel out = *this;
  auto copy = [](Tensor& t) { t = t.clone(); };
  copy(out.tok_emb);
  copy(out.pos_emb);
  for (auto& layer : out.layers) {
    copy(layer.ln1_g);
    copy(layer.ln1_b);
    copy(layer.w_q);
    copy(layer.b_q);
    copy(layer.w_k);
    copy(layer.b_k);
    copy(layer.w_v);
    copy(layer.b_v);
    copy(layer.w_o);
    copy(layer.b_o);
    copy(layer.ln2_g);
    copy(layer.ln2_b);
    copy(layer.w_fc1);
    copy(layer.b_fc1);
    copy(layer.w_fc2);
    copy(layer.b_fc2);
  }
  copy(out.lnf_g);
  copy(out.lnf_b);
  copy(out.w_out);
  return out;
}

// ---- prefix -------------------------------------------------------------------

PrefixState PrefixState::zeros(const LMConfig& cfg) {
  PrefixState p;
  if (cfg.prefix_len == 0) return p;
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    p.keys.push_back(Tensor::zeros({cfg.prefix_len, cfg.d_model}));
    p.values.push_back(Tensor::zeros({cfg.prefix_len, cfg.d_model}));
  }
  return p;
}

PrefixState PrefixState::randn(const LMConfig& cfg, uint64_t seed, double stddev) {
  PrefixState p;
  if (cfg.prefix_len == 0) return p;
  Rng rng = Rng::stream(seed, "prefix-init");
  for (int64_t i = 0; i < cfg.n_layers; ++i) {
    p.keys.push_back(Tensor::randn({cfg.prefix_len, cfg.d_model}, rng, stddev));
    p.values.push_back(Tensor::randn({cfg.prefix_len, cfg.d_model}, rng, stddev));
  }
  return p;
}

PrefixState PrefixState::clone() const {
  PrefixState p;
  for (const Tensor& t : keys) p.keys.push_back(t.clone());
  for (const Tensor& t : values) p.values.push_back(t.clone());
  return p;
}

void PrefixState::set_trainable(bool trainable) {
  for (Tensor& t : keys) t.set_requires_grad(trainable);
  for (Tensor& t : values) t.set_requires_grad(trainable);
}

void PrefixState::zero_grads() {
  for (Tensor& t : keys) t.zero_grad();
  for (Tensor& t : values) t.zero_grad();
}

std::vector<Tensor> PrefixState::parameters() const {
  std::vector<Tensor> out;
  for (const Tensor& t : keys) out.push_back(t);
  for (const Tensor& t : values) out.push_back(t);
  return out;
}

bool PrefixState::matches(const LMConfig& cfg) const {
  if (cfg.prefix_len == 0) return empty();
  if (n_layers() != cfg.n_layers || static_cast<int64_t>(values.size()) != cfg.n_layers)
    return false;
  for (const Tensor& t : keys)
    if (t.ndim() != 2 || t.dim(0) != cfg.prefix_len || t.dim(1) != cfg.d_model) return false;
  for (const Tensor& t : values)
    if (t.ndim() != 2 || t.dim(0) != cfg.prefix_len || t.dim(1) != cfg.d_model) return false;
  return true;
}

// ---- forward ------------------------------------------------------------------

namespace {

Tensor project(const Tensor& x, const Tensor& w, const Tensor& b, const LoraAdapter* adapter,
               int64_t layer, LoraAdapter::Proj proj) {
  Tensor out = matmul(x, w);
  if (adapter) {
    const LoraAdapter::Factor& f = adapter->factor(layer, proj);
    out = add(out, scale(matmul(matmul(x, f.a), f.b), adapter->scale));
  }
  return add_row_vector(out, b);
}

Tensor causal_mask(int64_t content_len, int64_t prefix_len) {
  const int64_t cols = prefix_len + content_len;
  std::vector<double> data(static_cast<size_t>(content_len * cols), 0.0);
  for (int64_t t = 0; t < content_len; ++t)
    for (int64_t s = prefix_len + t + 1; s < cols; ++s)
      data[static_cast<size_t>(t * cols + s)] = -1e9;
  return Tensor::from_data({content_len, cols}, std::move(data));
}

}  // namespace

ForwardResult forward(const LanguageModel& lm, std::span<const int32_t> tokens,
                      const PrefixState* prefix, const LoraAdapter* adapter) {
  detail::bump_forward_count();
  const LMConfig& cfg = lm.config();
  const int64_t t_len = static_cast<int64_t>(tokens.size());
  if (t_len == 0) throw ShapeError("forward: empty token sequence");
  const bool has_prefix = prefix != nullptr && !prefix->empty();
  const int64_t p_len = has_prefix ? prefix->prefix_len() : 0;
  if (has_prefix &&
      (prefix->n_layers() != cfg.n_layers || prefix->d_model() != cfg.d_model))
    throw ConfigError("forward: prefix shape does not match model config");
  if (t_len + p_len > cfg.context_len)
    throw CapacityError("forward: " + std::to_string(t_len) + " tokens + prefix " +
                        std::to_string(p_len) + " exceed context_len " +
                        std::to_string(cfg.context_len));

  const int64_t d = cfg.d_model;
  const int64_t hd = cfg.head_dim();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

  Tensor x = add(embedding_lookup(lm.tok_emb, tokens), slice_rows(lm.pos_emb, 0, t_len));
  const Tensor mask = causal_mask(t_len, p_len);

  HiddenCache cache;
  cache.prefix_len = p_len;
  cache.content_len = t_len;

  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = lm.layers[static_cast<size_t>(l)];
    Tensor ln1 = layer_norm_rows(x, lp.ln1_g, lp.ln1_b);
    Tensor q = project(ln1, lp.w_q, lp.b_q, adapter, l, LoraAdapter::kQuery);
    Tensor k = project(ln1, lp.w_k, lp.b_k, adapter, l, LoraAdapter::kKey);
    Tensor v = project(ln1, lp.w_v, lp.b_v, adapter, l, LoraAdapter::kValue);

    Tensor keys = k;
    Tensor vals = v;
    if (has_prefix) {
      const Tensor kparts[] = {prefix->keys[static_cast<size_t>(l)], k};
      const Tensor vparts[] = {prefix->values[static_cast<size_t>(l)], v};
      keys = concat_rows(kparts);
      vals = concat_rows(vparts);
    }
    cache.keys.push_back(keys);
    cache.values.push_back(vals);

    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(cfg.n_heads));
    for (int64_t h = 0; h < cfg.n_heads; ++h) {
      Tensor qh = slice_cols(q, h * hd, hd);
      Tensor kh = slice_cols(keys, h * hd, hd);
      Tensor vh = slice_cols(vals, h * hd, hd);
      Tensor scores = add(scale(matmul(qh, transpose(kh)), inv_sqrt_hd), mask);
      Tensor att = softmax_rows(scores);
      head_outs.push_back(matmul(att, vh));
    }
    Tensor merged = concat_cols(head_outs);
    Tensor attn_out = project(merged, lp.w_o, lp.b_o, adapter, l, LoraAdapter::kOutput);
    x = add(x, attn_out);

    Tensor ln2 = layer_norm_rows(x, lp.ln2_g, lp.ln2_b);
    Tensor ff1 = gelu(add_row_vector(matmul(ln2, lp.w_fc1), lp.b_fc1));
    Tensor ff2 = add_row_vector(matmul(ff1, lp.w_fc2), lp.b_fc2);
    x = add(x, ff2);
    cache.layer_hidden.push_back(x);
  }

  Tensor xf = layer_norm_rows(x, lm.lnf_g, lm.lnf_b);
  cache.final_hidden = xf;
  ForwardResult out;
  out.logits = matmul(xf, lm.w_out);
  out.cache = std::move(cache);
  return out;
}

ForwardResult ModelView::forward(std::span<const int32_t> tokens) const {
  if (lm == nullptr) throw Error("ModelView: no model attached");
  return ppc::forward(*lm, tokens, prefix, adapter);
}

ModelView attach_prefix(const LanguageModel& lm, const PrefixState& prefix) {
  if (!prefix.matches(lm.config()))
    throw ConfigError("attach_prefix: prefix shape does not match model config");
  ModelView view;
  view.lm = &lm;
  view.prefix = &prefix;
  return view;
}

// ---- decoding -----------------------------------------------------------------

void DecodeConfig::validate() const {
  if (temperature <= 0.0) throw ConfigError("decode temperature must be positive");
  if (top_k < 1) throw ConfigError("decode top_k must be at least 1");
  if (max_new_tokens < 0) throw ConfigError("decode max_new_tokens must be nonnegative");
}

int32_t sample_next(std::span<const double> logits_row, const DecodeConfig& decode, Rng& rng) {
  if (logits_row.empty()) throw ShapeError("sample_next: empty logits");
  for (double v : logits_row)
    if (std::isnan(v)) throw NumericError("sample_next: NaN logits");
  if (decode.strategy == DecodeConfig::Strategy::Greedy) return argmax_lowest(logits_row);

  const int64_t n = static_cast<int64_t>(logits_row.size());
  const int64_t k = std::min<int64_t>(decode.top_k, n);
  std::vector<int32_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int32_t a, int32_t b) {
    if (logits_row[static_cast<size_t>(a)] != logits_row[static_cast<size_t>(b)])
      return logits_row[static_cast<size_t>(a)] > logits_row[static_cast<size_t>(b)];
    return a < b;
  });
  const double zmax = logits_row[static_cast<size_t>(idx[0])];
  std::vector<double> weights(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i)
    weights[static_cast<size_t>(i)] =
        std::exp((logits_row[static_cast<size_t>(idx[static_cast<size_t>(i)])] - zmax) /
                 decode.temperature);
  return idx[rng.categorical(weights)];
}

// ---- incremental decoder --------------------------------------------------------

namespace {

// Row-level projection mirroring project(): base matmul, optional low-rank
// term scaled then added, bias last. Must keep the same operation order as
// the tensor ops for bit-identical results.
void project_row(const double* x, int64_t din, const Tensor& w, const Tensor& b,
                 const LoraAdapter* adapter, int64_t layer, LoraAdapter::Proj proj, double* out) {
  const int64_t dout = w.dim(1);
  std::fill(out, out + dout, 0.0);
  kern::matmul_acc(x, w.data().data(), out, 1, din, dout);
  if (adapter) {
    const LoraAdapter::Factor& f = adapter->factor(layer, proj);
    const int64_t r = f.a.dim(1);
    std::vector<double> t1(static_cast<size_t>(r), 0.0);
    kern::matmul_acc(x, f.a.data().data(), t1.data(), 1, din, r);
    std::vector<double> t2(static_cast<size_t>(dout), 0.0);
    kern::matmul_acc(t1.data(), f.b.data().data(), t2.data(), 1, r, dout);
    for (int64_t j = 0; j < dout; ++j) out[j] = out[j] + t2[j] * adapter->scale;
  }
  const double* bias = b.data().data();
  for (int64_t j = 0; j < dout; ++j) out[j] += bias[j];
}

}  // namespace

IncrementalDecoder::IncrementalDecoder(const LanguageModel& lm, const PrefixState* prefix,
                                       const LoraAdapter* adapter)
    : lm_(&lm), adapter_(adapter) {
  const LMConfig& cfg = lm.config();
  const bool has_prefix = prefix != nullptr && !prefix->empty();
  if (has_prefix && !prefix->matches(cfg))
    throw ConfigError("IncrementalDecoder: prefix shape does not match model config");
  prefix_len_ = has_prefix ? prefix->prefix_len() : 0;
  keys_.resize(static_cast<size_t>(cfg.n_layers));
  values_.resize(static_cast<size_t>(cfg.n_layers));
  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    if (has_prefix) {
      auto kd = prefix->keys[static_cast<size_t>(l)].data();
      auto vd = prefix->values[static_cast<size_t>(l)].data();
      keys_[static_cast<size_t>(l)].assign(kd.begin(), kd.end());
      values_[static_cast<size_t>(l)].assign(vd.begin(), vd.end());
    }
  }
}

std::vector<double> IncrementalDecoder::step(int32_t token) {
  detail::bump_forward_count();
  const LMConfig& cfg = lm_->config();
  const int64_t d = cfg.d_model;
  const int64_t hd = cfg.head_dim();
  const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  if (token < 0 || token >= cfg.vocab_size)
    throw IndexError("step: token id " + std::to_string(token) + " outside vocab");
  if (prefix_len_ + content_len_ + 1 > cfg.context_len)
    throw CapacityError("step: context budget exhausted");

  const int64_t pos = content_len_;
  std::vector<double> x(static_cast<size_t>(d));
  {
    const double* te = lm_->tok_emb.data().data() + static_cast<int64_t>(token) * d;
    const double* pe = lm_->pos_emb.data().data() + pos * d;
    for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] = te[j] + pe[j];
  }

  std::vector<double> ln_row(static_cast<size_t>(d));
  std::vector<double> q(static_cast<size_t>(d)), krow(static_cast<size_t>(d)), vrow(static_cast<size_t>(d));
  std::vector<double> head_out(static_cast<size_t>(d));
  std::vector<double> proj(static_cast<size_t>(d));
  std::vector<double> ff1(static_cast<size_t>(4 * d));
  std::vector<double> ff2(static_cast<size_t>(d));

  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    const LayerParams& lp = lm_->layers[static_cast<size_t>(l)];
    kern::layer_norm_row(x.data(), lp.ln1_g.data().data(), lp.ln1_b.data().data(), 1e-5, d,
                         ln_row.data());
    project_row(ln_row.data(), d, lp.w_q, lp.b_q, adapter_, l, LoraAdapter::kQuery, q.data());
    project_row(ln_row.data(), d, lp.w_k, lp.b_k, adapter_, l, LoraAdapter::kKey, krow.data());
    project_row(ln_row.data(), d, lp.w_v, lp.b_v, adapter_, l, LoraAdapter::kValue, vrow.data());

    auto& kcache = keys_[static_cast<size_t>(l)];
    auto& vcache = values_[static_cast<size_t>(l)];
    kcache.insert(kcache.end(), krow.begin(), krow.end());
    vcache.insert(vcache.end(), vrow.begin(), vrow.end());
    const int64_t rows = prefix_len_ + content_len_ + 1;

    std::fill(head_out.begin(), head_out.end(), 0.0);
    std::vector<double> scores(static_cast<size_t>(rows));
    for (int64_t h = 0; h < cfg.n_heads; ++h) {
      const int64_t off = h * hd;
      std::fill(scores.begin(), scores.end(), 0.0);
      for (int64_t kk = 0; kk < hd; ++kk) {
        const double qk = q[static_cast<size_t>(off + kk)];
        for (int64_t s = 0; s < rows; ++s)
          scores[static_cast<size_t>(s)] += qk * kcache[static_cast<size_t>(s * d + off + kk)];
      }
      for (int64_t s = 0; s < rows; ++s) {
        scores[static_cast<size_t>(s)] *= inv_sqrt_hd;
        scores[static_cast<size_t>(s)] += 0.0;  // mask parity with the full pass
      }
      kern::softmax_row(scores.data(), rows);
      for (int64_t s = 0; s < rows; ++s) {
        const double w = scores[static_cast<size_t>(s)];
        for (int64_t j = 0; j < hd; ++j)
          head_out[static_cast<size_t>(off + j)] += w * vcache[static_cast<size_t>(s * d + off + j)];
      }
    }
    project_row(head_out.data(), d, lp.w_o, lp.b_o, adapter_, l, LoraAdapter::kOutput, proj.data());
    for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] += proj[static_cast<size_t>(j)];

    kern::layer_norm_row(x.data(), lp.ln2_g.data().data(), lp.ln2_b.data().data(), 1e-5, d,
                         ln_row.data());
    std::fill(ff1.begin(), ff1.end(), 0.0);
    kern::matmul_acc(ln_row.data(), lp.w_fc1.data().data(), ff1.data(), 1, d, 4 * d);
    {
      const double* bias = lp.b_fc1.data().data();
      for (int64_t j = 0; j < 4 * d; ++j) {
        ff1[static_cast<size_t>(j)] += bias[j];
        ff1[static_cast<size_t>(j)] = kern::gelu(ff1[static_cast<size_t>(j)]);
      }
    }
    std::fill(ff2.begin(), ff2.end(), 0.0);
    kern::matmul_acc(ff1.data(), lp.w_fc2.data().data(), ff2.data(), 1, 4 * d, d);
    {
      const double* bias = lp.b_fc2.data().data();
      for (int64_t j = 0; j < d; ++j) x[static_cast<size_t>(j)] += ff2[static_cast<size_t>(j)] + bias[j];
    }
  }

  std::vector<double> xf(static_cast<size_t>(d));
  kern::layer_norm_row(x.data(), lm_->lnf_g.data().data(), lm_->lnf_b.data().data(), 1e-5, d,
                       xf.data());
  final_hidden_.insert(final_hidden_.end(), xf.begin(), xf.end());

  std::vector<double> logits(static_cast<size_t>(cfg.vocab_size), 0.0);
  kern::matmul_acc(xf.data(), lm_->w_out.data().data(), logits.data(), 1, d, cfg.vocab_size);
  ++content_len_;
  return logits;
}

}  // namespace ppc

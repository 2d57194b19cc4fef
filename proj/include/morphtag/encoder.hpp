#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "morphtag/error.hpp"
#include "morphtag/ops.hpp"
#include "morphtag/parameter.hpp"
#include "morphtag/rng.hpp"
#include "morphtag/tensor.hpp"
#include "morphtag/unicode.hpp"

namespace morphtag {

enum class PoolingMode { MaxPool, Attn, PosAttn, PosHierAttn };

inline std::string_view to_string(PoolingMode m) {
  switch (m) {
    case PoolingMode::MaxPool: return "maxpool";
    case PoolingMode::Attn: return "attn";
    case PoolingMode::PosAttn: return "posattn";
    case PoolingMode::PosHierAttn: return "poshierattn";
  }
  return "?";
}

inline PoolingMode parse_pooling(std::string_view s) {
  for (auto m : {PoolingMode::MaxPool, PoolingMode::Attn, PoolingMode::PosAttn,
                 PoolingMode::PosHierAttn})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown pooling mode '" + std::string(s) +
                    "' (expected maxpool, attn, posattn or poshierattn)");
}

inline bool uses_positions(PoolingMode m) {
  return m == PoolingMode::PosAttn || m == PoolingMode::PosHierAttn;
}

struct EncoderConfig {
  int char_vocab_size = 2;
  int char_emb_dim = 16;
  std::vector<int> orders{1, 2, 3};
  std::vector<int> channels{32, 32, 64};
  int max_word_len = 50;
  int attention_dim = 64;
  PoolingMode pooling = PoolingMode::PosHierAttn;
  int token_dim = 128;
  bool highway = true;

  int max_order() const { return orders.empty() ? 0 : orders.back(); }

  int enhanced_dim() const {
    int s = 0;
    for (int c : channels) s += c;
    return s;
  }

  void validate() const {
    if (orders.empty()) throw ConfigError("encoder: at least one n-gram order required");
    if (orders.size() != channels.size())
      throw ConfigError("encoder: orders and channels must have equal length");
    for (std::size_t i = 0; i < orders.size(); ++i) {
      if (orders[i] < 1) throw ConfigError("encoder: n-gram orders must be >= 1");
      if (i > 0 && orders[i] <= orders[i - 1])
        throw ConfigError("encoder: n-gram orders must be strictly ascending");
      if (channels[i] < 1) throw ConfigError("encoder: channels per order must be >= 1");
    }
    if (max_order() > max_word_len)
      throw ConfigError("encoder: largest order exceeds max_word_len");
    if (attention_dim < 1) throw ConfigError("encoder: attention_dim must be >= 1");
    if (char_emb_dim < 1 || token_dim < 1 || char_vocab_size < 2)
      throw ConfigError("encoder: dimensions must be positive");
  }

  friend void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = nlohmann::json{{"char_vocab_size", c.char_vocab_size},
                       {"char_emb_dim", c.char_emb_dim},
                       {"orders", c.orders},
                       {"channels", c.channels},
                       {"max_word_len", c.max_word_len},
                       {"attention_dim", c.attention_dim},
                       {"pooling", std::string(to_string(c.pooling))},
                       {"token_dim", c.token_dim},
                       {"highway", c.highway}};
  }

  friend void from_json(const nlohmann::json& j, EncoderConfig& c) {
    j.at("char_vocab_size").get_to(c.char_vocab_size);
    j.at("char_emb_dim").get_to(c.char_emb_dim);
    j.at("orders").get_to(c.orders);
    j.at("channels").get_to(c.channels);
    j.at("max_word_len").get_to(c.max_word_len);
    j.at("attention_dim").get_to(c.attention_dim);
    c.pooling = parse_pooling(j.at("pooling").get<std::string>());
    j.at("token_dim").get_to(c.token_dim);
    j.at("highway").get_to(c.highway);
  }
};

/// Character inventory with reserved PAD (0) and UNK (1) rows.
class CharVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  CharVocab() = default;

  explicit CharVocab(std::vector<char32_t> chars) : chars_(std::move(chars)) {
    std::sort(chars_.begin(), chars_.end());
    chars_.erase(std::unique(chars_.begin(), chars_.end()), chars_.end());
    for (std::size_t i = 0; i < chars_.size(); ++i) index_[chars_[i]] = static_cast<int>(i) + 2;
  }

  template <typename Words>
  static CharVocab build(const Words& words) {
    std::vector<char32_t> chars;
    for (const auto& w : words)
      for (char32_t cp : unicode::code_points(unicode::nfc(w))) chars.push_back(cp);
    return CharVocab(std::move(chars));
  }

  int size() const { return static_cast<int>(chars_.size()) + 2; }

  int id(char32_t cp) const {
    auto it = index_.find(cp);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::vector<char32_t>& chars() const { return chars_; }

 private:
  std::vector<char32_t> chars_;
  std::unordered_map<char32_t, int> index_;
};

/// A word prepared for the encoder: NFC-normalized, truncated to the maximum
/// word length, right-padded with PAD up to the largest n-gram order.
struct CharSequence {
  std::vector<int> ids;
  std::vector<std::string> glyphs;  // printable text per slot, "<pad>" for padding
};

inline CharSequence prepare_word(std::string_view word, const CharVocab& vocab,
                                 const EncoderConfig& cfg) {
  const std::vector<char32_t> cps = unicode::code_points(unicode::nfc(word));
  if (cps.empty()) throw InputError("cannot encode an empty word");
  const std::size_t l = std::min(cps.size(), static_cast<std::size_t>(cfg.max_word_len));
  CharSequence seq;
  for (std::size_t i = 0; i < l; ++i) {
    seq.ids.push_back(vocab.id(cps[i]));
    seq.glyphs.push_back(unicode::to_utf8(cps[i]));
  }
  while (seq.ids.size() < static_cast<std::size_t>(cfg.max_order())) {
    seq.ids.push_back(CharVocab::kPad);
    seq.glyphs.emplace_back("<pad>");
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Position-aware attention over one n-gram order:
//   u_i = vᵀ tanh(Wx x_i + p_i + bx),  alpha = softmax(u),  z = Σ alpha_i x_i
// `pos_table` null means no position term.

struct AttentionResult {
  Tensor z;       // [c]
  Tensor alphas;  // [m]
  Tensor hidden;  // [m x a], tanh activations
};

inline AttentionResult position_aware_attention(const Tensor& x, const Tensor* pos_table,
                                                std::span<const std::size_t> pos_rows,
                                                const Tensor& wx, const Tensor& bx,
                                                const Tensor& v) {
  const std::size_t m = x.dim(0), c = x.dim(1), a = wx.dim(0);
  if (m == 0) throw DimensionError("position_aware_attention: no n-grams");
  if (wx.dim(1) != c || bx.dim(0) != a || v.dim(0) != a)
    throw DimensionError("position_aware_attention: parameter shapes " + wx.shape_string() +
                         ", " + bx.shape_string() + ", " + v.shape_string() +
                         " do not fit n-grams " + x.shape_string());
  if (pos_table) {
    if (pos_rows.size() != m)
      throw DimensionError("position_aware_attention: one position index per n-gram required");
    if (pos_table->dim(1) != a)
      throw DimensionError("position_aware_attention: position table width " +
                           pos_table->shape_string() + " does not match attention space");
    for (std::size_t r : pos_rows)
      if (r >= pos_table->dim(0))
        throw DimensionError("position_aware_attention: position " + std::to_string(r) +
                             " outside table " + pos_table->shape_string());
  }
  AttentionResult r{Tensor({c}), Tensor({m}), Tensor({m, a})};
  for (std::size_t i = 0; i < m; ++i) {
    std::span<double> h = r.hidden.row(i);
    std::copy(bx.values().begin(), bx.values().end(), h.begin());
    ops::gemv_acc(wx, x.row(i), h);
    if (pos_table) {
      std::span<const double> p = pos_table->row(pos_rows[i]);
      for (std::size_t k = 0; k < a; ++k) h[k] += p[k];
    }
    for (double& hv : h) hv = std::tanh(hv);
    r.alphas[i] = ops::dot(v.values(), h);
  }
  ops::softmax_inplace(r.alphas.values());
  for (std::size_t i = 0; i < m; ++i) {
    const double al = r.alphas[i];
    std::span<const double> xi = x.row(i);
    for (std::size_t k = 0; k < c; ++k) r.z[k] += al * xi[k];
  }
  return r;
}

struct AttentionGrads {
  Tensor* x = nullptr;
  Tensor* pos_table = nullptr;
  Tensor* wx = nullptr;
  Tensor* bx = nullptr;
  Tensor* v = nullptr;
};

inline void position_aware_attention_backward(const Tensor& x,
                                              std::span<const std::size_t> pos_rows,
                                              const Tensor& wx, const Tensor& v,
                                              const AttentionResult& r,
                                              std::span<const double> g_z, AttentionGrads g) {
  const std::size_t m = x.dim(0), c = x.dim(1), a = wx.dim(0);
  std::vector<double> g_alpha(m), g_u(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    std::span<const double> xi = x.row(i);
    g_alpha[i] = ops::dot(g_z, xi);
    if (g.x) {
      std::span<double> gx = g.x->row(i);
      for (std::size_t k = 0; k < c; ++k) gx[k] += r.alphas[i] * g_z[k];
    }
  }
  ops::softmax_backward_acc(r.alphas.values(), g_alpha, g_u);
  std::vector<double> g_s(a);
  for (std::size_t i = 0; i < m; ++i) {
    std::span<const double> h = r.hidden.row(i);
    if (g.v)
      for (std::size_t k = 0; k < a; ++k) (*g.v)[k] += g_u[i] * h[k];
    for (std::size_t k = 0; k < a; ++k) g_s[k] = g_u[i] * v[k] * (1.0 - h[k] * h[k]);
    if (g.wx) ops::outer_acc(g_s, x.row(i), *g.wx);
    if (g.bx)
      for (std::size_t k = 0; k < a; ++k) (*g.bx)[k] += g_s[k];
    if (g.pos_table) {
      std::span<double> gp = g.pos_table->row(pos_rows[i]);
      for (std::size_t k = 0; k < a; ++k) gp[k] += g_s[k];
    }
    if (g.x) ops::gemv_t_acc(wx, g_s, g.x->row(i));
  }
}

// ---------------------------------------------------------------------------
// Hierarchical attention across orders. Same scoring as above without the
// position term; the output concatenates alpha_j * z_j in ascending order.

struct HierResult {
  Tensor output;  // [Σ c_j]
  Tensor alphas;  // [n]
  Tensor hidden;  // [n x a]
};

inline HierResult hierarchical_attention(std::span<const Tensor> z,
                                         std::span<const Tensor* const> w, const Tensor& b,
                                         const Tensor& v) {
  const std::size_t n = z.size();
  if (n == 0) throw DimensionError("hierarchical_attention: no orders");
  if (w.size() != n) throw DimensionError("hierarchical_attention: one projection per order");
  const std::size_t a = b.dim(0);
  if (v.dim(0) != a) throw DimensionError("hierarchical_attention: v/b size mismatch");
  std::size_t total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (w[j]->dim(0) != a || w[j]->dim(1) != z[j].dim(0))
      throw DimensionError("hierarchical_attention: projection " + w[j]->shape_string() +
                           " vs order vector " + z[j].shape_string());
    total += z[j].dim(0);
  }
  HierResult r{Tensor({total}), Tensor({n}), Tensor({n, a})};
  for (std::size_t j = 0; j < n; ++j) {
    std::span<double> h = r.hidden.row(j);
    std::copy(b.values().begin(), b.values().end(), h.begin());
    ops::gemv_acc(*w[j], z[j].values(), h);
    for (double& hv : h) hv = std::tanh(hv);
    r.alphas[j] = ops::dot(v.values(), h);
  }
  ops::softmax_inplace(r.alphas.values());
  std::size_t off = 0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t k = 0; k < z[j].size(); ++k) r.output[off + k] = r.alphas[j] * z[j][k];
    off += z[j].size();
  }
  return r;
}

struct HierGrads {
  std::vector<Tensor*> z;  // may hold nulls
  std::vector<Tensor*> w;
  Tensor* b = nullptr;
  Tensor* v = nullptr;
};

inline void hierarchical_attention_backward(std::span<const Tensor> z,
                                            std::span<const Tensor* const> w, const Tensor& v,
                                            const HierResult& r, std::span<const double> g_out,
                                            const HierGrads& g) {
  const std::size_t n = z.size(), a = v.dim(0);
  std::vector<double> g_alpha(n, 0.0), g_u(n, 0.0);
  std::size_t off = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t c = z[j].size();
    std::span<const double> go = g_out.subspan(off, c);
    g_alpha[j] = ops::dot(go, z[j].values());
    if (j < g.z.size() && g.z[j])
      for (std::size_t k = 0; k < c; ++k) (*g.z[j])[k] += r.alphas[j] * go[k];
    off += c;
  }
  ops::softmax_backward_acc(r.alphas.values(), g_alpha, g_u);
  std::vector<double> g_s(a);
  for (std::size_t j = 0; j < n; ++j) {
    std::span<const double> h = r.hidden.row(j);
    if (g.v)
      for (std::size_t k = 0; k < a; ++k) (*g.v)[k] += g_u[j] * h[k];
    for (std::size_t k = 0; k < a; ++k) g_s[k] = g_u[j] * v[k] * (1.0 - h[k] * h[k]);
    if (j < g.w.size() && g.w[j]) ops::outer_acc(g_s, z[j].values(), *g.w[j]);
    if (g.b)
      for (std::size_t k = 0; k < a; ++k) (*g.b)[k] += g_s[k];
    if (j < g.z.size() && g.z[j]) ops::gemv_t_acc(*w[j], g_s, g.z[j]->values());
  }
}

// ---------------------------------------------------------------------------

/// Chooses which position-table row an n-gram reads. The identity sampler
/// uses the n-gram's own start offset.
class PositionSampler {
 public:
  virtual ~PositionSampler() = default;
  virtual std::size_t row(std::size_t position, std::size_t table_rows) = 0;
};

/// Draws a uniformly random valid row for every lookup.
class ShuffledPositions final : public PositionSampler {
 public:
  explicit ShuffledPositions(std::uint64_t seed) : rng_(seed) {}
  std::size_t row(std::size_t, std::size_t table_rows) override {
    return static_cast<std::size_t>(rng_.below(table_rows));
  }

 private:
  Rng rng_;
};

struct NgramWeight {
  std::string text;
  std::size_t position;
  double alpha;
};

struct AttentionTrace {
  std::string word;
  std::vector<int> orders;
  std::vector<std::vector<NgramWeight>> ngrams;  // one list per order
  std::vector<double> hier_alphas;               // empty unless hierarchical
};

struct OrderState {
  Tensor conv_out;  // [m x c] after tanh
  std::vector<std::size_t> pos_rows;
  AttentionResult attn;
  ops::MaxPoolResult pool;
  Tensor pooled;  // z_j
};

/// Forward activations of one word, kept for the backward pass.
struct WordEncoding {
  CharSequence chars;
  Tensor emb;  // [l x d]
  std::vector<OrderState> orders;
  std::optional<HierResult> hier;
  Tensor enhanced;   // [Σ c_j]
  Tensor projected;  // [token_dim]
  Tensor gate;       // highway transform gate
  Tensor transform;  // highway relu branch
  Tensor token;      // [token_dim]
};

/// Character n-gram word encoder: embeddings, per-order convolutions,
/// (position-aware) attention or max-pooling per order, optional hierarchical
/// attention across orders, then a projection and a highway layer.
class CharNgramEncoder {
 public:
  CharNgramEncoder(EncoderConfig cfg, ParameterStore& store, const std::string& prefix = "encoder")
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    const std::size_t d = cfg_.char_emb_dim, a = cfg_.attention_dim, k = cfg_.max_word_len;
    const std::size_t t = cfg_.token_dim, e = cfg_.enhanced_dim();
    char_emb_ = &store.add(prefix + ".char_emb", {static_cast<std::size_t>(cfg_.char_vocab_size), d},
                           Group::CharEmbeddings);
    for (std::size_t o = 0; o < cfg_.orders.size(); ++o) {
      const std::size_t j = cfg_.orders[o], c = cfg_.channels[o];
      const std::string tag = ".order" + std::to_string(j);
      OrderParams p;
      p.kernel = &store.add(prefix + ".conv" + tag + ".kernel", {j, d, c}, Group::Convolutions);
      p.bias = &store.add(prefix + ".conv" + tag + ".bias", {c}, Group::Convolutions);
      p.pos = &store.add(prefix + ".pos" + tag, {k - j + 1, c}, Group::NonCore);
      p.wx = &store.add(prefix + ".attn" + tag + ".Wx", {c, c}, Group::NonCore);
      p.bx = &store.add(prefix + ".attn" + tag + ".bx", {c}, Group::NonCore);
      p.v = &store.add(prefix + ".attn" + tag + ".v", {c}, Group::NonCore);
      p.hier_w = &store.add(prefix + ".hier" + tag + ".W", {a, c}, Group::NonCore);
      orders_.push_back(p);
    }
    hier_b_ = &store.add(prefix + ".hier.b", {a}, Group::NonCore);
    hier_v_ = &store.add(prefix + ".hier.v", {a}, Group::NonCore);
    proj_w_ = &store.add(prefix + ".proj.W", {t, e}, Group::Projection);
    proj_b_ = &store.add(prefix + ".proj.b", {t}, Group::Projection);
    if (cfg_.highway) {
      hw_wt_ = &store.add(prefix + ".highway.Wt", {t, t}, Group::Highway);
      hw_bt_ = &store.add(prefix + ".highway.bt", {t}, Group::Highway);
      hw_wh_ = &store.add(prefix + ".highway.Wh", {t, t}, Group::Highway);
      hw_bh_ = &store.add(prefix + ".highway.bh", {t}, Group::Highway);
    }
  }

  const EncoderConfig& config() const noexcept { return cfg_; }

  /// Switches the pooling path; parameters are shared by every mode.
  void set_pooling(PoolingMode mode) { cfg_.pooling = mode; }

  void initialize(Rng& rng) {
    init_uniform(char_emb_->value, rng, 0.5);
    const std::size_t d = cfg_.char_emb_dim, a = cfg_.attention_dim, t = cfg_.token_dim;
    for (std::size_t o = 0; o < orders_.size(); ++o) {
      OrderParams& p = orders_[o];
      const std::size_t j = cfg_.orders[o], c = cfg_.channels[o];
      init_glorot(p.kernel->value, rng, j * d, c);
      p.bias->value.fill(0.0);
      init_uniform(p.pos->value, rng, 0.05);
      init_glorot(p.wx->value, rng, c, c);
      p.bx->value.fill(0.0);
      init_uniform(p.v->value, rng, std::sqrt(6.0 / static_cast<double>(c + 1)));
      init_glorot(p.hier_w->value, rng, c, a);
    }
    hier_b_->value.fill(0.0);
    init_uniform(hier_v_->value, rng, std::sqrt(6.0 / static_cast<double>(a + 1)));
    init_glorot(proj_w_->value, rng, cfg_.enhanced_dim(), t);
    proj_b_->value.fill(0.0);
    if (cfg_.highway) {
      init_glorot(hw_wt_->value, rng, t, t);
      hw_bt_->value.fill(-1.0);
      init_glorot(hw_wh_->value, rng, t, t);
      hw_bh_->value.fill(0.0);
    }
  }

  std::vector<Parameter*> parameters() const {
    std::vector<Parameter*> out{char_emb_};
    for (const auto& p : orders_) {
      out.insert(out.end(), {p.kernel, p.bias, p.pos, p.wx, p.bx, p.v, p.hier_w});
    }
    out.insert(out.end(), {hier_b_, hier_v_, proj_w_, proj_b_});
    if (cfg_.highway) out.insert(out.end(), {hw_wt_, hw_bt_, hw_wh_, hw_bh_});
    return out;
  }

  Parameter& position_table(std::size_t order_index) { return *orders_.at(order_index).pos; }

  /// Embedding rows for the prepared character sequence, [l x d].
  Tensor embed_chars(const CharSequence& seq) const {
    const std::size_t d = cfg_.char_emb_dim;
    Tensor out({seq.ids.size(), d});
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
      const auto id = static_cast<std::size_t>(seq.ids[i]);
      if (id >= char_emb_->value.dim(0))
        throw InputError("character id " + std::to_string(id) + " outside vocabulary");
      std::span<const double> src = char_emb_->value.row(id);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  WordEncoding forward(CharSequence seq, PositionSampler* sampler = nullptr) const {
    WordEncoding w;
    w.chars = std::move(seq);
    w.emb = embed_chars(w.chars);
    const bool positional = uses_positions(cfg_.pooling);
    w.orders.resize(orders_.size());
    std::vector<Tensor> pooled;
    pooled.reserve(orders_.size());
    for (std::size_t o = 0; o < orders_.size(); ++o) {
      const OrderParams& p = orders_[o];
      OrderState& st = w.orders[o];
      st.conv_out = ops::conv1d_valid(w.emb, p.kernel->value, p.bias->value);
      for (double& v : st.conv_out.values()) v = std::tanh(v);
      const std::size_t m = st.conv_out.dim(0);
      const std::size_t rows = p.pos->value.dim(0);
      if (m > rows)
        throw DimensionError("n-gram count " + std::to_string(m) + " exceeds position table rows " +
                             std::to_string(rows));
      if (cfg_.pooling == PoolingMode::MaxPool) {
        st.pool = ops::maxpool_downsample(st.conv_out);
        st.pooled = st.pool.value;
      } else {
        st.pos_rows.resize(m);
        for (std::size_t i = 0; i < m; ++i) st.pos_rows[i] = sampler ? sampler->row(i, rows) : i;
        st.attn = position_aware_attention(st.conv_out, positional ? &p.pos->value : nullptr,
                                           st.pos_rows, p.wx->value, p.bx->value, p.v->value);
        st.pooled = st.attn.z;
      }
      pooled.push_back(st.pooled);
    }
    if (cfg_.pooling == PoolingMode::PosHierAttn) {
      w.hier = hierarchical_attention(pooled, hier_weights(), hier_b_->value, hier_v_->value);
      w.enhanced = w.hier->output;
    } else {
      w.enhanced = Tensor({static_cast<std::size_t>(cfg_.enhanced_dim())});
      std::size_t off = 0;
      for (const Tensor& z : pooled) {
        std::copy(z.values().begin(), z.values().end(), w.enhanced.values().begin() + off);
        off += z.size();
      }
    }
    const std::size_t t = cfg_.token_dim;
    w.projected = proj_b_->value;
    ops::gemv_acc(proj_w_->value, w.enhanced.values(), w.projected.values());
    if (cfg_.highway) {
      w.gate = hw_bt_->value;
      ops::gemv_acc(hw_wt_->value, w.projected.values(), w.gate.values());
      w.transform = hw_bh_->value;
      ops::gemv_acc(hw_wh_->value, w.projected.values(), w.transform.values());
      w.token = Tensor({t});
      for (std::size_t i = 0; i < t; ++i) {
        w.gate[i] = ops::sigmoid(w.gate[i]);
        w.transform[i] = std::max(0.0, w.transform[i]);
        w.token[i] = w.gate[i] * w.transform[i] + (1.0 - w.gate[i]) * w.projected[i];
      }
    } else {
      w.token = w.projected;
    }
    return w;
  }

  WordEncoding encode(std::string_view word, const CharVocab& vocab,
                      PositionSampler* sampler = nullptr) const {
    return forward(prepare_word(word, vocab, cfg_), sampler);
  }

  /// Accumulates parameter gradients given upstream gradients on the token
  /// vector and (optionally, may be empty) on the enhanced representation.
  void backward(const WordEncoding& w, std::span<const double> g_token,
                std::span<const double> g_enhanced_extra) {
    const std::size_t t = cfg_.token_dim;
    std::vector<double> g_proj(t, 0.0);
    if (cfg_.highway) {
      std::vector<double> g_gate_pre(t), g_trans_pre(t);
      for (std::size_t i = 0; i < t; ++i) {
        const double g = g_token[i];
        const double gate = w.gate[i];
        g_proj[i] += g * (1.0 - gate);
        g_gate_pre[i] = g * (w.transform[i] - w.projected[i]) * gate * (1.0 - gate);
        g_trans_pre[i] = w.transform[i] > 0.0 ? g * gate : 0.0;
      }
      ops::outer_acc(g_gate_pre, w.projected.values(), hw_wt_->grad);
      ops::outer_acc(g_trans_pre, w.projected.values(), hw_wh_->grad);
      for (std::size_t i = 0; i < t; ++i) {
        hw_bt_->grad[i] += g_gate_pre[i];
        hw_bh_->grad[i] += g_trans_pre[i];
      }
      ops::gemv_t_acc(hw_wt_->value, g_gate_pre, g_proj);
      ops::gemv_t_acc(hw_wh_->value, g_trans_pre, g_proj);
    } else {
      std::copy(g_token.begin(), g_token.end(), g_proj.begin());
    }
    Tensor g_enh({w.enhanced.size()});
    if (!g_enhanced_extra.empty())
      std::copy(g_enhanced_extra.begin(), g_enhanced_extra.end(), g_enh.values().begin());
    ops::outer_acc(g_proj, w.enhanced.values(), proj_w_->grad);
    for (std::size_t i = 0; i < t; ++i) proj_b_->grad[i] += g_proj[i];
    ops::gemv_t_acc(proj_w_->value, g_proj, g_enh.values());

    std::vector<Tensor> g_pooled;
    g_pooled.reserve(orders_.size());
    for (const OrderState& st : w.orders) g_pooled.emplace_back(Tensor({st.pooled.size()}));
    if (w.hier) {
      std::vector<Tensor> pooled;
      for (const OrderState& st : w.orders) pooled.push_back(st.pooled);
      HierGrads hg;
      for (std::size_t o = 0; o < orders_.size(); ++o) {
        hg.z.push_back(&g_pooled[o]);
        hg.w.push_back(&orders_[o].hier_w->grad);
      }
      hg.b = &hier_b_->grad;
      hg.v = &hier_v_->grad;
      hierarchical_attention_backward(pooled, hier_weights(), hier_v_->value, *w.hier,
                                      g_enh.values(), hg);
    } else {
      std::size_t off = 0;
      for (Tensor& g : g_pooled) {
        for (std::size_t k = 0; k < g.size(); ++k) g[k] = g_enh[off + k];
        off += g.size();
      }
    }

    Tensor g_emb(w.emb.shape());
    const bool positional = uses_positions(cfg_.pooling);
    for (std::size_t o = 0; o < orders_.size(); ++o) {
      const OrderParams& p = orders_[o];
      const OrderState& st = w.orders[o];
      Tensor g_conv(st.conv_out.shape());
      if (cfg_.pooling == PoolingMode::MaxPool) {
        ops::maxpool_backward(st.pool.argmax, g_pooled[o].values(), g_conv);
      } else {
        AttentionGrads ag{&g_conv, positional ? &p.pos->grad : nullptr, &p.wx->grad, &p.bx->grad,
                          &p.v->grad};
        position_aware_attention_backward(st.conv_out, st.pos_rows, p.wx->value, p.v->value,
                                          st.attn, g_pooled[o].values(), ag);
      }
      for (std::size_t i = 0; i < g_conv.size(); ++i)
        g_conv[i] *= 1.0 - st.conv_out[i] * st.conv_out[i];
      ops::conv1d_valid_backward(w.emb, p.kernel->value, g_conv, &g_emb, &p.kernel->grad,
                                 &p.bias->grad);
    }
    const std::size_t d = cfg_.char_emb_dim;
    for (std::size_t i = 0; i < w.chars.ids.size(); ++i) {
      std::span<double> dst = char_emb_->grad.row(static_cast<std::size_t>(w.chars.ids[i]));
      std::span<const double> src = g_emb.row(i);
      for (std::size_t k = 0; k < d; ++k) dst[k] += src[k];
    }
  }

  /// Attention weights of an encoded word. Empty orders in max-pool mode.
  AttentionTrace trace(const WordEncoding& w, std::string word) const {
    AttentionTrace tr;
    tr.word = std::move(word);
    if (cfg_.pooling == PoolingMode::MaxPool) return tr;
    for (std::size_t o = 0; o < orders_.size(); ++o) {
      const std::size_t j = cfg_.orders[o];
      const OrderState& st = w.orders[o];
      std::vector<NgramWeight> list;
      for (std::size_t i = 0; i < st.attn.alphas.size(); ++i) {
        std::string text;
        for (std::size_t t = 0; t < j; ++t) text += w.chars.glyphs[i + t];
        list.push_back({std::move(text), i, st.attn.alphas[i]});
      }
      tr.orders.push_back(static_cast<int>(j));
      tr.ngrams.push_back(std::move(list));
    }
    if (w.hier) {
      tr.hier_alphas.assign(w.hier->alphas.values().begin(), w.hier->alphas.values().end());
    }
    return tr;
  }

 private:
  struct OrderParams {
    Parameter* kernel = nullptr;
    Parameter* bias = nullptr;
    Parameter* pos = nullptr;
    Parameter* wx = nullptr;
    Parameter* bx = nullptr;
    Parameter* v = nullptr;
    Parameter* hier_w = nullptr;
  };

  std::vector<const Tensor*> hier_weights() const {
    std::vector<const Tensor*> w;
    for (const auto& p : orders_) w.push_back(&p.hier_w->value);
    return w;
  }

  EncoderConfig cfg_;
  Parameter* char_emb_ = nullptr;
  std::vector<OrderParams> orders_;
  Parameter* hier_b_ = nullptr;
  Parameter* hier_v_ = nullptr;
  Parameter* proj_w_ = nullptr;
  Parameter* proj_b_ = nullptr;
  Parameter* hw_wt_ = nullptr;
  Parameter* hw_bt_ = nullptr;
  Parameter* hw_wh_ = nullptr;
  Parameter* hw_bh_ = nullptr;
};

}  // namespace morphtag

#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "morphtag/corpus.hpp"
#include "morphtag/crf.hpp"
#include "morphtag/embeddings.hpp"
#include "morphtag/encoder.hpp"
#include "morphtag/error.hpp"
#include "morphtag/labels.hpp"
#include "morphtag/lstm.hpp"
#include "morphtag/parameter.hpp"
#include "morphtag/serialize.hpp"

namespace morphtag {

struct TaggerConfig {
  EncoderConfig encoder;
  int hidden = 64;
  bool concat_ngram_to_crf = true;
  bool use_secondary = true;
  bool use_static = false;

  /// Rungs of the incremental ablation ladder: "1.2" max-pool baseline,
  /// "2.1" attention, "2.2" + positions, "2.3" + hierarchical attention,
  /// "3.1" + n-gram features at the CRF, "3.2" + secondary head,
  /// "3.3" + static embeddings.
  static TaggerConfig experiment(const std::string& id) {
    TaggerConfig c;
    c.concat_ngram_to_crf = c.use_secondary = c.use_static = false;
    if (id == "1.2") {
      c.encoder.pooling = PoolingMode::MaxPool;
    } else if (id == "2.1") {
      c.encoder.pooling = PoolingMode::Attn;
    } else if (id == "2.2") {
      c.encoder.pooling = PoolingMode::PosAttn;
    } else if (id == "2.3" || id == "3.1" || id == "3.2" || id == "3.3") {
      c.encoder.pooling = PoolingMode::PosHierAttn;
      c.concat_ngram_to_crf = id >= "3.1";
      c.use_secondary = id >= "3.2";
      c.use_static = id == "3.3";
    } else {
      throw ConfigError("unknown experiment '" + id + "'");
    }
    return c;
  }

  friend void to_json(nlohmann::json& j, const TaggerConfig& c) {
    j = nlohmann::json{{"encoder", c.encoder},
                       {"hidden", c.hidden},
                       {"concat_ngram_to_crf", c.concat_ngram_to_crf},
                       {"use_secondary", c.use_secondary},
                       {"use_static", c.use_static}};
  }

  friend void from_json(const nlohmann::json& j, TaggerConfig& c) {
    j.at("encoder").get_to(c.encoder);
    j.at("hidden").get_to(c.hidden);
    j.at("concat_ngram_to_crf").get_to(c.concat_ngram_to_crf);
    j.at("use_secondary").get_to(c.use_secondary);
    j.at("use_static").get_to(c.use_static);
  }
};

struct Prediction {
  std::vector<std::string> labels;
  std::vector<std::string> simplified;  // empty unless the secondary head is on
  std::vector<AttentionTrace> traces;   // empty unless requested in an attention mode
};

struct BatchLoss {
  double primary = 0.0;    // CRF NLL summed over sentences / tokens
  double secondary = 0.0;  // cross-entropy / tokens with a simplified label
  std::size_t tokens = 0;
  std::size_t secondary_tokens = 0;
};

/// Character n-gram encoder, optional static embeddings, BiLSTM, CRF primary
/// head and a context-free simplified-LID head on the enhanced n-gram vector.
class TaggerModel {
 public:
  TaggerModel(TaggerConfig cfg, LabelScheme scheme, CharVocab vocab,
              std::vector<EmbeddingTable> static_tables = {})
      : cfg_(std::move(cfg)), scheme_(std::move(scheme)), vocab_(std::move(vocab)),
        static_(std::move(static_tables)) {
    cfg_.encoder.char_vocab_size = vocab_.size();
    if (cfg_.hidden < 1) throw ConfigError("tagger: hidden size must be >= 1");
    if (cfg_.use_static && static_.empty())
      throw ConfigError("tagger: use_static requires at least one embedding table");
    if (!cfg_.use_static) static_.clear();
    encoder_ = std::make_unique<CharNgramEncoder>(cfg_.encoder, params_);
    bilstm_ = BiLstm(params_, "tagger.bilstm", bilstm_input_dim(), cfg_.hidden);
    crf_ = CrfLayer(params_, "crf", crf_input_dim(), scheme_.size());
    if (cfg_.use_secondary) {
      const std::size_t e = cfg_.encoder.enhanced_dim();
      sec_w_ = &params_.add("secondary.W", {3, e}, Group::NonCore);
      sec_b_ = &params_.add("secondary.b", {3}, Group::NonCore);
    }
  }

  TaggerModel(const TaggerModel&) = delete;
  TaggerModel& operator=(const TaggerModel&) = delete;

  void initialize(std::uint64_t seed) {
    Rng rng(seed);
    encoder_->initialize(rng);
    bilstm_.initialize(rng);
    crf_.initialize(rng);
    if (sec_w_) {
      init_glorot(sec_w_->value, rng, sec_w_->value.dim(1), 3);
      sec_b_->value.fill(0.0);
    }
  }

  const TaggerConfig& config() const noexcept { return cfg_; }
  const LabelScheme& scheme() const noexcept { return scheme_; }
  const CharVocab& vocab() const noexcept { return vocab_; }
  const std::vector<EmbeddingTable>& static_tables() const noexcept { return static_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }
  CharNgramEncoder& encoder() noexcept { return *encoder_; }
  const CharNgramEncoder& encoder() const noexcept { return *encoder_; }
  BiLstm& bilstm() noexcept { return bilstm_; }
  CrfLayer& crf() noexcept { return crf_; }

  /// Switches pooling on the existing weights (mode-equivalence checks).
  void set_pooling(PoolingMode mode) {
    cfg_.encoder.pooling = mode;
    encoder_->set_pooling(mode);
  }

  std::size_t static_dim() const {
    std::size_t n = 0;
    for (const auto& t : static_) n += t.dim();
    return n;
  }

  std::size_t bilstm_input_dim() const {
    return static_cast<std::size_t>(cfg_.encoder.token_dim) + (cfg_.use_static ? static_dim() : 0);
  }

  std::size_t crf_input_dim() const {
    return 2 * static_cast<std::size_t>(cfg_.hidden) +
           (cfg_.concat_ngram_to_crf ? static_cast<std::size_t>(cfg_.encoder.enhanced_dim()) : 0);
  }

  WordEncoding encode(const std::string& word, PositionSampler* sampler = nullptr) const {
    return encoder_->encode(word, vocab_, sampler);
  }

  /// token_vec ⊕ static embeddings (zeros for out-of-vocabulary words).
  std::vector<double> bilstm_input(const WordEncoding& w, const std::string& word) const {
    std::vector<double> x(w.token.values().begin(), w.token.values().end());
    if (cfg_.use_static) {
      for (const auto& table : static_) {
        const std::vector<double>* v = table.find(word);
        if (v) x.insert(x.end(), v->begin(), v->end());
        else x.insert(x.end(), table.dim(), 0.0);
      }
    }
    return x;
  }

  /// BiLSTM output ⊕ enhanced n-gram vector when concatenation is enabled.
  std::vector<double> crf_input(std::span<const double> context, const WordEncoding& w) const {
    std::vector<double> f(context.begin(), context.end());
    if (cfg_.concat_ngram_to_crf) f.insert(f.end(), w.enhanced.values().begin(), w.enhanced.values().end());
    return f;
  }

  /// Softmax over {lang1, lang2, other} from the enhanced representation only.
  Tensor secondary_logits(std::span<const double> enhanced) const {
    if (!sec_w_) throw ConfigError("secondary head is disabled for this model");
    Tensor p = sec_b_->value;
    ops::gemv_acc(sec_w_->value, enhanced, p.values());
    ops::softmax_inplace(p.values());
    return p;
  }

  /// Emission scores for a sentence given per-token encodings.
  Tensor emissions(std::span<const WordEncoding* const> enc, std::span<const std::string> words,
                   BiLstm::Result* lstm_out = nullptr,
                   std::vector<std::vector<double>>* features_out = nullptr) const {
    std::vector<std::vector<double>> xs;
    xs.reserve(words.size());
    for (std::size_t t = 0; t < words.size(); ++t) xs.push_back(bilstm_input(*enc[t], words[t]));
    BiLstm::Result r = bilstm_.forward(xs);
    std::vector<std::vector<double>> feats;
    feats.reserve(words.size());
    for (std::size_t t = 0; t < words.size(); ++t) feats.push_back(crf_input(r.outputs[t], *enc[t]));
    Tensor e = crf_.emissions(feats);
    if (lstm_out) *lstm_out = std::move(r);
    if (features_out) *features_out = std::move(feats);
    return e;
  }

  /// Forward (and, when `grads`, backward) over a batch. Gradients are those
  /// of primary/N + beta·secondary/N2 where N counts tokens and N2 counts
  /// tokens carrying a simplified label.
  BatchLoss batch_loss(std::span<const Sentence* const> batch, double beta, bool grads) {
    BatchLoss loss;
    std::unordered_map<std::string, std::size_t> slot;
    std::vector<std::string> words;
    for (const Sentence* s : batch) {
      loss.tokens += s->size();
      for (const Token& t : s->tokens) {
        if (slot.emplace(t.surface, words.size()).second) words.push_back(t.surface);
        if (cfg_.use_secondary && effective_simplified(t, scheme_)) ++loss.secondary_tokens;
      }
    }
    if (loss.tokens == 0) throw InputError("empty batch");
    std::vector<WordEncoding> enc;
    enc.reserve(words.size());
    for (const auto& w : words) enc.push_back(encode(w));
    std::vector<std::vector<double>> g_token(words.size()), g_enh(words.size());
    if (grads) {
      for (std::size_t i = 0; i < words.size(); ++i) {
        g_token[i].assign(cfg_.encoder.token_dim, 0.0);
        g_enh[i].assign(cfg_.encoder.enhanced_dim(), 0.0);
      }
    }
    const double inv_n = 1.0 / static_cast<double>(loss.tokens);
    const double sec_scale =
        loss.secondary_tokens ? beta / static_cast<double>(loss.secondary_tokens) : 0.0;
    const std::size_t token_dim = cfg_.encoder.token_dim, h2 = 2 * cfg_.hidden;

    for (const Sentence* s : batch) {
      const std::size_t n = s->size();
      if (n == 0) throw InputError("empty sentence in batch");
      std::vector<const WordEncoding*> se(n);
      std::vector<std::string> sw(n);
      std::vector<int> gold(n);
      std::vector<std::size_t> idx(n);
      for (std::size_t t = 0; t < n; ++t) {
        idx[t] = slot.at(s->tokens[t].surface);
        se[t] = &enc[idx[t]];
        sw[t] = s->tokens[t].surface;
        gold[t] = scheme_.index(s->tokens[t].label);
      }
      BiLstm::Result lstm;
      std::vector<std::vector<double>> feats;
      Tensor em = emissions(se, sw, &lstm, &feats);
      if (!grads) {
        loss.primary += crf_log_likelihood(em, gold, crf_.transition_values());
      } else {
        Tensor g_em(em.shape());
        loss.primary += crf_log_likelihood(em, gold, crf_.transition_values(), &g_em,
                                           &crf_.transitions().grad, inv_n);
        std::vector<std::vector<double>> g_feat(n, std::vector<double>(crf_input_dim(), 0.0));
        crf_.emission_backward(feats, g_em, &g_feat);
        std::vector<std::vector<double>> g_out(n), g_x(n, std::vector<double>(bilstm_input_dim(), 0.0));
        for (std::size_t t = 0; t < n; ++t) {
          g_out[t].assign(g_feat[t].begin(), g_feat[t].begin() + static_cast<std::ptrdiff_t>(h2));
          if (cfg_.concat_ngram_to_crf)
            for (std::size_t k = h2; k < g_feat[t].size(); ++k) g_enh[idx[t]][k - h2] += g_feat[t][k];
        }
        bilstm_.backward(lstm, g_out, &g_x);
        for (std::size_t t = 0; t < n; ++t)
          for (std::size_t k = 0; k < token_dim; ++k) g_token[idx[t]][k] += g_x[t][k];
      }
      if (cfg_.use_secondary) {
        for (std::size_t t = 0; t < n; ++t) {
          const auto simp = effective_simplified(s->tokens[t], scheme_);
          if (!simp) continue;
          const int y = simplified_index(*simp);
          const Tensor p = secondary_logits(se[t]->enhanced.values());
          loss.secondary += -std::log(std::max(p[y], 1e-300));
          if (grads && sec_scale > 0.0) {
            std::vector<double> g(3);
            for (int k = 0; k < 3; ++k) g[k] = sec_scale * (p[k] - (k == y ? 1.0 : 0.0));
            ops::outer_acc(g, se[t]->enhanced.values(), sec_w_->grad);
            for (int k = 0; k < 3; ++k) sec_b_->grad[k] += g[k];
            ops::gemv_t_acc(sec_w_->value, g, g_enh[idx[t]]);
          }
        }
      }
    }
    if (grads && encoder_trainable()) {
      for (std::size_t i = 0; i < words.size(); ++i) encoder_->backward(enc[i], g_token[i], g_enh[i]);
    }
    loss.primary *= inv_n;
    loss.secondary = loss.secondary_tokens ? loss.secondary / static_cast<double>(loss.secondary_tokens) : 0.0;
    return loss;
  }

  bool encoder_trainable() const {
    for (Parameter* p : encoder_->parameters())
      if (p->trainable) return true;
    return false;
  }

  /// Viterbi labels, secondary-head labels and (optionally) attention traces.
  Prediction predict(std::span<const std::string> words, bool with_traces = false,
                     PositionSampler* sampler = nullptr) const {
    if (words.empty()) throw InputError("cannot tag an empty sentence");
    std::vector<WordEncoding> enc;
    enc.reserve(words.size());
    for (const auto& w : words) enc.push_back(encode(w, sampler));
    std::vector<const WordEncoding*> ptrs;
    for (const auto& e : enc) ptrs.push_back(&e);
    return decode(ptrs, words, with_traces);
  }

  Prediction predict(const Sentence& s, bool with_traces = false,
                     PositionSampler* sampler = nullptr) const {
    return predict(surfaces(s), with_traces, sampler);
  }

  /// Tags every sentence of a split, encoding each distinct word once.
  std::vector<Prediction> predict_split(const Split& split, bool with_traces = false) const {
    std::unordered_map<std::string, WordEncoding> cache;
    std::vector<Prediction> out;
    out.reserve(split.size());
    for (const auto& s : split) {
      if (s.tokens.empty()) throw InputError("cannot tag an empty sentence");
      const auto words = surfaces(s);
      std::vector<const WordEncoding*> ptrs;
      for (const auto& w : words) {
        auto it = cache.find(w);
        if (it == cache.end()) it = cache.emplace(w, encode(w)).first;
        ptrs.push_back(&it->second);
      }
      out.push_back(decode(ptrs, words, with_traces));
    }
    return out;
  }

  static std::vector<std::string> surfaces(const Sentence& s) {
    std::vector<std::string> w;
    w.reserve(s.size());
    for (const auto& t : s.tokens) w.push_back(t.surface);
    return w;
  }

  // ---- persistence ----

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.meta["config"] = cfg_;
    ck.meta["task"] = std::string(to_string(scheme_.task()));
    ck.meta["labels"] = scheme_.labels();
    std::vector<std::uint32_t> cps(vocab_.chars().begin(), vocab_.chars().end());
    ck.meta["char_vocab"] = cps;
    nlohmann::json tables = nlohmann::json::array();
    for (std::size_t i = 0; i < static_.size(); ++i) {
      std::vector<std::string> words;
      Tensor vecs({static_[i].size(), static_[i].dim()});
      std::size_t r = 0;
      for (const auto& [w, v] : static_[i].entries()) {
        words.push_back(w);
        std::copy(v.begin(), v.end(), vecs.row(r++).begin());
      }
      tables.push_back({{"dim", static_[i].dim()}, {"words", words}});
      ck.entries.emplace_back("static." + std::to_string(i), std::move(vecs));
    }
    ck.meta["static_tables"] = tables;
    for (const auto& p : params_.all()) ck.entries.emplace_back(p.name, p.value);
    return ck;
  }

  static std::unique_ptr<TaggerModel> from_checkpoint(const Checkpoint& ck) {
    TaggerConfig cfg;
    LabelScheme scheme;
    std::vector<char32_t> chars;
    std::vector<EmbeddingTable> tables;
    try {
      cfg = ck.meta.at("config").get<TaggerConfig>();
      scheme = LabelScheme(parse_task(ck.meta.at("task").get<std::string>()),
                           ck.meta.at("labels").get<std::vector<std::string>>());
      for (auto cp : ck.meta.at("char_vocab").get<std::vector<std::uint32_t>>())
        chars.push_back(static_cast<char32_t>(cp));
      const auto& jt = ck.meta.at("static_tables");
      for (std::size_t i = 0; i < jt.size(); ++i) {
        const auto dim = jt[i].at("dim").get<std::size_t>();
        const auto words = jt[i].at("words").get<std::vector<std::string>>();
        const Tensor* vecs = ck.find("static." + std::to_string(i));
        if (!vecs || vecs->shape() != Tensor::Shape{words.size(), dim})
          throw LoadError("static table " + std::to_string(i) + " payload missing or misshapen");
        EmbeddingTable table(dim);
        for (std::size_t r = 0; r < words.size(); ++r) {
          auto row = vecs->row(r);
          table.set(words[r], std::vector<double>(row.begin(), row.end()));
        }
        tables.push_back(std::move(table));
      }
    } catch (const nlohmann::json::exception& e) {
      throw LoadError(std::string("checkpoint metadata: ") + e.what());
    }
    auto model = std::make_unique<TaggerModel>(cfg, std::move(scheme), CharVocab(std::move(chars)),
                                               std::move(tables));
    model->load_parameters(ck, "");
    return model;
  }

  /// Copies every parameter whose name starts with `prefix` from `ck`,
  /// checking shapes. Returns the number of parameters loaded.
  std::size_t load_parameters(const Checkpoint& ck, const std::string& prefix) {
    std::size_t loaded = 0;
    for (auto& p : params_.all()) {
      if (p.name.rfind(prefix, 0) != 0) continue;
      const Tensor* t = ck.find(p.name);
      if (!t) throw LoadError("checkpoint lacks parameter '" + p.name + "'");
      if (!t->same_shape(p.value))
        throw LoadError("shape mismatch for '" + p.name + "': checkpoint " + t->shape_string() +
                        ", model " + p.value.shape_string());
      p.value = *t;
      ++loaded;
    }
    return loaded;
  }

 private:
  Prediction decode(std::span<const WordEncoding* const> enc, std::span<const std::string> words,
                    bool with_traces) const {
    Prediction pred;
    const Tensor em = emissions(enc, words);
    for (int y : viterbi_decode(em, crf_.transition_values()).path) pred.labels.push_back(scheme_.label(y));
    if (cfg_.use_secondary) {
      for (const WordEncoding* w : enc) {
        const Tensor p = secondary_logits(w->enhanced.values());
        std::size_t best = 0;
        for (std::size_t k = 1; k < 3; ++k)
          if (p[k] > p[best]) best = k;
        pred.simplified.push_back(simplified_labels()[best]);
      }
    }
    if (with_traces && cfg_.encoder.pooling != PoolingMode::MaxPool) {
      for (std::size_t t = 0; t < words.size(); ++t) pred.traces.push_back(encoder_->trace(*enc[t], words[t]));
    }
    return pred;
  }

  TaggerConfig cfg_;
  LabelScheme scheme_;
  CharVocab vocab_;
  std::vector<EmbeddingTable> static_;
  ParameterStore params_;
  std::unique_ptr<CharNgramEncoder> encoder_;
  BiLstm bilstm_;
  CrfLayer crf_;
  Parameter* sec_w_ = nullptr;
  Parameter* sec_b_ = nullptr;
};

/// Inference view that reads a uniformly random position-table row for every
/// n-gram lookup. Parameters are untouched.
class ShuffledView {
 public:
  ShuffledView(const TaggerModel& model, std::uint64_t seed) : model_(&model), sampler_(seed) {
    if (!uses_positions(model.config().encoder.pooling))
      throw ModeError("position shuffling needs a position-aware pooling mode, model uses " +
                      std::string(to_string(model.config().encoder.pooling)));
  }

  Prediction predict(std::span<const std::string> words, bool with_traces = false) {
    return model_->predict(words, with_traces, &sampler_);
  }
  Prediction predict(const Sentence& s, bool with_traces = false) {
    return model_->predict(s, with_traces, &sampler_);
  }

 private:
  const TaggerModel* model_;
  ShuffledPositions sampler_;
};

inline ShuffledView shuffle_positions(const TaggerModel& model, std::uint64_t seed) {
  return ShuffledView(model, seed);
}

}  // namespace morphtag

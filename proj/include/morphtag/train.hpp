#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "morphtag/corpus.hpp"
#include "morphtag/error.hpp"
#include "morphtag/metrics.hpp"
#include "morphtag/parameter.hpp"
#include "morphtag/serialize.hpp"
#include "morphtag/tagger.hpp"

namespace morphtag {

// ---------------------------------------------------------------------------
// Loss composition

struct LossConfig {
  double beta = 0.2;
  double lambda = 1e-6;
  bool exclude_crf_from_l2 = true;
};

/// Σ w² over trainable parameters, skipping CRF parameters when requested.
inline double l2_sum(const ParameterStore& store, bool exclude_crf) {
  double s = 0.0;
  for (const auto& p : store.all()) {
    if (!p.trainable || (exclude_crf && p.crf)) continue;
    s += p.value.squared_norm();
  }
  return s;
}

/// L = primary + beta·secondary + lambda·Σ w².
inline double total_loss(double primary, double secondary, double squared_weights,
                         const LossConfig& cfg) {
  return primary + cfg.beta * secondary + cfg.lambda * squared_weights;
}

inline double total_loss(double primary, double secondary, const ParameterStore& store,
                         const LossConfig& cfg) {
  return total_loss(primary, secondary, l2_sum(store, cfg.exclude_crf_from_l2), cfg);
}

/// Adds the regularizer gradient 2·lambda·w.
inline void add_l2_gradient(ParameterStore& store, const LossConfig& cfg) {
  if (cfg.lambda == 0.0) return;
  for (auto& p : store.all()) {
    if (!p.trainable || (cfg.exclude_crf_from_l2 && p.crf)) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) p.grad[i] += 2.0 * cfg.lambda * p.value[i];
  }
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Tensor m, v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of `value` in place.
inline void adam_update(Tensor& value, const Tensor& grad, AdamState& state, double lr,
                        const AdamConfig& cfg) {
  if (!value.same_shape(grad))
    throw DimensionError("adam: gradient " + grad.shape_string() + " vs value " +
                         value.shape_string());
  if (state.m.empty()) {
    state.m = Tensor(value.shape());
    state.v = Tensor(value.shape());
  }
  if (!state.m.same_shape(value) || !state.v.same_shape(value))
    throw DimensionError("adam: state shape " + state.m.shape_string() + " vs value " +
                         value.shape_string());
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    value[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  /// Updates trainable parameters; `group_lr` scales the rate per group.
  void step(ParameterStore& store, double lr,
            const std::array<double, kAllGroups.size()>& group_lr = unit_factors()) {
    std::size_t i = 0;
    if (state_.size() < store.size()) state_.resize(store.size());
    for (auto& p : store.all()) {
      AdamState& s = state_[i++];
      if (!p.trainable) continue;
      adam_update(p.value, p.grad, s, lr * group_lr[group_index(p.group)], cfg_);
    }
  }

  const AdamConfig& config() const noexcept { return cfg_; }

  static std::array<double, kAllGroups.size()> unit_factors() {
    std::array<double, kAllGroups.size()> f{};
    f.fill(1.0);
    return f;
  }

 private:
  AdamConfig cfg_;
  std::vector<AdamState> state_;
};

/// Scales every gradient so the global L2 norm is at most `max_norm`.
inline double clip_gradients(ParameterStore& store, double max_norm) {
  double sq = 0.0;
  for (const auto& p : store.all())
    if (p.trainable) sq += p.grad.squared_norm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : store.all())
      if (p.trainable)
        for (double& g : p.grad.values()) g *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Schedulers

class PlateauScheduler {
 public:
  PlateauScheduler(double lr, int patience = 5, double factor = 0.5)
      : lr_(lr), patience_(patience), factor_(factor) {}

  /// Feeds one epoch's validation loss; returns the rate for the next epoch.
  double step(double metric) {
    if (metric < best_) {
      best_ = metric;
      bad_ = 0;
    } else if (++bad_ > patience_) {
      lr_ *= factor_;
      bad_ = 0;
    }
    return lr_;
  }

  double lr() const noexcept { return lr_; }

 private:
  double lr_;
  int patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

struct StlrConfig {
  double lr_max = 0.01;
  double cut_frac = 0.1;
  double ratio = 32.0;
};

/// Slanted triangular rate: linear warm-up over the first cut_frac of the
/// steps, then linear decay, bottoming at lr_max / ratio.
inline double stlr(std::size_t t, std::size_t total, const StlrConfig& cfg) {
  if (total == 0) throw ConfigError("stlr: total step count must be positive");
  if (t > total) throw ConfigError("stlr: step beyond schedule");
  const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(total) * cfg.cut_frac));
  double p;
  if (t < cut) {
    p = static_cast<double>(t) / static_cast<double>(cut);
  } else if (total == cut) {
    p = 1.0;
  } else {
    p = 1.0 - static_cast<double>(t - cut) / static_cast<double>(total - cut);
  }
  return cfg.lr_max * (1.0 + p * (cfg.ratio - 1.0)) / cfg.ratio;
}

// ---------------------------------------------------------------------------
// Progressive fine-tuning

struct FinetuneSchedule {
  std::vector<Group> groups{kAllGroups.begin(), kAllGroups.end()};
  int epochs_per_stage = 2;
  double discriminative_factor = 1.0 / 2.6;
  StlrConfig stlr;

  static FinetuneSchedule from_names(const std::vector<std::string>& names) {
    FinetuneSchedule s;
    s.groups.clear();
    for (const auto& n : names) s.groups.push_back(parse_group(n));
    return s;
  }

  std::size_t stages() const noexcept { return groups.size(); }

  /// Stage reached after `epoch` completed epochs (0-based).
  std::size_t stage_for_epoch(int epoch) const {
    const int per = std::max(1, epochs_per_stage);
    return std::min<std::size_t>(static_cast<std::size_t>(epoch / per), groups.size());
  }

  /// Learning-rate multiplier per group: factor^depth in schedule order.
  std::array<double, kAllGroups.size()> lr_factors() const {
    std::array<double, kAllGroups.size()> f{};
    f.fill(1.0);
    for (std::size_t d = 0; d < groups.size(); ++d)
      f[group_index(groups[d])] = std::pow(discriminative_factor, static_cast<double>(d));
    return f;
  }
};

/// Groups at schedule index <= stage are trainable; stage == #groups unfreezes
/// everything.
inline std::array<bool, kAllGroups.size()> gradual_unfreeze(const FinetuneSchedule& schedule,
                                                            std::size_t stage) {
  if (stage > schedule.stages())
    throw ConfigError("gradual_unfreeze: stage " + std::to_string(stage) + " beyond " +
                      std::to_string(schedule.stages()) + " groups");
  std::array<bool, kAllGroups.size()> flags{};
  if (stage == schedule.stages()) {
    flags.fill(true);
    return flags;
  }
  for (std::size_t i = 0; i <= stage; ++i) flags[group_index(schedule.groups[i])] = true;
  return flags;
}

inline std::array<bool, kAllGroups.size()> gradual_unfreeze(const std::vector<std::string>& group_names,
                                                            std::size_t stage) {
  return gradual_unfreeze(FinetuneSchedule::from_names(group_names), stage);
}

// ---------------------------------------------------------------------------
// Training

enum class TransferMode { None, Frozen, Trainable };

inline std::string_view to_string(TransferMode m) {
  switch (m) {
    case TransferMode::None: return "none";
    case TransferMode::Frozen: return "frozen";
    case TransferMode::Trainable: return "trainable";
  }
  return "?";
}

inline TransferMode parse_transfer_mode(std::string_view s) {
  if (s == "none") return TransferMode::None;
  if (s == "frozen") return TransferMode::Frozen;
  if (s == "trainable") return TransferMode::Trainable;
  throw ConfigError("unknown transfer mode '" + std::string(s) + "' (none, frozen, trainable)");
}

enum class SchedulerKind { Plateau, Stlr };

struct TrainConfig {
  AdamConfig adam;
  SchedulerKind scheduler = SchedulerKind::Plateau;
  int patience = 5;
  double plateau_factor = 0.5;
  int epochs = 50;
  int batch_size = 16;
  std::uint64_t seed = 1;
  TransferMode transfer_mode = TransferMode::None;
  LossConfig loss;
  bool progressive_unfreeze = false;
  FinetuneSchedule finetune;
  double clip_norm = 5.0;
  /// Stop once dev token accuracy reaches this value (0 disables).
  double stop_at_accuracy = 0.0;
};

struct Evaluation {
  double loss = 0.0;
  F1Report report;
  double wa_f1 = 0.0;
  std::optional<EntityScore> entity;
  std::optional<double> simplified_accuracy;
  std::vector<Prediction> predictions;
};

/// Scores `split` with the model: primary/secondary loss and metrics.
inline Evaluation evaluate(TaggerModel& model, const Split& split, double beta) {
  Evaluation ev;
  if (split.empty()) return ev;
  std::vector<const Sentence*> all;
  for (const auto& s : split) all.push_back(&s);
  const BatchLoss bl = model.batch_loss(all, beta, false);
  ev.loss = bl.primary + beta * bl.secondary;
  ev.predictions = model.predict_split(split);
  std::vector<std::string> gold, pred;
  std::vector<std::vector<std::string>> gold_s, pred_s;
  std::size_t simp_total = 0, simp_correct = 0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    std::vector<std::string> g;
    for (std::size_t t = 0; t < split[i].size(); ++t) {
      const Token& tok = split[i].tokens[t];
      g.push_back(tok.label);
      if (!ev.predictions[i].simplified.empty()) {
        if (auto s = effective_simplified(tok, model.scheme())) {
          ++simp_total;
          simp_correct += *s == ev.predictions[i].simplified[t];
        }
      }
    }
    gold.insert(gold.end(), g.begin(), g.end());
    pred.insert(pred.end(), ev.predictions[i].labels.begin(), ev.predictions[i].labels.end());
    gold_s.push_back(std::move(g));
    pred_s.push_back(ev.predictions[i].labels);
  }
  ev.report = f1_report(gold, pred);
  ev.wa_f1 = wa_f1(ev.report);
  if (model.scheme().task() == Task::NER) ev.entity = entity_f1(gold_s, pred_s);
  if (simp_total)
    ev.simplified_accuracy = static_cast<double>(simp_correct) / static_cast<double>(simp_total);
  return ev;
}

inline nlohmann::json to_json(const Evaluation& ev) {
  nlohmann::json per;
  for (const auto& l : ev.report.per_label)
    per[l.label] = {{"precision", l.precision}, {"recall", l.recall}, {"f1", l.f1}, {"support", l.support}};
  nlohmann::json j{{"loss", ev.loss},
                   {"accuracy", ev.report.accuracy},
                   {"weighted_f1", ev.report.weighted_f1},
                   {"wa_f1", ev.wa_f1},
                   {"per_label", per}};
  if (ev.entity)
    j["entity_f1"] = {{"precision", ev.entity->precision}, {"recall", ev.entity->recall}, {"f1", ev.entity->f1}};
  if (ev.simplified_accuracy) j["simplified_accuracy"] = *ev.simplified_accuracy;
  return j;
}

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double dev_loss = 0.0;
  double dev_weighted_f1 = 0.0;
  double dev_accuracy = 0.0;
  std::map<std::string, double> per_label_f1;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch},
          {"lr", m.lr},
          {"train_loss", m.train_loss},
          {"dev_loss", m.dev_loss},
          {"dev_weighted_f1", m.dev_weighted_f1},
          {"dev_accuracy", m.dev_accuracy},
          {"per_label_f1", m.per_label_f1}};
}

struct TrainResult {
  std::vector<EpochMetrics> log;
  int best_epoch = 0;
  double best_dev_weighted_f1 = -1.0;
};

/// FNV-1a fingerprint of every encoder parameter byte.
inline std::string encoder_checksum(const TaggerModel& model) {
  std::string bytes;
  for (const auto& p : model.params().all()) {
    if (p.name.rfind("encoder.", 0) != 0) continue;
    bytes += p.name;
    bytes.append(reinterpret_cast<const char*>(p.value.data()), p.value.size() * sizeof(double));
  }
  return hex64(fnv1a64(bytes));
}

inline void freeze_encoder(TaggerModel& model) {
  for (Parameter* p : model.encoder().parameters()) p->trainable = false;
}

namespace train_detail {

inline void apply_trainable(TaggerModel& model, const TrainConfig& cfg,
                            const std::array<bool, kAllGroups.size()>& groups) {
  for (auto& p : model.params().all()) {
    const bool frozen_encoder =
        cfg.transfer_mode == TransferMode::Frozen && p.name.rfind("encoder.", 0) == 0;
    p.trainable = groups[group_index(p.group)] && !frozen_encoder;
  }
}

}  // namespace train_detail

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Minimizes the multi-task loss, evaluating on dev after every epoch and
/// leaving the model at the epoch with the best dev weighted F1.
inline TrainResult train(TaggerModel& model, const Corpus& corpus, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (corpus.train.empty()) throw InputError("training split is empty");
  if (corpus.dev.empty()) throw InputError("dev split is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
  validate_split(corpus.train, model.scheme());
  validate_split(corpus.dev, model.scheme());

  Rng rng(cfg.seed);
  Adam adam(cfg.adam);
  PlateauScheduler plateau(cfg.adam.lr, cfg.patience, cfg.plateau_factor);
  const std::size_t n = corpus.train.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches * static_cast<std::size_t>(cfg.epochs);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::array<bool, kAllGroups.size()> all_on{};
  all_on.fill(true);
  train_detail::apply_trainable(model, cfg, all_on);
  const auto group_lr = cfg.progressive_unfreeze ? cfg.finetune.lr_factors() : Adam::unit_factors();

  TrainResult result;
  std::vector<Tensor> best;
  std::size_t step = 0;
  double lr = cfg.adam.lr;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.progressive_unfreeze)
      train_detail::apply_trainable(model, cfg,
                                    gradual_unfreeze(cfg.finetune, cfg.finetune.stage_for_epoch(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<const Sentence*> batch;
      for (std::size_t i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i)
        batch.push_back(&corpus.train[order[i]]);
      model.params().zero_grad();
      const BatchLoss bl = model.batch_loss(batch, cfg.loss.beta, true);
      const double total = total_loss(bl.primary, bl.secondary, model.params(), cfg.loss);
      if (!std::isfinite(total))
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1));
      add_l2_gradient(model.params(), cfg.loss);
      model.params().clear_frozen_grads();
      clip_gradients(model.params(), cfg.clip_norm);
      lr = cfg.scheduler == SchedulerKind::Stlr ? stlr(step, total_steps, cfg.finetune.stlr)
                                                : plateau.lr();
      adam.step(model.params(), lr, group_lr);
      ++step;
      loss_sum += total;
    }
    const Evaluation ev = evaluate(model, corpus.dev, cfg.loss.beta);
    if (!std::isfinite(ev.loss)) throw NumericError("dev loss is non-finite");
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(batches);
    m.dev_loss = ev.loss;
    m.dev_weighted_f1 = ev.report.weighted_f1;
    m.dev_accuracy = ev.report.accuracy;
    for (const auto& l : ev.report.per_label) m.per_label_f1[l.label] = l.f1;
    if (cfg.scheduler == SchedulerKind::Plateau) plateau.step(ev.loss);
    if (m.dev_weighted_f1 > result.best_dev_weighted_f1) {
      result.best_dev_weighted_f1 = m.dev_weighted_f1;
      result.best_epoch = m.epoch;
      best = model.params().snapshot();
    }
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
    if (cfg.stop_at_accuracy > 0.0 && m.dev_accuracy >= cfg.stop_at_accuracy) break;
  }
  model.params().restore(best);
  train_detail::apply_trainable(model, cfg, all_on);
  return result;
}

/// Builds a model for a new task from a pretrained checkpoint. None keeps
/// only the pretrained character inventory and initializes the encoder
/// afresh; Frozen and Trainable copy the encoder weights.
inline std::unique_ptr<TaggerModel> make_transfer_model(const Checkpoint& pretrained,
                                                        TaggerConfig task_cfg, LabelScheme scheme,
                                                        TransferMode mode, std::uint64_t seed,
                                                        std::vector<EmbeddingTable> static_tables = {}) {
  std::vector<char32_t> chars;
  try {
    for (auto cp : pretrained.meta.at("char_vocab").get<std::vector<std::uint32_t>>())
      chars.push_back(static_cast<char32_t>(cp));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("pretrained checkpoint: ") + e.what());
  }
  auto model = std::make_unique<TaggerModel>(std::move(task_cfg), std::move(scheme),
                                             CharVocab(std::move(chars)), std::move(static_tables));
  model->initialize(seed);
  if (mode != TransferMode::None) model->load_parameters(pretrained, "encoder.");
  if (mode == TransferMode::Frozen) freeze_encoder(*model);
  return model;
}

}  // namespace morphtag

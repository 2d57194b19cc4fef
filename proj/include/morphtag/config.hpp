#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "morphtag/error.hpp"
#include "morphtag/synthetic.hpp"
#include "morphtag/tagger.hpp"
#include "morphtag/train.hpp"

// Run configuration: key = value lines grouped under [section] headers.
// Keys outside any section are top-level (seed). Comments start with '#'.

namespace morphtag {

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

inline long long to_int(const std::string& key, const std::string& v) {
  long long x = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  return x;
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

/// Parses `[section]` / `key = value` text into "section.key" entries.
inline std::vector<std::pair<std::string, std::string>> parse_ini(std::istream& in) {
  std::vector<std::pair<std::string, std::string>> out;
  std::string line, section;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ParseError("unterminated section header", n);
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value", n);
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ParseError("empty key", n);
    out.emplace_back(section.empty() ? key : section + "." + key, trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

}  // namespace config_detail

/// Fully-resolved settings for one CLI run. Every key has a default; files
/// and flags override in that order. Unknown keys are rejected.
class RunConfig {
 public:
  RunConfig() {
    const TaggerConfig tc;
    const TrainConfig tr;
    const auto ints = [](const std::vector<int>& v) {
      std::vector<std::string> s;
      for (int x : v) s.push_back(std::to_string(x));
      return config_detail::join(s);
    };
    defaults_ = {
        {"seed", "1"},
        {"encoder.char_emb_dim", std::to_string(tc.encoder.char_emb_dim)},
        {"encoder.orders", ints(tc.encoder.orders)},
        {"encoder.channels", ints(tc.encoder.channels)},
        {"encoder.max_word_len", std::to_string(tc.encoder.max_word_len)},
        {"encoder.attention_dim", std::to_string(tc.encoder.attention_dim)},
        {"encoder.pooling", std::string(to_string(tc.encoder.pooling))},
        {"encoder.token_dim", std::to_string(tc.encoder.token_dim)},
        {"encoder.highway", "true"},
        {"tagger.experiment", ""},
        {"tagger.hidden", std::to_string(tc.hidden)},
        {"tagger.concat_ngram_to_crf", "true"},
        {"tagger.use_secondary", "true"},
        {"tagger.use_static", "false"},
        {"train.lr", "0.001"},
        {"train.adam_beta1", "0.9"},
        {"train.adam_beta2", "0.999"},
        {"train.adam_eps", "1e-8"},
        {"train.scheduler", "plateau"},
        {"train.patience", std::to_string(tr.patience)},
        {"train.plateau_factor", "0.5"},
        {"train.epochs", std::to_string(tr.epochs)},
        {"train.batch_size", std::to_string(tr.batch_size)},
        {"train.beta", "0.2"},
        {"train.lambda", "1e-6"},
        {"train.exclude_crf_from_l2", "true"},
        {"train.clip_norm", "5"},
        {"train.stop_at_accuracy", "0"},
        {"train.transfer", "none"},
        {"train.progressive_unfreeze", "false"},
        {"train.unfreeze_groups", "non_core,bilstm2,bilstm1,highway,projection,convolutions,char_embeddings"},
        {"train.epochs_per_stage", "2"},
        {"train.discriminative_factor", "0.38461538461538464"},
        {"train.stlr_lr_max", "0.01"},
        {"train.stlr_cut_frac", "0.1"},
        {"train.stlr_ratio", "32"},
        {"data.task", "lid"},
        {"data.scheme_file", ""},
        {"data.train", ""},
        {"data.dev", ""},
        {"data.test", ""},
        {"data.embeddings", ""},
        {"paths.output_dir", "out"},
        {"paths.pretrained", ""},
    };
    values_ = defaults_;
  }

  bool known(const std::string& key) const { return defaults_.count(key) > 0; }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
    explicit_.insert(key);
  }

  /// Applies a `key=value` override as given on the command line.
  void set_assignment(const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
    set(config_detail::trim(kv.substr(0, eq)), config_detail::trim(kv.substr(eq + 1)));
  }

  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file " + path);
    try {
      for (const auto& [k, v] : config_detail::parse_ini(in)) set(k, v);
    } catch (const ParseError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  void merge_string(const std::string& text) {
    std::istringstream in(text);
    for (const auto& [k, v] : config_detail::parse_ini(in)) set(k, v);
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }
  long long get_int(const std::string& key) const { return config_detail::to_int(key, get(key)); }
  double get_double(const std::string& key) const { return config_detail::to_double(key, get(key)); }
  bool get_bool(const std::string& key) const { return config_detail::to_bool(key, get(key)); }
  std::vector<std::string> get_list(const std::string& key) const {
    return config_detail::split_list(get(key));
  }
  bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("seed")); }
  std::string output_dir() const { return get("paths.output_dir"); }

  TaggerConfig tagger_config() const {
    TaggerConfig c;
    const std::string exp = get("tagger.experiment");
    if (!exp.empty()) c = TaggerConfig::experiment(exp);
    auto pick = [&](const std::string& key) { return exp.empty() || is_explicit(key); };
    EncoderConfig& e = c.encoder;
    e.char_emb_dim = static_cast<int>(get_int("encoder.char_emb_dim"));
    e.orders = int_list("encoder.orders");
    e.channels = int_list("encoder.channels");
    e.max_word_len = static_cast<int>(get_int("encoder.max_word_len"));
    e.attention_dim = static_cast<int>(get_int("encoder.attention_dim"));
    e.token_dim = static_cast<int>(get_int("encoder.token_dim"));
    e.highway = get_bool("encoder.highway");
    if (pick("encoder.pooling")) e.pooling = parse_pooling(get("encoder.pooling"));
    c.hidden = static_cast<int>(get_int("tagger.hidden"));
    if (pick("tagger.concat_ngram_to_crf")) c.concat_ngram_to_crf = get_bool("tagger.concat_ngram_to_crf");
    // The concatenated n-gram feature is an attention-model addition; plain
    // max-pooling runs leave it off unless asked for.
    if (e.pooling == PoolingMode::MaxPool && !is_explicit("tagger.concat_ngram_to_crf"))
      c.concat_ngram_to_crf = false;
    if (pick("tagger.use_secondary")) c.use_secondary = get_bool("tagger.use_secondary");
    if (pick("tagger.use_static")) c.use_static = get_bool("tagger.use_static");
    e.validate();
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.adam.lr = get_double("train.lr");
    t.adam.beta1 = get_double("train.adam_beta1");
    t.adam.beta2 = get_double("train.adam_beta2");
    t.adam.eps = get_double("train.adam_eps");
    const std::string sched = get("train.scheduler");
    if (sched == "plateau") t.scheduler = SchedulerKind::Plateau;
    else if (sched == "stlr") t.scheduler = SchedulerKind::Stlr;
    else throw ConfigError("unknown scheduler '" + sched + "' (plateau, stlr)");
    t.patience = static_cast<int>(get_int("train.patience"));
    t.plateau_factor = get_double("train.plateau_factor");
    t.epochs = static_cast<int>(get_int("train.epochs"));
    t.batch_size = static_cast<int>(get_int("train.batch_size"));
    t.seed = seed();
    t.loss.beta = get_double("train.beta");
    t.loss.lambda = get_double("train.lambda");
    t.loss.exclude_crf_from_l2 = get_bool("train.exclude_crf_from_l2");
    if (t.loss.beta < 0.0 || t.loss.lambda < 0.0) throw ConfigError("beta and lambda must be >= 0");
    t.clip_norm = get_double("train.clip_norm");
    t.stop_at_accuracy = get_double("train.stop_at_accuracy");
    t.transfer_mode = parse_transfer_mode(get("train.transfer"));
    t.progressive_unfreeze = get_bool("train.progressive_unfreeze");
    t.finetune = FinetuneSchedule::from_names(get_list("train.unfreeze_groups"));
    t.finetune.epochs_per_stage = static_cast<int>(get_int("train.epochs_per_stage"));
    t.finetune.discriminative_factor = get_double("train.discriminative_factor");
    t.finetune.stlr.lr_max = get_double("train.stlr_lr_max");
    t.finetune.stlr.cut_frac = get_double("train.stlr_cut_frac");
    t.finetune.stlr.ratio = get_double("train.stlr_ratio");
    if (t.epochs < 1 || t.batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
    return t;
  }

  /// Every key with its resolved value, grouped by section. Keys governed by
  /// an experiment preset are written as the preset resolved them, so the
  /// output reloads to the same configuration.
  std::string serialize() const {
    std::map<std::string, std::string> resolved = values_;
    if (!get("tagger.experiment").empty() || !is_explicit("tagger.concat_ngram_to_crf")) {
      const TaggerConfig c = tagger_config();
      const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
      resolved["encoder.pooling"] = std::string(to_string(c.encoder.pooling));
      resolved["tagger.concat_ngram_to_crf"] = b(c.concat_ngram_to_crf);
      resolved["tagger.use_secondary"] = b(c.use_secondary);
      resolved["tagger.use_static"] = b(c.use_static);
    }
    std::string out = "seed = " + get("seed") + "\n";
    std::string section;
    for (const auto& [k, v] : resolved) {
      const auto dot = k.find('.');
      if (dot == std::string::npos) continue;
      const std::string s = k.substr(0, dot);
      if (s != section) {
        section = s;
        out += "\n[" + s + "]\n";
      }
      out += k.substr(dot + 1) + " = " + v + "\n";
    }
    return out;
  }

 private:
  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : get_list(key)) out.push_back(static_cast<int>(config_detail::to_int(key, s)));
    return out;
  }

  std::map<std::string, std::string> defaults_, values_;
  std::set<std::string> explicit_;
};

// ---------------------------------------------------------------------------
// Synthetic corpus specification files use the same key = value syntax
// without sections. `preset = demo` starts from the built-in demo inventory.

inline SyntheticSpec parse_synthetic_spec(std::istream& in) {
  using namespace config_detail;
  const auto entries = parse_ini(in);
  std::uint64_t seed = 7;
  for (const auto& [k, v] : entries)
    if (k == "seed") seed = static_cast<std::uint64_t>(to_int(k, v));
  SyntheticSpec spec;
  bool preset = true;
  for (const auto& [k, v] : entries)
    if (k == "preset") {
      if (v == "demo") preset = true;
      else if (v == "none") preset = false;
      else throw ConfigError("unknown synthetic preset '" + v + "' (demo, none)");
    }
  if (preset) spec = SyntheticSpec::demo(seed);
  spec.seed = seed;
  for (const auto& [k, v] : entries) {
    if (k == "preset" || k == "seed") continue;
    if (k == "lang1_stems") spec.lang1_stems = split_list(v);
    else if (k == "lang2_stems") spec.lang2_stems = split_list(v);
    else if (k == "lang1_suffixes") spec.lang1_suffixes = split_list(v);
    else if (k == "lang2_suffixes") spec.lang2_suffixes = split_list(v);
    else if (k == "suffix_prob") spec.suffix_prob = to_double(k, v);
    else if (k == "switch_prob") spec.switch_prob = to_double(k, v);
    else if (k == "other_rate") spec.other_rate = to_double(k, v);
    else if (k == "ne_rate") spec.ne_rate = to_double(k, v);
    else if (k == "min_len") spec.min_len = static_cast<int>(to_int(k, v));
    else if (k == "max_len") spec.max_len = static_cast<int>(to_int(k, v));
    else if (k == "num_sentences") spec.num_sentences = static_cast<int>(to_int(k, v));
    else if (k == "task") spec.task = parse_task(v);
    else throw ConfigError("unknown synthetic spec key '" + k + "'");
  }
  spec.validate();
  return spec;
}

inline SyntheticSpec load_synthetic_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open spec file " + path);
  return parse_synthetic_spec(in);
}

inline std::string serialize_synthetic_spec(const SyntheticSpec& s) {
  using config_detail::join;
  const auto num = [](double v) { return format_double(v); };
  std::string out = "preset = none\n";
  out += "seed = " + std::to_string(s.seed) + "\n";
  out += "task = " + std::string(to_string(s.task)) + "\n";
  out += "num_sentences = " + std::to_string(s.num_sentences) + "\n";
  out += "min_len = " + std::to_string(s.min_len) + "\n";
  out += "max_len = " + std::to_string(s.max_len) + "\n";
  out += "suffix_prob = " + num(s.suffix_prob) + "\n";
  out += "switch_prob = " + num(s.switch_prob) + "\n";
  out += "other_rate = " + num(s.other_rate) + "\n";
  out += "ne_rate = " + num(s.ne_rate) + "\n";
  out += "lang1_suffixes = " + join(s.lang1_suffixes) + "\n";
  out += "lang2_suffixes = " + join(s.lang2_suffixes) + "\n";
  out += "lang1_stems = " + join(s.lang1_stems) + "\n";
  out += "lang2_stems = " + join(s.lang2_stems) + "\n";
  return out;
}

}  // namespace morphtag

#pragma once

#include <algorithm>
#include <cctype>
#include <set>
#include <string>
#include <vector>

#include "morphtag/corpus.hpp"
#include "morphtag/error.hpp"
#include "morphtag/labels.hpp"
#include "morphtag/rng.hpp"

namespace morphtag {

/// Parameters of the synthetic code-switched corpus. Language tokens are a
/// stem optionally followed by one of the language's suffixes; punctuation
/// and usernames are `other`, capitalized bare stems are `ne`.
struct SyntheticSpec {
  std::vector<std::string> lang1_stems, lang2_stems;
  std::vector<std::string> lang1_suffixes{"ing", "ed", "ers", "ly"};
  std::vector<std::string> lang2_suffixes{"iye", "ne", "kar", "wala"};
  double suffix_prob = 0.75;
  double switch_prob = 0.3;
  double other_rate = 0.08;
  double ne_rate = 0.04;
  int min_len = 5;
  int max_len = 14;
  int num_sentences = 2000;
  std::uint64_t seed = 7;
  Task task = Task::LID;  // LID or POS labelling of the same token stream

  void validate() const;

  /// 50 stems per language built from a shared syllable inventory; a fifth of
  /// each language's stems begin with one of the other language's suffixes,
  /// so those n-grams are only informative at the word end.
  static SyntheticSpec demo(std::uint64_t seed = 7);
};

namespace synth_detail {

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline bool ends_with_any(const std::string& s, const std::vector<std::string>& suffixes) {
  return std::any_of(suffixes.begin(), suffixes.end(),
                     [&](const std::string& x) { return ends_with(s, x); });
}

inline void require_lowercase(const std::vector<std::string>& items, const char* what) {
  for (const auto& s : items) {
    if (s.empty()) throw ConfigError(std::string(what) + " contains an empty entry");
    for (unsigned char ch : s)
      if (std::isupper(ch))
        throw ConfigError(std::string(what) + " entry '" + s + "' must be lowercase");
  }
}

inline const std::vector<std::string>& pos_by_suffix() {
  static const std::vector<std::string> tags{"VERB", "ADJ", "ADV", "PRON"};
  return tags;
}

}  // namespace synth_detail

inline void SyntheticSpec::validate() const {
  using namespace synth_detail;
  if (lang1_stems.empty() || lang2_stems.empty())
    throw ConfigError("synthetic spec: stem inventories must be non-empty");
  if (lang1_suffixes.empty() || lang2_suffixes.empty())
    throw ConfigError("synthetic spec: suffix inventories must be non-empty");
  require_lowercase(lang1_stems, "lang1_stems");
  require_lowercase(lang2_stems, "lang2_stems");
  require_lowercase(lang1_suffixes, "lang1_suffixes");
  require_lowercase(lang2_suffixes, "lang2_suffixes");
  for (const auto& a : lang1_suffixes)
    for (const auto& b : lang2_suffixes)
      if (ends_with(a, b) || ends_with(b, a))
        throw ConfigError("synthetic spec: suffix inventories overlap ('" + a + "', '" + b + "')");
  for (const auto& s : lang1_stems)
    if (ends_with_any(s, lang2_suffixes))
      throw ConfigError("synthetic spec: lang1 stem '" + s + "' ends with a lang2 suffix");
  for (const auto& s : lang2_stems)
    if (ends_with_any(s, lang1_suffixes))
      throw ConfigError("synthetic spec: lang2 stem '" + s + "' ends with a lang1 suffix");
  std::set<std::string> l1(lang1_stems.begin(), lang1_stems.end());
  for (const auto& s : lang2_stems)
    if (l1.count(s)) throw ConfigError("synthetic spec: stem '" + s + "' is in both languages");
  for (double p : {suffix_prob, switch_prob, other_rate, ne_rate})
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synthetic spec: probabilities must be in [0, 1]");
  if (other_rate + ne_rate > 1.0) throw ConfigError("synthetic spec: other_rate + ne_rate > 1");
  if (min_len < 1 || max_len < min_len) throw ConfigError("synthetic spec: bad sentence length range");
  if (num_sentences < 0) throw ConfigError("synthetic spec: num_sentences must be >= 0");
  if (task == Task::NER) throw ConfigError("synthetic spec: task must be lid or pos");
}

inline SyntheticSpec SyntheticSpec::demo(std::uint64_t seed) {
  using namespace synth_detail;
  SyntheticSpec spec;
  spec.seed = seed;
  Rng rng(0x5eed5eedULL);
  const std::string consonants = "bdgklmnprstvz";
  const std::string vowels = "aeiou";
  std::set<std::string> used;
  auto all_suffixes = spec.lang1_suffixes;
  all_suffixes.insert(all_suffixes.end(), spec.lang2_suffixes.begin(), spec.lang2_suffixes.end());
  auto make_stem = [&](const std::string& prefix) {
    while (true) {
      std::string s = prefix;
      const std::size_t syllables = 2 + rng.below(2);
      for (std::size_t i = 0; i < syllables; ++i) {
        s += consonants[rng.below(consonants.size())];
        s += vowels[rng.below(vowels.size())];
      }
      if (rng.bernoulli(0.4)) s += consonants[rng.below(consonants.size())];
      if (used.count(s) || ends_with_any(s, all_suffixes)) continue;
      used.insert(s);
      return s;
    }
  };
  auto fill = [&](std::vector<std::string>& stems, const std::vector<std::string>& foreign) {
    for (int i = 0; i < 50; ++i) {
      std::string prefix;
      if (i % 5 == 0) prefix = foreign[(i / 5) % foreign.size()];
      stems.push_back(make_stem(prefix));
    }
  };
  fill(spec.lang1_stems, spec.lang2_suffixes);
  fill(spec.lang2_stems, spec.lang1_suffixes);
  return spec;
}

/// Generates sentences and splits them 70/15/15 in generation order.
inline Corpus generate_synthetic(const SyntheticSpec& spec) {
  using namespace synth_detail;
  spec.validate();
  Rng rng(spec.seed);
  const std::vector<std::string> punctuation{".", ",", "!", "?", "...", ":)", "!!"};
  std::vector<Sentence> all;
  all.reserve(static_cast<std::size_t>(spec.num_sentences));
  for (int n = 0; n < spec.num_sentences; ++n) {
    Sentence s;
    const int len = spec.min_len + static_cast<int>(rng.below(spec.max_len - spec.min_len + 1));
    int lang = rng.bernoulli(0.5) ? 1 : 2;
    bool seen_language_token = false;
    for (int i = 0; i < len; ++i) {
      const double r = rng.uniform();
      Token tok;
      if (r < spec.other_rate) {
        if (rng.bernoulli(0.3)) {
          tok.surface = "@user" + std::to_string(rng.below(100));
          tok.label = spec.task == Task::LID ? "other" : "X";
        } else {
          tok.surface = punctuation[rng.below(punctuation.size())];
          tok.label = spec.task == Task::LID ? "other" : "PUNCT";
        }
        tok.simplified = "other";
      } else if (r < spec.other_rate + spec.ne_rate) {
        const auto& stems = lang == 1 ? spec.lang1_stems : spec.lang2_stems;
        std::string stem = stems[rng.below(stems.size())];
        stem[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(stem[0])));
        tok.surface = stem;
        tok.label = spec.task == Task::LID ? "ne" : "PROPN";
        tok.simplified = "other";
      } else {
        if (seen_language_token && rng.bernoulli(spec.switch_prob)) lang = 3 - lang;
        seen_language_token = true;
        const auto& stems = lang == 1 ? spec.lang1_stems : spec.lang2_stems;
        const auto& suffixes = lang == 1 ? spec.lang1_suffixes : spec.lang2_suffixes;
        tok.surface = stems[rng.below(stems.size())];
        std::string pos = "NOUN";
        if (rng.bernoulli(spec.suffix_prob)) {
          const std::size_t k = rng.below(suffixes.size());
          tok.surface += suffixes[k];
          pos = pos_by_suffix()[k % pos_by_suffix().size()];
        }
        const std::string lang_label = lang == 1 ? "lang1" : "lang2";
        tok.label = spec.task == Task::LID ? lang_label : pos;
        tok.simplified = lang_label;
      }
      s.tokens.push_back(std::move(tok));
    }
    all.push_back(std::move(s));
  }
  Corpus c;
  c.scheme = LabelScheme::builtin(spec.task);
  const std::size_t n = all.size();
  const std::size_t n_train = n * 70 / 100, n_dev = n * 15 / 100;
  c.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  c.dev.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train),
               all.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev));
  c.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train + n_dev), all.end());
  return c;
}

}  // namespace morphtag

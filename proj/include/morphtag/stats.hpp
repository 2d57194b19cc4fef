#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "morphtag/corpus.hpp"
#include "morphtag/metrics.hpp"

namespace morphtag {

struct SplitStats {
  std::size_t sentences = 0;
  std::size_t tokens = 0;
  std::map<std::string, std::size_t> labels;
  std::map<std::string, std::size_t> simplified;
  // Utterance classes; only meaningful when simplified labels are available.
  bool has_language_labels = false;
  std::size_t code_switched = 0, lang1_only = 0, lang2_only = 0, other_only = 0;
  CmiSummary cmi;
};

inline SplitStats split_stats(const Split& split, const LabelScheme& scheme) {
  SplitStats st;
  st.sentences = split.size();
  std::vector<std::vector<std::string>> utterances;
  bool all_have_simplified = !split.empty();
  for (const auto& s : split) {
    std::vector<std::string> simp;
    for (const auto& t : s.tokens) {
      ++st.tokens;
      ++st.labels[t.label];
      if (auto sl = effective_simplified(t, scheme)) {
        ++st.simplified[*sl];
        simp.push_back(*sl);
      }
    }
    if (simp.size() != s.tokens.size()) all_have_simplified = false;
    utterances.push_back(std::move(simp));
  }
  if (!all_have_simplified) return st;
  st.has_language_labels = true;
  for (const auto& u : utterances) {
    bool l1 = false, l2 = false;
    for (const auto& l : u) {
      l1 = l1 || l == "lang1";
      l2 = l2 || l == "lang2";
    }
    if (l1 && l2) ++st.code_switched;
    else if (l1) ++st.lang1_only;
    else if (l2) ++st.lang2_only;
    else ++st.other_only;
  }
  st.cmi = corpus_cmi(utterances);
  return st;
}

inline nlohmann::json to_json(const SplitStats& st) {
  nlohmann::json j{{"sentences", st.sentences}, {"tokens", st.tokens}, {"labels", st.labels}};
  if (!st.simplified.empty()) j["simplified"] = st.simplified;
  if (st.has_language_labels) {
    j["utterances"] = {{"code_switched", st.code_switched},
                       {"lang1_only", st.lang1_only},
                       {"lang2_only", st.lang2_only},
                       {"other_only", st.other_only}};
    j["cmi_all"] = st.cmi.cmi_all;
    j["cmi_mixed"] = st.cmi.cmi_mixed;
  }
  return j;
}

/// Per-split label distributions, utterance classes and CMI.
inline nlohmann::json dataset_stats(const Corpus& corpus) {
  nlohmann::json j;
  j["task"] = std::string(to_string(corpus.task()));
  j["splits"]["train"] = to_json(split_stats(corpus.train, corpus.scheme));
  j["splits"]["dev"] = to_json(split_stats(corpus.dev, corpus.scheme));
  j["splits"]["test"] = to_json(split_stats(corpus.test, corpus.scheme));
  return j;
}

}  // namespace morphtag

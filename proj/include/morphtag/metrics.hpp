#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "morphtag/error.hpp"

namespace morphtag {

struct LabelF1 {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // gold count
};

struct F1Report {
  std::vector<LabelF1> per_label;  // sorted by label
  double weighted_f1 = 0.0;
  double accuracy = 0.0;

  const LabelF1* find(const std::string& label) const {
    for (const auto& l : per_label)
      if (l.label == label) return &l;
    return nullptr;
  }
};

inline double harmonic_f1(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// Per-label precision/recall/F1 over every label seen in gold or pred, and
/// their average weighted by gold support.
inline F1Report f1_report(std::span<const std::string> gold, std::span<const std::string> pred) {
  if (gold.size() != pred.size())
    throw InputError("metrics: gold has " + std::to_string(gold.size()) + " labels, prediction " +
                     std::to_string(pred.size()));
  std::map<std::string, std::size_t> tp, gold_n, pred_n;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    ++gold_n[gold[i]];
    ++pred_n[pred[i]];
    if (gold[i] == pred[i]) {
      ++tp[gold[i]];
      ++correct;
    }
  }
  std::set<std::string> labels;
  for (const auto& [l, n] : gold_n) labels.insert(l);
  for (const auto& [l, n] : pred_n) labels.insert(l);
  F1Report r;
  double weighted = 0.0;
  for (const auto& l : labels) {
    LabelF1 e;
    e.label = l;
    e.support = gold_n[l];
    const double t = static_cast<double>(tp[l]);
    e.precision = pred_n[l] ? t / static_cast<double>(pred_n[l]) : 0.0;
    e.recall = gold_n[l] ? t / static_cast<double>(gold_n[l]) : 0.0;
    e.f1 = harmonic_f1(e.precision, e.recall);
    weighted += e.f1 * static_cast<double>(e.support);
    r.per_label.push_back(e);
  }
  if (!gold.empty()) {
    r.weighted_f1 = weighted / static_cast<double>(gold.size());
    r.accuracy = static_cast<double>(correct) / static_cast<double>(gold.size());
  }
  return r;
}

inline double weighted_f1(std::span<const std::string> gold, std::span<const std::string> pred) {
  return f1_report(gold, pred).weighted_f1;
}

/// F1 of lang1 and lang2 averaged with their gold supports as weights.
inline double wa_f1(double lang1_f1, double lang2_f1, std::size_t lang1_support,
                    std::size_t lang2_support) {
  const double total = static_cast<double>(lang1_support + lang2_support);
  if (total == 0.0) return 0.0;
  return (lang1_f1 * static_cast<double>(lang1_support) +
          lang2_f1 * static_cast<double>(lang2_support)) /
         total;
}

inline double wa_f1(const F1Report& r) {
  const LabelF1* l1 = r.find("lang1");
  const LabelF1* l2 = r.find("lang2");
  return wa_f1(l1 ? l1->f1 : 0.0, l2 ? l2->f1 : 0.0, l1 ? l1->support : 0, l2 ? l2->support : 0);
}

// ---- entity-level F1 over BIO spans ----

using Span = std::tuple<std::size_t, std::size_t, std::string>;  // [begin, end), type

/// Spans of one BIO-tagged sentence. An I-X that does not continue an open X
/// span starts a new one.
inline std::vector<Span> bio_spans(std::span<const std::string> tags) {
  std::vector<Span> spans;
  std::size_t begin = 0;
  std::string type;
  auto close = [&](std::size_t end) {
    if (!type.empty()) spans.emplace_back(begin, end, type);
    type.clear();
  };
  for (std::size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (t.rfind("B-", 0) == 0) {
      close(i);
      begin = i;
      type = t.substr(2);
    } else if (t.rfind("I-", 0) == 0) {
      if (type != t.substr(2)) {
        close(i);
        begin = i;
        type = t.substr(2);
      }
    } else {
      close(i);
    }
  }
  close(tags.size());
  return spans;
}

struct EntityScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::size_t gold = 0, predicted = 0, correct = 0;
};

/// Exact-match entity F1 accumulated over sentences.
inline EntityScore entity_f1(const std::vector<std::vector<std::string>>& gold,
                             const std::vector<std::vector<std::string>>& pred) {
  if (gold.size() != pred.size()) throw InputError("entity_f1: sentence count mismatch");
  EntityScore s;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i].size() != pred[i].size()) throw InputError("entity_f1: sentence length mismatch");
    const auto g = bio_spans(gold[i]);
    const auto p = bio_spans(pred[i]);
    const std::set<Span> gs(g.begin(), g.end());
    s.gold += g.size();
    s.predicted += p.size();
    for (const auto& sp : p) s.correct += gs.count(sp);
  }
  s.precision = s.predicted ? static_cast<double>(s.correct) / static_cast<double>(s.predicted) : 0.0;
  s.recall = s.gold ? static_cast<double>(s.correct) / static_cast<double>(s.gold) : 0.0;
  s.f1 = harmonic_f1(s.precision, s.recall);
  return s;
}

// ---- code-mixing index ----

/// CMI of one utterance given simplified labels: 100·(1 − max_lang / (N − U)),
/// 0 when every token is `other`.
inline double compute_cmi(std::span<const std::string> simplified) {
  if (simplified.empty()) throw InputError("compute_cmi: empty sentence");
  std::size_t lang1 = 0, lang2 = 0, other = 0;
  for (const auto& l : simplified) {
    if (l == "lang1") ++lang1;
    else if (l == "lang2") ++lang2;
    else if (l == "other") ++other;
    else throw SchemeError("compute_cmi: '" + l + "' is not a simplified LID label");
  }
  const std::size_t n = simplified.size();
  if (n == other) return 0.0;
  const double m = static_cast<double>(std::max(lang1, lang2));
  return 100.0 * (1.0 - m / static_cast<double>(n - other));
}

inline bool is_code_switched(std::span<const std::string> simplified) {
  bool l1 = false, l2 = false;
  for (const auto& l : simplified) {
    l1 = l1 || l == "lang1";
    l2 = l2 || l == "lang2";
  }
  return l1 && l2;
}

struct CmiSummary {
  double cmi_all = 0.0;
  double cmi_mixed = 0.0;
  std::size_t utterances = 0;
  std::size_t mixed_utterances = 0;
};

inline CmiSummary corpus_cmi(const std::vector<std::vector<std::string>>& utterances) {
  CmiSummary s;
  double all = 0.0, mixed = 0.0;
  for (const auto& u : utterances) {
    const double c = compute_cmi(u);
    all += c;
    ++s.utterances;
    if (is_code_switched(u)) {
      mixed += c;
      ++s.mixed_utterances;
    }
  }
  if (s.utterances) s.cmi_all = all / static_cast<double>(s.utterances);
  if (s.mixed_utterances) s.cmi_mixed = mixed / static_cast<double>(s.mixed_utterances);
  return s;
}

}  // namespace morphtag

#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "morphtag/error.hpp"

namespace morphtag {

enum class Task { LID, POS, NER };

inline std::string_view to_string(Task t) {
  switch (t) {
    case Task::LID: return "lid";
    case Task::POS: return "pos";
    case Task::NER: return "ner";
  }
  return "?";
}

inline Task parse_task(std::string_view s) {
  if (s == "lid") return Task::LID;
  if (s == "pos") return Task::POS;
  if (s == "ner") return Task::NER;
  throw ConfigError("unknown task '" + std::string(s) + "' (expected lid, pos or ner)");
}

inline const std::array<std::string, 8>& calcs_labels() {
  static const std::array<std::string, 8> labels{"lang1", "lang2", "ne",  "mixed",
                                                 "ambiguous", "fw", "other", "unk"};
  return labels;
}

inline const std::array<std::string, 3>& simplified_labels() {
  static const std::array<std::string, 3> labels{"lang1", "lang2", "other"};
  return labels;
}

inline bool is_simplified_label(std::string_view s) {
  const auto& l = simplified_labels();
  return std::find(l.begin(), l.end(), s) != l.end();
}

/// Maps a CALCS label onto {lang1, lang2, other}.
inline std::string simplify(std::string_view label) {
  if (label == "lang1" || label == "lang2") return std::string(label);
  const auto& all = calcs_labels();
  if (std::find(all.begin(), all.end(), label) != all.end()) return "other";
  throw SchemeError("'" + std::string(label) + "' is not a CALCS LID label");
}

inline int simplified_index(std::string_view s) {
  const auto& l = simplified_labels();
  auto it = std::find(l.begin(), l.end(), s);
  if (it == l.end()) throw SchemeError("'" + std::string(s) + "' is not a simplified LID label");
  return static_cast<int>(it - l.begin());
}

class LabelScheme {
 public:
  LabelScheme() = default;
  LabelScheme(Task task, std::vector<std::string> labels) : task_(task), labels_(std::move(labels)) {
    if (labels_.empty()) throw SchemeError("label scheme has no labels");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i].empty()) throw SchemeError("empty label in scheme");
      if (!index_.emplace(labels_[i], static_cast<int>(i)).second)
        throw SchemeError("duplicate label '" + labels_[i] + "' in scheme");
    }
  }

  static LabelScheme lid() {
    const auto& l = calcs_labels();
    return LabelScheme(Task::LID, std::vector<std::string>(l.begin(), l.end()));
  }

  /// Universal POS tags plus the CONJ, PART_NEG and PRON_WH tags found in
  /// code-switched treebanks.
  static LabelScheme pos() {
    return LabelScheme(Task::POS,
                       {"ADJ", "ADP", "ADV", "AUX", "CCONJ", "CONJ", "DET", "INTJ", "NOUN", "NUM",
                        "PART", "PART_NEG", "PRON", "PRON_WH", "PROPN", "PUNCT", "SCONJ", "SYM",
                        "VERB", "X"});
  }

  static LabelScheme ner() {
    std::vector<std::string> labels{"O"};
    for (const char* type : {"PER", "LOC", "ORG", "GROUP", "TITLE", "PROD", "EVENT", "TIME", "OTHER"}) {
      labels.push_back(std::string("B-") + type);
      labels.push_back(std::string("I-") + type);
    }
    return LabelScheme(Task::NER, std::move(labels));
  }

  static LabelScheme builtin(Task task) {
    switch (task) {
      case Task::LID: return lid();
      case Task::POS: return pos();
      case Task::NER: return ner();
    }
    return lid();
  }

  /// One label per line; blank lines and '#' comments ignored.
  static LabelScheme from_file(const std::string& path, Task task) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open scheme file " + path);
    std::vector<std::string> labels;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
        line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      labels.push_back(line);
    }
    return LabelScheme(task, std::move(labels));
  }

  Task task() const noexcept { return task_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool contains(std::string_view l) const { return index_.count(std::string(l)) > 0; }

  int index(std::string_view l) const {
    auto it = index_.find(std::string(l));
    if (it == index_.end())
      throw SchemeError("label '" + std::string(l) + "' is not in the " +
                        std::string(to_string(task_)) + " scheme");
    return it->second;
  }

  const std::string& label(int i) const { return labels_.at(static_cast<std::size_t>(i)); }

  /// The simplified LID label of a primary label, when the scheme defines one.
  std::optional<std::string> simplified(std::string_view l) const {
    if (task_ != Task::LID) return std::nullopt;
    return simplify(l);
  }

  friend bool operator==(const LabelScheme& a, const LabelScheme& b) {
    return a.task_ == b.task_ && a.labels_ == b.labels_;
  }

 private:
  Task task_ = Task::LID;
  std::vector<std::string> labels_;
  std::map<std::string, int> index_;
};

}  // namespace morphtag

#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "morphtag/error.hpp"
#include "morphtag/labels.hpp"
#include "morphtag/rng.hpp"
#include "morphtag/unicode.hpp"

namespace morphtag {

struct Token {
  std::string surface;
  std::string label;
  std::optional<std::string> simplified;

  friend bool operator==(const Token&, const Token&) = default;
};

struct Sentence {
  std::vector<Token> tokens;

  std::size_t size() const noexcept { return tokens.size(); }
  friend bool operator==(const Sentence&, const Sentence&) = default;
};

using Split = std::vector<Sentence>;

struct Corpus {
  LabelScheme scheme;
  Split train, dev, test;

  Task task() const { return scheme.task(); }
};

/// Explicit simplified label, else the one derived from the scheme.
inline std::optional<std::string> effective_simplified(const Token& t, const LabelScheme& scheme) {
  if (t.simplified) return t.simplified;
  return scheme.simplified(t.label);
}

inline std::size_t token_count(const Split& split) {
  std::size_t n = 0;
  for (const auto& s : split) n += s.size();
  return n;
}

namespace conll_detail {

inline std::string rstrip(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t' || s.back() == '\n'))
    s.pop_back();
  return s;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

}  // namespace conll_detail

/// Token-per-line reader: `surface TAB label [TAB simplified]`, blank line
/// between sentences. Surfaces are NFC-normalized.
inline Split parse_conll(std::istream& in, const LabelScheme& scheme) {
  Split split;
  Sentence current;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = conll_detail::rstrip(raw);
    if (line.empty()) {
      if (!current.tokens.empty()) split.push_back(std::move(current));
      current = Sentence{};
      continue;
    }
    const auto cols = conll_detail::split_tabs(line);
    if (cols.size() < 2 || cols.size() > 3)
      throw ParseError("expected 'token<TAB>label[<TAB>simplified]', got " +
                           std::to_string(cols.size()) + " column(s)",
                       line_no);
    if (cols[0].empty()) throw ParseError("empty token", line_no);
    if (cols[1].empty()) throw ParseError("empty label", line_no);
    if (!scheme.contains(cols[1]))
      throw SchemeError("line " + std::to_string(line_no) + ": unknown label '" + cols[1] +
                        "' for the " + std::string(to_string(scheme.task())) + " scheme");
    Token tok{unicode::nfc(cols[0]), cols[1], std::nullopt};
    if (cols.size() == 3) {
      if (!is_simplified_label(cols[2]))
        throw SchemeError("line " + std::to_string(line_no) + ": unknown simplified label '" +
                          cols[2] + "'");
      tok.simplified = cols[2];
    }
    current.tokens.push_back(std::move(tok));
  }
  if (!current.tokens.empty()) split.push_back(std::move(current));
  return split;
}

inline Split parse_conll_string(std::string_view text, const LabelScheme& scheme) {
  std::istringstream in{std::string(text)};
  return parse_conll(in, scheme);
}

inline Split parse_conll_file(const std::string& path, const LabelScheme& scheme) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus file " + path);
  return parse_conll(in, scheme);
}

/// Reads tokens from the first column of a token-per-line file; any further
/// columns are ignored. Used for tagging unlabeled text.
inline std::vector<std::vector<std::string>> read_token_lines(std::istream& in) {
  std::vector<std::vector<std::string>> out;
  std::vector<std::string> current;
  std::string raw;
  while (std::getline(in, raw)) {
    const std::string line = conll_detail::rstrip(raw);
    if (line.empty()) {
      if (!current.empty()) out.push_back(std::move(current));
      current.clear();
      continue;
    }
    current.push_back(unicode::nfc(conll_detail::split_tabs(line)[0]));
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

inline std::string serialize_conll(const Split& split) {
  std::string out;
  for (const auto& s : split) {
    for (const auto& t : s.tokens) {
      out += t.surface;
      out += '\t';
      out += t.label;
      if (t.simplified) {
        out += '\t';
        out += *t.simplified;
      }
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

/// Canonical text form: NFC, no CR or trailing blanks, exactly one blank
/// line after each sentence, no leading blank lines.
inline std::string normalize_conll(std::string_view text) {
  std::istringstream in{unicode::nfc(text)};
  std::string raw, out;
  bool in_sentence = false;
  while (std::getline(in, raw)) {
    const std::string line = conll_detail::rstrip(raw);
    if (line.empty()) {
      if (in_sentence) out += '\n';
      in_sentence = false;
      continue;
    }
    out += line;
    out += '\n';
    in_sentence = true;
  }
  if (in_sentence) out += '\n';
  return out;
}

inline void write_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

/// Checks every label of a split against the scheme.
inline void validate_split(const Split& split, const LabelScheme& scheme) {
  for (const auto& s : split)
    for (const auto& t : s.tokens) {
      if (t.surface.empty()) throw InputError("empty token surface");
      scheme.index(t.label);
    }
}

// ---- BIO helpers ----

/// Number of I-X tags that do not continue a B-X or I-X of the same type.
inline std::size_t bio_violations(const Split& split) {
  std::size_t n = 0;
  for (const auto& s : split) {
    std::string prev = "O";
    for (const auto& t : s.tokens) {
      if (t.label.rfind("I-", 0) == 0) {
        const std::string type = t.label.substr(2);
        if (prev != "B-" + type && prev != "I-" + type) ++n;
      }
      prev = t.label;
    }
  }
  return n;
}

/// Rewrites orphan I-X tags as B-X.
inline std::size_t repair_bio(Split& split) {
  std::size_t n = 0;
  for (auto& s : split) {
    std::string prev = "O";
    for (auto& t : s.tokens) {
      if (t.label.rfind("I-", 0) == 0) {
        const std::string type = t.label.substr(2);
        if (prev != "B-" + type && prev != "I-" + type) {
          t.label = "B-" + type;
          ++n;
        }
      }
      prev = t.label;
    }
  }
  return n;
}

/// Deterministic k-fold partition of sentences: returns (train, held-out)
/// for fold `fold` after a seeded shuffle.
inline std::pair<Split, Split> kfold_split(const Split& all, std::size_t k, std::size_t fold,
                                           std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  if (fold >= k) throw ConfigError("fold index out of range");
  std::vector<std::size_t> order(all.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::pair<Split, Split> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i % k == fold ? out.second : out.first).push_back(all[order[i]]);
  }
  return out;
}

}  // namespace morphtag

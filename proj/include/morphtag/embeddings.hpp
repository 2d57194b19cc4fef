#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "morphtag/error.hpp"

namespace morphtag {

/// Static word vectors. Lookups of absent words yield nullptr; callers treat
/// that as a zero vector.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Returns true when an existing entry was replaced.
  bool set(const std::string& word, std::vector<double> vec) {
    if (vec.size() != dim_)
      throw DimensionError("embedding for '" + word + "' has " + std::to_string(vec.size()) +
                           " values, table dim is " + std::to_string(dim_));
    auto [it, inserted] = entries_.insert_or_assign(word, std::move(vec));
    return !inserted;
  }

  const std::vector<double>* find(const std::string& word) const {
    auto it = entries_.find(word);
    return it == entries_.end() ? nullptr : &it->second;
  }

  const std::map<std::string, std::vector<double>>& entries() const noexcept { return entries_; }

  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, std::vector<double>> entries_;
};

struct LoadedEmbeddings {
  EmbeddingTable table;
  std::size_t duplicates = 0;
};

/// Text format: `word v1 v2 ... vd` per line. A leading `count dim` header
/// line (fastText .vec) is accepted and skipped. Duplicate words: last wins.
inline LoadedEmbeddings load_embeddings(std::istream& in) {
  LoadedEmbeddings out;
  std::string line;
  std::size_t line_no = 0;
  bool have_dim = false;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string word;
    fields >> word;
    std::vector<double> vec;
    std::string tok;
    while (fields >> tok) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError("invalid number '" + tok + "'", line_no);
      vec.push_back(v);
    }
    if (line_no == 1 && vec.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos)
      continue;  // fastText header
    if (vec.empty()) throw ParseError("word without vector", line_no);
    if (!have_dim) {
      out.table = EmbeddingTable(vec.size());
      have_dim = true;
    } else if (vec.size() != out.table.dim()) {
      throw ParseError("vector has " + std::to_string(vec.size()) + " values, expected " +
                           std::to_string(out.table.dim()),
                       line_no);
    }
    if (out.table.set(word, std::move(vec))) ++out.duplicates;
  }
  return out;
}

inline LoadedEmbeddings load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embeddings file " + path);
  return load_embeddings(in);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string serialize_embeddings(const EmbeddingTable& table) {
  std::string out;
  for (const auto& [word, vec] : table.entries()) {
    out += word;
    for (double v : vec) {
      out += ' ';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

}  // namespace morphtag

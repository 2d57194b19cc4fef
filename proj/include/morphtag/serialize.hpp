#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "morphtag/error.hpp"
#include "morphtag/tensor.hpp"

// morphtag-v1 container:
//
//   morphtag-v1
//   config_digest <16 hex digits>
//   meta <byte count>
//   <single-line JSON metadata>
//   entries <count>
//   <name> <rank> <dim>...          (one line per entry)
//   payload
//   <little-endian float64 values of every entry, in order>

namespace morphtag {

inline constexpr std::string_view kFormatVersion = "morphtag-v1";

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct Checkpoint {
  nlohmann::json meta;  // must hold a "config" object; the digest covers it
  std::vector<std::pair<std::string, Tensor>> entries;

  std::string config_digest() const { return hex64(fnv1a64(meta.at("config").dump())); }

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : entries)
      if (n == name) return &t;
    return nullptr;
  }
};

inline std::string write_checkpoint(const Checkpoint& ck) {
  std::string out;
  out += kFormatVersion;
  out += "\nconfig_digest " + ck.config_digest() + "\n";
  const std::string meta = ck.meta.dump();
  out += "meta " + std::to_string(meta.size()) + "\n" + meta + "\n";
  out += "entries " + std::to_string(ck.entries.size()) + "\n";
  for (const auto& [name, t] : ck.entries) {
    if (name.empty() || name.find_first_of(" \n\t") != std::string::npos)
      throw InputError("checkpoint entry name '" + name + "' must be non-empty without whitespace");
    out += name + " " + std::to_string(t.rank());
    for (std::size_t d : t.shape()) out += " " + std::to_string(d);
    out += "\n";
  }
  out += "payload\n";
  for (const auto& [name, t] : ck.entries) {
    for (double v : t.values()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int b = 0; b < 8; ++b) out += static_cast<char>((bits >> (8 * b)) & 0xFF);
    }
  }
  return out;
}

inline Checkpoint read_checkpoint(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const std::size_t nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) throw LoadError("truncated checkpoint header");
    std::string line(bytes.substr(pos, nl - pos));
    pos = nl + 1;
    return line;
  };
  if (next_line() != kFormatVersion) throw LoadError("not a morphtag-v1 checkpoint");
  std::string digest_line = next_line();
  if (digest_line.rfind("config_digest ", 0) != 0) throw LoadError("missing config digest");
  const std::string digest = digest_line.substr(14);
  std::string meta_line = next_line();
  if (meta_line.rfind("meta ", 0) != 0) throw LoadError("missing metadata");
  const std::size_t meta_len = std::stoull(meta_line.substr(5));
  if (pos + meta_len + 1 > bytes.size()) throw LoadError("truncated metadata");
  Checkpoint ck;
  try {
    ck.meta = nlohmann::json::parse(bytes.substr(pos, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("corrupt metadata: ") + e.what());
  }
  pos += meta_len + 1;
  if (!ck.meta.contains("config")) throw LoadError("metadata lacks config");
  if (ck.config_digest() != digest) throw LoadError("config digest mismatch");
  std::string entries_line = next_line();
  if (entries_line.rfind("entries ", 0) != 0) throw LoadError("missing entry table");
  const std::size_t n = std::stoull(entries_line.substr(8));
  std::vector<std::pair<std::string, Tensor::Shape>> table;
  for (std::size_t i = 0; i < n; ++i) {
    std::istringstream ls(next_line());
    std::string name;
    std::size_t rank = 0;
    ls >> name >> rank;
    Tensor::Shape shape(rank);
    for (auto& d : shape) ls >> d;
    if (!ls) throw LoadError("malformed entry line for '" + name + "'");
    table.emplace_back(name, shape);
  }
  if (next_line() != "payload") throw LoadError("missing payload marker");
  for (auto& [name, shape] : table) {
    Tensor t(shape);
    if (pos + 8 * t.size() > bytes.size()) throw LoadError("truncated payload at '" + name + "'");
    for (double& v : t.values()) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + b])) << (8 * b);
      v = std::bit_cast<double>(bits);
      pos += 8;
    }
    ck.entries.emplace_back(name, std::move(t));
  }
  if (pos != bytes.size()) throw LoadError("trailing bytes after payload");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string bytes = write_checkpoint(ck);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_checkpoint(ss.str());
}

}  // namespace morphtag

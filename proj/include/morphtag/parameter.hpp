#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "morphtag/error.hpp"
#include "morphtag/rng.hpp"
#include "morphtag/tensor.hpp"

namespace morphtag {

/// Unfreeze groups, top of the network first.
enum class Group {
  NonCore,
  BiLstm2,
  BiLstm1,
  Highway,
  Projection,
  Convolutions,
  CharEmbeddings,
};

inline constexpr std::array<Group, 7> kAllGroups = {
    Group::NonCore,    Group::BiLstm2,      Group::BiLstm1,       Group::Highway,
    Group::Projection, Group::Convolutions, Group::CharEmbeddings,
};

inline constexpr std::string_view group_name(Group g) {
  switch (g) {
    case Group::NonCore: return "non_core";
    case Group::BiLstm2: return "bilstm2";
    case Group::BiLstm1: return "bilstm1";
    case Group::Highway: return "highway";
    case Group::Projection: return "projection";
    case Group::Convolutions: return "convolutions";
    case Group::CharEmbeddings: return "char_embeddings";
  }
  return "?";
}

inline Group parse_group(std::string_view name) {
  for (Group g : kAllGroups)
    if (group_name(g) == name) return g;
  throw ConfigError("unknown parameter group '" + std::string(name) + "'");
}

inline std::size_t group_index(Group g) { return static_cast<std::size_t>(g); }

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;
  Group group = Group::NonCore;
  bool crf = false;  // excluded from L2 when requested
};

/// Owns every parameter of a model. Addresses are stable for the lifetime of
/// the store, so layers keep raw pointers into it.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter& add(std::string name, Tensor::Shape shape, Group group, bool crf = false) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    Tensor value(shape);
    Tensor grad(std::move(shape));
    params_.push_back(Parameter{name, std::move(value), std::move(grad), true, group, crf});
    index_[name] = params_.size() - 1;
    return params_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
    return params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
    return params_[it->second];
  }
  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  std::deque<Parameter>& all() noexcept { return params_; }
  const std::deque<Parameter>& all() const noexcept { return params_; }
  std::size_t size() const noexcept { return params_.size(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.fill(0.0);
  }

  /// Frozen parameters must never carry gradient into an optimizer step.
  void clear_frozen_grads() {
    for (auto& p : params_)
      if (!p.trainable) p.grad.fill(0.0);
  }

  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  void restore(const std::vector<Tensor>& values) {
    if (values.size() != params_.size()) throw DimensionError("snapshot size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!values[i].same_shape(params_[i].value))
        throw DimensionError("snapshot shape mismatch for " + params_[i].name);
      params_[i].value = values[i];
    }
  }

  std::size_t count_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

// ---- initializers ----

inline void init_uniform(Tensor& t, Rng& rng, double bound) {
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
}

/// Glorot-uniform on a [fan_out x fan_in] matrix.
inline void init_glorot(Tensor& t, Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  init_uniform(t, rng, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

}  // namespace morphtag

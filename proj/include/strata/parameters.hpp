#pragma once

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "strata/autodiff.hpp"

namespace strata {

/// Ordered collection of named trainable tensors.
class Parameters {
 public:
  std::size_t add(std::string name, Tensor value) {
    if (lookup_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    lookup_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return names_.size() - 1;
  }

  bool contains(std::string_view name) const { return lookup_.find(std::string(name)) != lookup_.end(); }

  std::size_t index(std::string_view name) const {
    auto it = lookup_.find(std::string(name));
    if (it == lookup_.end()) throw std::out_of_range("no parameter named '" + std::string(name) + "'");
    return it->second;
  }

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Tensor& operator[](std::size_t i) { return values_.at(i); }
  const Tensor& operator[](std::size_t i) const { return values_.at(i); }
  Tensor& operator[](std::string_view n) { return values_.at(index(n)); }
  const Tensor& operator[](std::string_view n) const { return values_.at(index(n)); }

  /// Total scalar count.
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  std::size_t count_with_prefix(std::string_view prefix) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (std::string_view(names_[i]).substr(0, prefix.size()) == prefix) n += values_[i].size();
    }
    return n;
  }

  /// Places every tensor on the graph, as parameters or as constants.
  std::vector<ad::Var> bind(ad::Graph& g, bool trainable) const {
    std::vector<ad::Var> out;
    out.reserve(values_.size());
    for (const auto& v : values_) out.push_back(trainable ? g.parameter(v) : g.constant(v));
    return out;
  }

  bool operator==(const Parameters& other) const {
    return names_ == other.names_ && values_ == other.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::map<std::string, std::size_t, std::less<>> lookup_;
};

/// Parameters placed on one graph, addressable by name.
class BoundParameters {
 public:
  BoundParameters(const Parameters& params, ad::Graph& g, bool trainable)
      : params_(&params), vars_(params.bind(g, trainable)) {}

  const ad::Var& operator[](std::string_view name) const { return vars_[params_->index(name)]; }
  const ad::Var& at(std::size_t i) const { return vars_.at(i); }
  bool contains(std::string_view name) const { return params_->contains(name); }
  std::size_t size() const { return vars_.size(); }

 private:
  const Parameters* params_;
  std::vector<ad::Var> vars_;
};

inline Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

inline Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace strata

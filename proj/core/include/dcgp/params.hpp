#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dcgp/matrix.hpp"

namespace dcgp {

struct NamedTensor {
  std::string name;
  DenseMatrix value;
};

// Ordered collection of named tensors. Iteration order is insertion order,
// which fixes the parameter layout for gradients, Adam state and checkpoints.
class ParamSet {
public:
  void insert(std::string name, DenseMatrix value);
  bool contains(const std::string &name) const { return index_.count(name) > 0; }
  DenseMatrix &at(const std::string &name);
  const DenseMatrix &at(const std::string &name) const;

  std::size_t size() const { return tensors_.size(); }
  const NamedTensor &operator[](std::size_t i) const { return tensors_[i]; }
  NamedTensor &operator[](std::size_t i) { return tensors_[i]; }

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  // Same names and shapes, all entries zero.
  ParamSet zeros_like() const;
  bool all_finite() const;

private:
  std::vector<NamedTensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

using GradSet = ParamSet;

}  // namespace dcgp

#include "dcgp/params.hpp"

#include <utility>

#include "dcgp/errors.hpp"

namespace dcgp {

void ParamSet::insert(std::string name, DenseMatrix value) {
  if (contains(name)) {
    throw ConfigError("ParamSet: duplicate tensor name " + name);
  }
  index_.emplace(name, tensors_.size());
  tensors_.push_back(NamedTensor{std::move(name), std::move(value)});
}

DenseMatrix &ParamSet::at(const std::string &name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("ParamSet: unknown tensor " + name);
  return tensors_[it->second].value;
}

const DenseMatrix &ParamSet::at(const std::string &name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("ParamSet: unknown tensor " + name);
  return tensors_[it->second].value;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto &t : tensors_) {
    out.insert(t.name, DenseMatrix(t.value.rows(), t.value.cols()));
  }
  return out;
}

bool ParamSet::all_finite() const {
  for (const auto &t : tensors_) {
    if (!t.value.all_finite()) return false;
  }
  return true;
}

}  // namespace dcgp

#include "dcgp/grad.hpp"

#include <algorithm>
#include <cmath>

#include "dcgp/errors.hpp"

namespace dcgp {

namespace {

std::vector<Var> register_params(Tape &tape, const ParamSet &params) {
  std::vector<Var> vars;
  vars.reserve(params.size());
  for (const auto &t : params) vars.push_back(tape.param(t.value));
  return vars;
}

}  // namespace

GradientResult gradient(const TapeObjective &objective, const ParamSet &params,
                        std::uint64_t seed) {
  Tape tape;
  std::vector<Var> vars = register_params(tape, params);
  Var root = objective(tape, vars, seed);
  const double value = tape.value(root).flat(0);
  if (!std::isfinite(value)) {
    throw NonFiniteGradient("gradient: objective not finite at params");
  }
  tape.backward(root);

  GradientResult result;
  result.value = value;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const DenseMatrix &g = tape.grad(vars[i]);
    DenseMatrix tensor = g.empty()
        ? DenseMatrix(params[i].value.rows(), params[i].value.cols())
        : g;
    if (!tensor.all_finite()) {
      throw NonFiniteGradient("gradient: non-finite gradient for tensor " +
                              params[i].name);
    }
    result.grads.insert(params[i].name, std::move(tensor));
  }
  return result;
}

double evaluate(const TapeObjective &objective, const ParamSet &params,
                std::uint64_t seed) {
  Tape tape;
  std::vector<Var> vars = register_params(tape, params);
  Var root = objective(tape, vars, seed);
  return tape.value(root).flat(0);
}

FdReport fd_check(const TapeObjective &objective, const ParamSet &params,
                  std::uint64_t seed, double step, double tolerance) {
  GradientResult ad = gradient(objective, params, seed);

  FdReport report;
  ParamSet work;
  for (const auto &t : params) work.insert(t.name, t.value);

  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string &name = params[i].name;
    DenseMatrix &tensor = work.at(name);
    const DenseMatrix &adg = ad.grads.at(name);
    FdTensorReport tr;
    tr.name = name;
    for (std::size_t k = 0; k < tensor.size(); ++k) {
      const double saved = tensor.flat(k);
      tensor.flat(k) = saved + step;
      const double fp = evaluate(objective, work, seed);
      tensor.flat(k) = saved - step;
      const double fm = evaluate(objective, work, seed);
      tensor.flat(k) = saved;
      const double fd = (fp - fm) / (2.0 * step);
      const double a = adg.flat(k);
      const double abs_err = std::abs(a - fd);
      const double rel_err = abs_err / std::max({std::abs(fd), std::abs(a), 1e-6});
      tr.max_abs_error = std::max(tr.max_abs_error, abs_err);
      tr.max_rel_error = std::max(tr.max_rel_error, rel_err);
    }
    tr.flagged = tr.max_rel_error > tolerance;
    report.max_rel_error = std::max(report.max_rel_error, tr.max_rel_error);
    report.all_passed = report.all_passed && !tr.flagged;
    report.tensors.push_back(std::move(tr));
  }
  return report;
}

}  // namespace dcgp

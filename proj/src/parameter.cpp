#include "parameter.hpp"

#include <cmath>

#include "error.hpp"

namespace retriever {

void Parameter::accumulate_grad(std::span<const double> g) {
  if (g.size() != value.size()) {
    fail(ErrorCode::kShape, "grad for '" + name + "' has " + std::to_string(g.size()) +
                                " values, parameter has " + std::to_string(value.size()));
  }
  if (!has_grad || grad.shape() != value.shape()) {
    grad = Tensor(value.shape(), 0.0);
  }
  for (size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  has_grad = true;
}

void Parameter::clear_grad() {
  has_grad = false;
  grad = Tensor();
}

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  if (find(name)) fail(ErrorCode::kInvalidArgument, "duplicate parameter name '" + name + "'");
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(init);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return p.get();
  }
  return nullptr;
}

Parameter& ParameterStore::get(const std::string& name) {
  Parameter* p = find(name);
  if (!p) fail(ErrorCode::kInvalidArgument, "no parameter named '" + name + "'");
  return *p;
}

size_t ParameterStore::scalar_count() const {
  size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::clear_grads() {
  for (auto& p : params_) p->clear_grad();
}

void adam_step(std::span<Parameter* const> params, const AdamOptions& opts) {
  for (Parameter* p : params) {
    if (!p->has_grad) fail(ErrorCode::kState, "adam_step: parameter '" + p->name + "' has no gradient");
  }
  for (Parameter* p : params) {
    if (p->adam_m.shape() != p->value.shape()) {
      p->adam_m = Tensor(p->value.shape(), 0.0);
      p->adam_v = Tensor(p->value.shape(), 0.0);
    }
    p->step += 1;
    const double t = static_cast<double>(p->step);
    const double c1 = 1.0 - std::pow(opts.beta1, t);
    const double c2 = 1.0 - std::pow(opts.beta2, t);
    auto w = p->value.data();
    auto g = p->grad.data();
    auto m = p->adam_m.data();
    auto v = p->adam_v.data();
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = opts.beta1 * m[i] + (1.0 - opts.beta1) * g[i];
      v[i] = opts.beta2 * v[i] + (1.0 - opts.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= opts.lr * mhat / (std::sqrt(vhat) + opts.eps);
    }
    p->clear_grad();
  }
}

void adam_step(ParameterStore& params, const AdamOptions& opts) {
  std::vector<Parameter*> all;
  all.reserve(params.size());
  for (auto& p : params) all.push_back(p.get());
  adam_step(all, opts);
}

}  // namespace retriever

#include "grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "error.hpp"

namespace retriever {

namespace {

void check_step(double h) {
  if (!(h >= 1e-6 && h <= 1e-4)) {
    fail(ErrorCode::kInvalidArgument, "grad_check: step " + std::to_string(h) + " outside [1e-6, 1e-4]");
  }
}

double eval_input(const ScalarFn& f, const Tensor& x) {
  Tape tape;
  Var out = f(tape, tape.input(x, false));
  return out.value().item();
}

double eval_params(const ParamScalarFn& f) {
  Tape tape;
  return f(tape).value().item();
}

void fold(GradCheckResult& r, double autograd, double numeric) {
  const double err = std::abs(autograd - numeric) / std::max(1.0, std::abs(numeric));
  if (err >= r.max_rel_error) {
    r.max_rel_error = err;
    r.worst_autograd = autograd;
    r.worst_numeric = numeric;
  }
  ++r.coords_checked;
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double h) {
  check_step(h);
  Tape tape;
  Var in = tape.input(x, true);
  Var out = f(tape, in);
  const double base = out.value().item();
  tape.backward(out);
  const Tensor analytic = tape.grad_tensor(in);
  if (eval_input(f, x) != base) fail(ErrorCode::kState, "grad_check: function is not deterministic");

  GradCheckResult r;
  Tensor probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = eval_input(f, probe);
    probe[i] = x[i] - h;
    const double down = eval_input(f, probe);
    probe[i] = x[i];
    fold(r, analytic[i], (up - down) / (2.0 * h));
  }
  return r;
}

GradCheckResult grad_check_params(const ParamScalarFn& f, const std::vector<ParamCoord>& coords, double h) {
  check_step(h);
  std::set<Parameter*> touched;
  for (const auto& c : coords) {
    c.param->clear_grad();
    touched.insert(c.param);
  }
  double base;
  {
    Tape tape;
    Var out = f(tape);
    base = out.value().item();
    tape.backward(out);
  }
  if (eval_params(f) != base) fail(ErrorCode::kState, "grad_check: function is not deterministic");

  GradCheckResult r;
  for (const auto& c : coords) {
    const double analytic = c.param->has_grad ? c.param->grad[c.index] : 0.0;
    double& w = c.param->value[c.index];
    const double orig = w;
    w = orig + h;
    const double up = eval_params(f);
    w = orig - h;
    const double down = eval_params(f);
    w = orig;
    fold(r, analytic, (up - down) / (2.0 * h));
  }
  for (Parameter* p : touched) p->clear_grad();
  return r;
}

std::vector<ParamCoord> sample_coords(ParameterStore& params, size_t count, Rng& rng) {
  std::vector<ParamCoord> all;
  for (auto& p : params) {
    for (size_t i = 0; i < p->value.size(); ++i) all.push_back({p.get(), i});
  }
  if (count >= all.size()) return all;
  for (size_t i = 0; i < count; ++i) std::swap(all[i], all[i + rng.index(all.size() - i)]);
  all.resize(count);
  return all;
}

}  // namespace retriever

#pragma once

#include <functional>
#include <vector>

#include "autograd.hpp"

namespace retriever {

// Builds a scalar from an input leaf on a fresh tape.
using ScalarFn = std::function<Var(Tape&, Var)>;
// Builds a scalar from whatever parameters it binds on a fresh tape.
using ParamScalarFn = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  size_t coords_checked = 0;
  // Coordinate with the largest error, for diagnostics.
  double worst_autograd = 0.0;
  double worst_numeric = 0.0;
};

// max over coordinates of |autograd - central difference| / max(1, |central|).
// h must lie in [1e-6, 1e-4]; f must be deterministic.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

struct ParamCoord {
  Parameter* param;
  size_t index;
};

GradCheckResult grad_check_params(const ParamScalarFn& f, const std::vector<ParamCoord>& coords,
                                  double h = 1e-5);

// Uniformly samples `count` distinct coordinates across all parameters
// (all of them when the store is smaller).
std::vector<ParamCoord> sample_coords(ParameterStore& params, size_t count, Rng& rng);

}  // namespace retriever

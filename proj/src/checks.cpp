#include "checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "analysis.hpp"
#include "constraints.hpp"
#include "grad_check.hpp"

namespace retriever {

namespace {

CheckValue at_most(const std::string& name, double value, double bound) { return {name, value, bound, value <= bound}; }

}  // namespace

bool all_pass(const std::vector<CheckValue>& values) {
  return std::all_of(values.begin(), values.end(), [](const CheckValue& v) { return v.pass; });
}

std::string check_line(const CheckValue& v) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%s %.6g (bound %.3g) %s", v.name.c_str(), v.value, v.bound, v.pass ? "pass" : "FAIL");
  return buf;
}

Tensor random_input(const RetrieverConfig& c, Rng& rng) {
  const size_t n = c.domain == Domain::kGrid ? c.grid_h * c.grid_w : 32;
  Tensor x({n, c.d_raw});
  for (double& v : x.data()) v = rng.normal();
  return x;
}

std::vector<CheckValue> analytic_loss_checks(size_t entries) {
  const size_t V = entries;
  std::vector<CheckValue> out;
  Tape tape;
  Tensor spread({V, V}, 0.0);
  for (size_t i = 0; i < V; ++i) spread.at(i, i) = 60.0;
  const double uniform = vq_perplexity_loss({tape.constant(spread)}, 1, V).value().item();
  Tensor collapsed({V, V}, 0.0);
  for (size_t i = 0; i < V; ++i) collapsed.at(i, 0) = 60.0;
  const double single = vq_perplexity_loss({tape.constant(collapsed)}, 1, V).value().item();
  out.push_back(at_most("vq_uniform_abs_err", std::abs(uniform - 1.0 / static_cast<double>(V * V)), 1e-12));
  out.push_back(at_most("vq_collapsed_abs_err", std::abs(single - 1.0 / static_cast<double>(V)), 1e-12));

  const double gamma = std::log(static_cast<double>(V));
  Tensor far({2, 2}, 0.0);
  far.at(0, 1) = -1e6;
  far.at(1, 0) = -1e6;
  const double saturated = truncated_neighborhood_ce_log(tape.constant(far), {0, 1}, gamma).sc.value().item();
  out.push_back(at_most("sc_saturation_abs_err", std::abs(saturated - gamma), 1e-9));

  // dL_SC/dL_CE at zero: ratio and autograd derivative on a near-zero L_CE.
  Tape slope_tape;
  Tensor near({2, 2}, 0.0);
  near.at(0, 0) = -1e-7;
  near.at(1, 0) = -1e-7;
  near.at(0, 1) = -1e3;
  near.at(1, 1) = -1e3;
  Var lp = slope_tape.input(near);
  const TruncatedCe t = truncated_neighborhood_ce_log(lp, {0, 0}, gamma);
  out.push_back(at_most("sc_slope_at_zero_abs_err", std::abs(t.sc.value().item() / t.ce.value().item() - 1.0), 1e-9));
  slope_tape.backward(t.sc);
  const Tensor g_sc = slope_tape.grad_tensor(lp);
  Tape ce_tape;
  Var lp2 = ce_tape.input(near);
  ce_tape.backward(truncated_neighborhood_ce_log(lp2, {0, 0}, gamma).ce);
  out.push_back(at_most("sc_grad_matches_ce_at_zero", max_abs_diff(g_sc, ce_tape.grad_tensor(lp2)), 1e-9));

  Tape geo_tape;
  Tensor probs({9, 3}, 0.0);
  for (size_t p = 0; p < 9; ++p) probs.at(p, 0) = 1.0;
  probs.at(4, 0) = 0.0;
  probs.at(4, 1) = 1.0;
  probs.at(0, 0) = 0.0;
  probs.at(0, 2) = 1.0;
  const double geo = geometric_concentration_loss(geo_tape.constant(probs), 3, 3).loss.value().item();
  out.push_back(at_most("geometric_point_mass", std::abs(geo), 1e-9));
  return out;
}

std::vector<CheckValue> pi_checks(const RetrieverModel& model, const std::vector<Tensor>& inputs, size_t trials,
                                  uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (const Tensor& x : inputs) worst = std::max(worst, pi_check(model, x, trials, rng));
  return {at_most("style_pi_max_abs_dev", worst, 1e-9)};
}

std::vector<CheckValue> model_grad_checks(const RetrieverModel& model, const Tensor& input, size_t coords,
                                          uint64_t seed, double tau) {
  // Finite differences perturb parameters in place, so work on a copy.
  RetrieverModel m(model.config(), 0);
  m.restore(model.to_checkpoint(false));
  Rng rng(seed);
  const RetrieverConfig& c = m.config();
  const Tensor noise = sample_gumbel(input.rows(), c.groups * c.entries, rng);
  ForwardOptions o;
  o.mode = QuantMode::kSoft;
  o.noise = NoiseMode::kFrozen;
  o.frozen_noise = &noise;
  o.tau = tau;
  const auto sampled = sample_coords(m.params(), coords, rng);
  const GradCheckResult r = grad_check_params([&](Tape& tape) { return m.loss(tape, {&input}, o).total; }, sampled, 1e-5);
  const size_t want = std::min(coords, m.params().scalar_count());
  return {{"grad_max_rel_err", r.max_rel_error, 1e-5, r.max_rel_error < 1e-5},
          {"grad_coords", static_cast<double>(r.coords_checked), static_cast<double>(want), r.coords_checked >= want}};
}

std::vector<CheckValue> straight_through_checks(size_t d_in, size_t code_dim, size_t groups, size_t entries,
                                                size_t tokens, uint64_t seed) {
  Rng rng(seed);
  ParameterStore store;
  Codebooks cb = Codebooks::create(store, "vq", d_in, code_dim, groups, entries, rng);
  Tensor x({tokens, d_in});
  for (double& v : x.data()) v = rng.normal();
  Tensor upstream({tokens, code_dim});
  for (double& v : upstream.data()) v = rng.normal();
  const Tensor noise = sample_gumbel(tokens, groups * entries, rng);
  auto run = [&](QuantMode mode) {
    store.clear_grads();
    Tape tape;
    QuantizeOptions opts;
    opts.mode = mode;
    opts.tau = 0.7;
    opts.noise = NoiseMode::kFrozen;
    opts.frozen_noise = &noise;
    Var in = tape.input(x);
    CodeAssignment ca = product_quantize(tape, in, cb, opts);
    tape.backward(sum_all(mul(ca.quantized, tape.constant(upstream))));
    return std::vector<Tensor>{tape.grad_tensor(in), cb.proj_w->grad, cb.proj_b->grad};
  };
  const std::vector<Tensor> hard = run(QuantMode::kHard);
  const std::vector<Tensor> soft = run(QuantMode::kSoft);
  double worst = 0.0;
  for (size_t i = 0; i < hard.size(); ++i) worst = std::max(worst, max_abs_diff(hard[i], soft[i]));
  return {at_most("straight_through_max_abs_diff", worst, 1e-12)};
}

}  // namespace retriever

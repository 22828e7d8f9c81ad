#pragma once

#include <string>
#include <vector>

#include "model.hpp"

namespace retriever {

struct CheckValue {
  std::string name;
  double value = 0.0;
  double bound = 0.0;
  bool pass = false;
};

bool all_pass(const std::vector<CheckValue>& values);
std::string check_line(const CheckValue& v);

// Standard-normal raw input shaped for the config (32 tokens for sequences).
Tensor random_input(const RetrieverConfig& c, Rng& rng);

// L_VQ at uniform and collapsed usage, L_SC ceiling and slope at zero, and the
// geometric loss of point-mass parts against their closed forms.
std::vector<CheckValue> analytic_loss_checks(size_t entries = 16);

// Style-encoder deviation under token permutations for each input.
std::vector<CheckValue> pi_checks(const RetrieverModel& model, const std::vector<Tensor>& inputs, size_t trials,
                                  uint64_t seed);

// Full-model loss gradient against central differences on `coords` sampled
// parameters: soft quantization, frozen Gumbel noise, dropout off.
std::vector<CheckValue> model_grad_checks(const RetrieverModel& model, const Tensor& input, size_t coords,
                                          uint64_t seed, double tau = 1.0);

// Hard (straight-through) versus soft backward of the product quantizer under
// frozen noise, for inputs and projection weights.
std::vector<CheckValue> straight_through_checks(size_t d_in, size_t code_dim, size_t groups, size_t entries,
                                                size_t tokens, uint64_t seed);

}  // namespace retriever

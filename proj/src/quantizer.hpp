#pragma once

#include <string>
#include <vector>

#include "autograd.hpp"

namespace retriever {

// Gumbel temperature: max(tau_min, tau_init * decay^step).
struct AnnealSchedule {
  double tau_init = 2.0;
  double tau_min = 0.01;
  double decay = 0.9996;

  double at(uint64_t step) const;
};

// Product quantizer: a linear map from token features to G x V logits and G
// codebooks of V entries, each entry d_c / G wide.
struct Codebooks {
  size_t groups = 0;
  size_t entries = 0;
  size_t code_dim = 0;
  Parameter* proj_w = nullptr;  // [d_in, G*V]
  Parameter* proj_b = nullptr;  // [G*V]
  std::vector<Parameter*> books;  // G x [V, d_c/G]

  static Codebooks create(ParameterStore& store, const std::string& name, size_t d_in, size_t code_dim,
                          size_t groups, size_t entries, Rng& rng);
  size_t group_dim() const { return code_dim / groups; }
};

enum class QuantMode {
  kHard,  // straight-through: one-hot forward, Gumbel-softmax gradient
  kSoft,  // Gumbel-softmax weights forward and backward
};

enum class NoiseMode {
  kSampled,  // fresh Gumbel noise per token, group and entry
  kZero,     // no noise (evaluation)
  kFrozen,   // caller-supplied noise tensor [n, G*V]
};

struct QuantizeOptions {
  double tau = 1.0;
  QuantMode mode = QuantMode::kHard;
  NoiseMode noise = NoiseMode::kZero;
  const Tensor* frozen_noise = nullptr;
  Rng* rng = nullptr;
};

struct CodeAssignment {
  size_t tokens = 0;
  size_t groups = 0;
  std::vector<size_t> codes;  // [tokens, groups] row-major, values in [0, V)
  Var logits;                 // [tokens, G*V], before noise
  Var quantized;              // [tokens, d_c]
  Tensor noise;               // noise used in this pass, [tokens, G*V]

  size_t code(size_t token, size_t group) const { return codes[token * groups + group]; }
};

// n = -log(-log(u)), u ~ U(0,1) clamped to [1e-12, 1 - 1e-12].
Tensor sample_gumbel(size_t rows, size_t cols, Rng& rng);

// softmax((logits + noise) / tau) over the last axis. tau must be > 0.
Var gumbel_softmax(Var logits, const Tensor& noise, double tau);
// Value-level form for a single group's logits.
Tensor gumbel_weights(const Tensor& logits, const Tensor& noise, double tau);

CodeAssignment product_quantize(Tape& tape, Var features, const Codebooks& books, const QuantizeOptions& opts);

// Batch-level perplexity loss: (1/(GV)) sum_g exp(sum_v pbar log pbar), where
// pbar_g is softmax(l_g) averaged over every token of every entry in
// `logits` (each [n_i, G*V]).
Var vq_perplexity_loss(const std::vector<Var>& logits, size_t groups, size_t entries);
// Same formula from already averaged probabilities [G, V].
double vq_perplexity_from_mean(const Tensor& mean_probs);

// exp(entropy) of the empirical code histogram per group, averaged over
// groups. Ranges over [1, V].
double code_perplexity(const std::vector<size_t>& codes, size_t groups, size_t entries);

}  // namespace retriever

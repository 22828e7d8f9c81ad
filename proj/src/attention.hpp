#pragma once

#include <string>
#include <vector>

#include "autograd.hpp"

namespace retriever {

// softmax(Q K^T / sqrt(d_q)) V, softmax over the key axis.
// Q: [n, d_q], K: [m, d_q], V: [m, d_v]. When `weights` is given it receives
// the [n, m] attention matrix.
Var attention(Var q, Var k, Var v, Tensor* weights = nullptr);

// Projections for h-head attention. Head i uses column block i of each
// input projection, which is the same as storing per-head slices.
//   w_q: [q_in, q_in]   w_k: [k_in, q_in]   w_v: [v_in, v_in]   w_o: [v_in, q_in]
struct MultiHeadParams {
  Parameter* w_q = nullptr;
  Parameter* w_k = nullptr;
  Parameter* w_v = nullptr;
  Parameter* w_o = nullptr;
  size_t heads = 1;

  // Fails when `heads` does not divide q_in and v_in.
  static MultiHeadParams create(ParameterStore& store, const std::string& name, size_t q_in, size_t k_in,
                                size_t v_in, size_t heads, Rng& rng);
  size_t query_dim() const { return w_q->value.dim(0); }
};

struct AttentionResult {
  Var out;
  // Per-head [n, m] weights before the output projection; filled only when
  // requested.
  std::vector<Tensor> head_weights;

  // Head-averaged weights.
  Tensor mean_weights() const;
};

AttentionResult multi_head_attention(Tape& tape, Var q, Var k, Var v, const MultiHeadParams& p,
                                     bool keep_weights = false);

Var self_attention(Tape& tape, Var x, const MultiHeadParams& p);
// x queries, y keys and values. Invariant to any permutation of y's rows.
Var cross_attention(Tape& tape, Var x, Var y, const MultiHeadParams& p);
// Content tokens query the linking keys; the paired style tokens are the
// values. Invariant to jointly permuting (keys[i], styles[i]).
AttentionResult link_attention(Tape& tape, Var content, Var keys, Var styles, const MultiHeadParams& p,
                               bool keep_weights = false);

}  // namespace retriever

#include "attention.hpp"

#include <cmath>

#include "error.hpp"
#include "layers.hpp"

namespace retriever {

Var attention(Var q, Var k, Var v, Tensor* weights) {
  const Shape& qs = q.shape();
  const Shape& ks = k.shape();
  const Shape& vs = v.shape();
  if (qs.size() != 2 || ks.size() != 2 || vs.size() != 2 || qs[1] != ks[1] || ks[0] != vs[0]) {
    fail(ErrorCode::kShape, "attention: Q " + shape_str(qs) + ", K " + shape_str(ks) + ", V " + shape_str(vs));
  }
  Var logits = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(qs[1])));
  Var w = softmax(logits);
  if (weights) *weights = w.value();
  return matmul(w, v);
}

MultiHeadParams MultiHeadParams::create(ParameterStore& store, const std::string& name, size_t q_in, size_t k_in,
                                        size_t v_in, size_t heads, Rng& rng) {
  if (heads == 0 || q_in % heads != 0 || v_in % heads != 0) {
    fail(ErrorCode::kConfig, name + ": " + std::to_string(heads) + " heads do not divide query dim " +
                                 std::to_string(q_in) + " and value dim " + std::to_string(v_in));
  }
  MultiHeadParams p;
  p.heads = heads;
  p.w_q = &store.add(name + ".w_q", xavier(q_in, q_in, rng));
  p.w_k = &store.add(name + ".w_k", xavier(k_in, q_in, rng));
  p.w_v = &store.add(name + ".w_v", xavier(v_in, v_in, rng));
  p.w_o = &store.add(name + ".w_o", xavier(v_in, q_in, rng));
  return p;
}

Tensor AttentionResult::mean_weights() const {
  if (head_weights.empty()) fail(ErrorCode::kState, "attention weights were not kept");
  Tensor out(head_weights[0].shape());
  for (const Tensor& w : head_weights)
    for (size_t i = 0; i < w.size(); ++i) out[i] += w[i];
  for (double& v : out.data()) v /= static_cast<double>(head_weights.size());
  return out;
}

AttentionResult multi_head_attention(Tape& tape, Var q, Var k, Var v, const MultiHeadParams& p, bool keep_weights) {
  if (k.shape().size() != 2 || v.shape().size() != 2 || k.shape()[0] != v.shape()[0]) {
    fail(ErrorCode::kShape, "multi_head_attention: keys " + shape_str(k.shape()) + " and values " +
                                shape_str(v.shape()) + " must pair row-wise");
  }
  Var qp = matmul(q, tape.param(*p.w_q));
  Var kp = matmul(k, tape.param(*p.w_k));
  Var vp = matmul(v, tape.param(*p.w_v));
  const size_t dq = qp.shape()[1] / p.heads;
  const size_t dv = vp.shape()[1] / p.heads;
  AttentionResult r;
  std::vector<Var> heads;
  heads.reserve(p.heads);
  for (size_t h = 0; h < p.heads; ++h) {
    Tensor w;
    heads.push_back(attention(slice_last(qp, h * dq, dq), slice_last(kp, h * dq, dq), slice_last(vp, h * dv, dv),
                              keep_weights ? &w : nullptr));
    if (keep_weights) r.head_weights.push_back(std::move(w));
  }
  Var cat = p.heads == 1 ? heads[0] : concat_last(heads);
  r.out = matmul(cat, tape.param(*p.w_o));
  return r;
}

Var self_attention(Tape& tape, Var x, const MultiHeadParams& p) {
  return multi_head_attention(tape, x, x, x, p).out;
}

Var cross_attention(Tape& tape, Var x, Var y, const MultiHeadParams& p) {
  return multi_head_attention(tape, x, y, y, p).out;
}

AttentionResult link_attention(Tape& tape, Var content, Var keys, Var styles, const MultiHeadParams& p,
                               bool keep_weights) {
  if (keys.shape()[0] != styles.shape()[0]) {
    fail(ErrorCode::kShape, "link_attention: " + std::to_string(keys.shape()[0]) + " linking keys but " +
                                std::to_string(styles.shape()[0]) + " style tokens");
  }
  return multi_head_attention(tape, content, keys, styles, p, keep_weights);
}

}  // namespace retriever

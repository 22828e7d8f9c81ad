#include "layers.hpp"

#include <cmath>

namespace retriever {

Tensor xavier(size_t in, size_t out, Rng& rng) {
  Tensor w({in, out});
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (double& v : w.data()) v = rng.uniform(-a, a);
  return w;
}

Linear Linear::create(ParameterStore& store, const std::string& name, size_t in, size_t out, Rng& rng,
                      bool with_bias) {
  Linear l;
  l.weight = &store.add(name + ".weight", xavier(in, out, rng));
  if (with_bias) l.bias = &store.add(name + ".bias", Tensor({out}, 0.0));
  return l;
}

Var Linear::operator()(Tape& tape, Var x) const {
  Var y = matmul(x, tape.param(*weight));
  return bias ? add(y, tape.param(*bias)) : y;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, size_t dim) {
  LayerNorm n;
  n.gain = &store.add(name + ".gain", Tensor({dim}, 1.0));
  n.shift = &store.add(name + ".shift", Tensor({dim}, 0.0));
  return n;
}

Var LayerNorm::operator()(Tape& tape, Var x) const {
  return add(mul(layer_norm(x), tape.param(*gain)), tape.param(*shift));
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, size_t dim, size_t hidden,
                                Rng& rng) {
  return {Linear::create(store, name + ".in", dim, hidden, rng), Linear::create(store, name + ".out", hidden, dim, rng)};
}

Var FeedForward::operator()(Tape& tape, Var x, double dropout_p, Rng* rng) const {
  Var h = gelu(in(tape, x));
  if (rng) h = dropout(h, dropout_p, *rng);
  return out(tape, h);
}

MixFeedForward MixFeedForward::create(ParameterStore& store, const std::string& name, size_t dim, size_t hidden,
                                      Rng& rng) {
  MixFeedForward f;
  f.hidden = hidden;
  f.in = Linear::create(store, name + ".in", dim, hidden, rng);
  Tensor k({3, 3, hidden});
  const double a = 1.0 / 3.0;
  for (double& v : k.data()) v = rng.uniform(-a, a);
  f.conv = &store.add(name + ".conv", std::move(k));
  f.out = Linear::create(store, name + ".out", hidden, dim, rng);
  return f;
}

Var MixFeedForward::operator()(Tape& tape, Var x, size_t height, size_t width, double dropout_p, Rng* rng) const {
  Var h = reshape(in(tape, x), {height, width, hidden});
  h = gelu(reshape(depthwise_conv2d(h, tape.param(*conv)), {height * width, hidden}));
  if (rng) h = dropout(h, dropout_p, *rng);
  return out(tape, h);
}

}  // namespace retriever

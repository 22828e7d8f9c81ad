#pragma once

#include <string>

#include "autograd.hpp"

namespace retriever {

// Glorot-uniform matrix [in, out].
Tensor xavier(size_t in, size_t out, Rng& rng);

struct Linear {
  Parameter* weight = nullptr;  // [in, out]
  Parameter* bias = nullptr;    // [out] or null

  static Linear create(ParameterStore& store, const std::string& name, size_t in, size_t out, Rng& rng,
                       bool with_bias = true);
  Var operator()(Tape& tape, Var x) const;
};

// Row-wise layer normalization with learnable gain and shift.
struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* shift = nullptr;

  static LayerNorm create(ParameterStore& store, const std::string& name, size_t dim);
  Var operator()(Tape& tape, Var x) const;
};

// Linear -> GELU -> Linear.
struct FeedForward {
  Linear in;
  Linear out;

  static FeedForward create(ParameterStore& store, const std::string& name, size_t dim, size_t hidden, Rng& rng);
  Var operator()(Tape& tape, Var x, double dropout_p, Rng* rng) const;
};

// Linear -> depthwise 3x3 conv -> GELU -> Linear over an H x W token grid.
struct MixFeedForward {
  Linear in;
  Parameter* conv = nullptr;  // [3, 3, hidden]
  Linear out;
  size_t hidden = 0;

  static MixFeedForward create(ParameterStore& store, const std::string& name, size_t dim, size_t hidden, Rng& rng);
  Var operator()(Tape& tape, Var x, size_t height, size_t width, double dropout_p, Rng* rng) const;
};

}  // namespace retriever

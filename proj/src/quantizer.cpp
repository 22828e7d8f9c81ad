#include "quantizer.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "layers.hpp"

namespace retriever {

double AnnealSchedule::at(uint64_t step) const {
  return std::max(tau_min, tau_init * std::pow(decay, static_cast<double>(step)));
}

Codebooks Codebooks::create(ParameterStore& store, const std::string& name, size_t d_in, size_t code_dim,
                            size_t groups, size_t entries, Rng& rng) {
  if (groups == 0 || code_dim % groups != 0) {
    fail(ErrorCode::kConfig, name + ": " + std::to_string(groups) + " groups do not divide d_c " + std::to_string(code_dim));
  }
  if (entries < 2) fail(ErrorCode::kConfig, name + ": need at least 2 entries per codebook");
  Codebooks cb;
  cb.groups = groups;
  cb.entries = entries;
  cb.code_dim = code_dim;
  cb.proj_w = &store.add(name + ".proj.weight", xavier(d_in, groups * entries, rng));
  cb.proj_b = &store.add(name + ".proj.bias", Tensor({groups * entries}, 0.0));
  for (size_t g = 0; g < groups; ++g) {
    Tensor e({entries, code_dim / groups});
    for (double& v : e.data()) v = rng.normal();
    cb.books.push_back(&store.add(name + ".codebook" + std::to_string(g), std::move(e)));
  }
  return cb;
}

Tensor sample_gumbel(size_t rows, size_t cols, Rng& rng) {
  Tensor n({rows, cols});
  for (double& v : n.data()) {
    const double u = std::clamp(rng.uniform(), 1e-12, 1.0 - 1e-12);
    v = -std::log(-std::log(u));
  }
  return n;
}

Var gumbel_softmax(Var logits, const Tensor& noise, double tau) {
  if (!(tau > 0.0)) fail(ErrorCode::kInvalidArgument, "gumbel_softmax: temperature must be > 0");
  Var shifted = add(logits, logits.tape()->constant(noise));
  return softmax(mul_scalar(shifted, 1.0 / tau));
}

Tensor gumbel_weights(const Tensor& logits, const Tensor& noise, double tau) {
  Tape tape;
  return gumbel_softmax(tape.constant(logits), noise, tau).value();
}

CodeAssignment product_quantize(Tape& tape, Var features, const Codebooks& books, const QuantizeOptions& opts) {
  const Tensor& F = features.value();
  if (F.rank() != 2 || F.cols() != books.proj_w->value.dim(0)) {
    fail(ErrorCode::kShape, "product_quantize: features " + shape_str(F.shape()) + " vs projection " +
                                shape_str(books.proj_w->value.shape()));
  }
  const size_t n = F.rows(), G = books.groups, V = books.entries;
  CodeAssignment ca;
  ca.tokens = n;
  ca.groups = G;
  ca.logits = add(matmul(features, tape.param(*books.proj_w)), tape.param(*books.proj_b));

  switch (opts.noise) {
    case NoiseMode::kSampled:
      if (!opts.rng) fail(ErrorCode::kInvalidArgument, "product_quantize: sampled noise needs an rng");
      ca.noise = sample_gumbel(n, G * V, *opts.rng);
      break;
    case NoiseMode::kZero:
      ca.noise = Tensor({n, G * V}, 0.0);
      break;
    case NoiseMode::kFrozen:
      if (!opts.frozen_noise || opts.frozen_noise->shape() != Shape{n, G * V}) {
        fail(ErrorCode::kShape, "product_quantize: frozen noise must be [" + std::to_string(n) + "," +
                                    std::to_string(G * V) + "]");
      }
      ca.noise = *opts.frozen_noise;
      break;
  }

  ca.codes.assign(n * G, 0);
  std::vector<Var> parts;
  for (size_t g = 0; g < G; ++g) {
    Var lg = slice_last(ca.logits, g * V, V);
    Tensor ng({n, V});
    for (size_t i = 0; i < n; ++i)
      for (size_t v = 0; v < V; ++v) ng.at(i, v) = ca.noise.at(i, g * V + v);
    Var w = gumbel_softmax(lg, ng, opts.tau);
    Tensor hard({n, V}, 0.0);
    for (size_t i = 0; i < n; ++i) {
      // Ties go to the lowest index.
      size_t best = 0;
      double best_v = lg.value().at(i, 0) + ng.at(i, 0);
      for (size_t v = 1; v < V; ++v) {
        const double s = lg.value().at(i, v) + ng.at(i, v);
        if (s > best_v) {
          best_v = s;
          best = v;
        }
      }
      ca.codes[i * G + g] = best;
      hard.at(i, best) = 1.0;
    }
    Var weights = opts.mode == QuantMode::kHard ? straight_through(w, hard) : w;
    parts.push_back(matmul(weights, tape.param(*books.books[g])));
  }
  ca.quantized = G == 1 ? parts[0] : concat_last(parts);
  return ca;
}

Var vq_perplexity_loss(const std::vector<Var>& logits, size_t groups, size_t entries) {
  if (logits.empty()) fail(ErrorCode::kInvalidArgument, "vq_perplexity_loss: empty batch");
  size_t tokens = 0;
  std::vector<Var> summed(groups);
  for (const Var& l : logits) {
    if (l.shape().size() != 2 || l.shape()[1] != groups * entries) {
      fail(ErrorCode::kShape, "vq_perplexity_loss: logits " + shape_str(l.shape()) + " for G=" +
                                  std::to_string(groups) + ", V=" + std::to_string(entries));
    }
    tokens += l.shape()[0];
    for (size_t g = 0; g < groups; ++g) {
      Var s = sum(softmax(slice_last(l, g * entries, entries)), 0);
      summed[g] = summed[g].valid() ? add(summed[g], s) : s;
    }
  }
  if (tokens == 0) fail(ErrorCode::kInvalidArgument, "vq_perplexity_loss: empty batch");
  Var total;
  for (size_t g = 0; g < groups; ++g) {
    Var pbar = mul_scalar(summed[g], 1.0 / static_cast<double>(tokens));
    Var term = exp(sum_all(xlogx(pbar)));
    total = total.valid() ? add(total, term) : term;
  }
  return mul_scalar(total, 1.0 / static_cast<double>(groups * entries));
}

double vq_perplexity_from_mean(const Tensor& mean_probs) {
  if (mean_probs.rank() != 2) fail(ErrorCode::kShape, "vq_perplexity_from_mean: expected [G, V]");
  const size_t G = mean_probs.dim(0), V = mean_probs.dim(1);
  double total = 0.0;
  for (size_t g = 0; g < G; ++g) {
    double s = 0.0;
    for (double p : mean_probs.row(g)) s += p > 0.0 ? p * std::log(p) : 0.0;
    total += std::exp(s);
  }
  return total / static_cast<double>(G * V);
}

double code_perplexity(const std::vector<size_t>& codes, size_t groups, size_t entries) {
  if (codes.empty() || groups == 0) return 0.0;
  const size_t n = codes.size() / groups;
  double total = 0.0;
  for (size_t g = 0; g < groups; ++g) {
    std::vector<double> hist(entries, 0.0);
    for (size_t i = 0; i < n; ++i) hist[codes[i * groups + g]] += 1.0;
    double h = 0.0;
    for (double c : hist) {
      if (c > 0.0) {
        const double p = c / static_cast<double>(n);
        h -= p * std::log(p);
      }
    }
    total += std::exp(h);
  }
  return total / static_cast<double>(groups);
}

}  // namespace retriever

#pragma once

#include <array>
#include <vector>

#include "autograd.hpp"

namespace retriever {

// Part responsibilities for an H x W grid are carried pixel-major as
// [H*W, V] with pixel p = h * W + w; each row is a distribution over parts.
// Entry 0 is the background part and is never constrained.

// Converts a [V, H, W] volume to the pixel-major layout.
Tensor pixel_major(const Tensor& volume);

constexpr double kEmptyPartMass = 1e-8;

struct PartCenters {
  // One entry per foreground part v = 1..V-1.
  std::vector<std::array<double, 2>> centers;  // (c_h, c_w)
  std::vector<double> mass;                    // z_v
  std::vector<bool> defined;                   // z_v > kEmptyPartMass
};

PartCenters part_centers(const Tensor& probs, size_t height, size_t width);

struct GeometricLoss {
  Var loss;
  size_t empty_parts = 0;
};

// (1/(V-1)) sum_{v>=1} sum_p ||coord_p - c_v||^2 L[p,v] / z_v. Empty parts
// contribute zero. With `normalize` the coordinates are scaled to [0, 1].
GeometricLoss geometric_concentration_loss(Var probs, size_t height, size_t width, bool normalize = false);

struct TruncatedCe {
  Var sc;  // gamma * tanh(ce / gamma)
  Var ce;  // neighborhood cross-entropy
  std::vector<size_t> codes;
};

// Neighborhood cross-entropy over a sequence of N >= 2 code distributions,
// given as log-probabilities [N, V], truncated at gamma > 0. Position i is
// scored against the codes of its neighbors, codes[i-1] and codes[i+1].
TruncatedCe truncated_neighborhood_ce_log(Var log_probs, const std::vector<size_t>& codes, double gamma);
// Codes taken as the per-row argmax of log_probs.
TruncatedCe truncated_neighborhood_ce_log(Var log_probs, double gamma);
// Same, from probabilities.
TruncatedCe truncated_neighborhood_ce(Var probs, const std::vector<size_t>& codes, double gamma);
TruncatedCe truncated_neighborhood_ce(Var probs, double gamma);

}  // namespace retriever

#include "constraints.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace retriever {

Tensor pixel_major(const Tensor& volume) {
  if (volume.rank() != 3) fail(ErrorCode::kShape, "pixel_major: expected [V, H, W], got " + shape_str(volume.shape()));
  const size_t V = volume.dim(0), P = volume.dim(1) * volume.dim(2);
  Tensor out({P, V});
  for (size_t v = 0; v < V; ++v)
    for (size_t p = 0; p < P; ++p) out.at(p, v) = volume[v * P + p];
  return out;
}

namespace {

void check_grid(const Shape& s, size_t height, size_t width, const char* op) {
  if (s.size() != 2 || s[0] != height * width) {
    fail(ErrorCode::kShape, std::string(op) + ": probabilities " + shape_str(s) + " do not cover a " +
                                std::to_string(height) + "x" + std::to_string(width) + " grid");
  }
  if (s[1] < 2) fail(ErrorCode::kInvalidArgument, std::string(op) + ": need V >= 2 (background plus one part)");
}

}  // namespace

PartCenters part_centers(const Tensor& probs, size_t height, size_t width) {
  check_grid(probs.shape(), height, width, "part_centers");
  const size_t V = probs.cols();
  PartCenters pc;
  for (size_t v = 1; v < V; ++v) {
    double z = 0.0, ch = 0.0, cw = 0.0;
    for (size_t h = 0; h < height; ++h)
      for (size_t w = 0; w < width; ++w) {
        const double l = probs.at(h * width + w, v);
        z += l;
        ch += static_cast<double>(h) * l;
        cw += static_cast<double>(w) * l;
      }
    const bool ok = z > kEmptyPartMass;
    pc.mass.push_back(z);
    pc.defined.push_back(ok);
    pc.centers.push_back(ok ? std::array<double, 2>{ch / z, cw / z} : std::array<double, 2>{0.0, 0.0});
  }
  return pc;
}

GeometricLoss geometric_concentration_loss(Var probs, size_t height, size_t width, bool normalize) {
  check_grid(probs.shape(), height, width, "geometric_concentration_loss");
  Tape& tape = *probs.tape();
  const size_t P = height * width, V = probs.shape()[1], F = V - 1;
  const double sh = normalize ? 1.0 / static_cast<double>(std::max<size_t>(height - 1, 1)) : 1.0;
  const double sw = normalize ? 1.0 / static_cast<double>(std::max<size_t>(width - 1, 1)) : 1.0;

  Tensor coords({P, 2});
  Tensor coord_sq({P, 1});
  for (size_t h = 0; h < height; ++h)
    for (size_t w = 0; w < width; ++w) {
      const size_t p = h * width + w;
      coords.at(p, 0) = static_cast<double>(h) * sh;
      coords.at(p, 1) = static_cast<double>(w) * sw;
      coord_sq[p] = coords.at(p, 0) * coords.at(p, 0) + coords.at(p, 1) * coords.at(p, 1);
    }

  Var fg = slice_last(probs, 1, F);  // [P, F]
  Var z = sum(fg, 0);                // [F]
  GeometricLoss out;
  Tensor mask({F}, 1.0), pad({F}, 0.0);
  for (size_t v = 0; v < F; ++v) {
    if (!(z.value()[v] > kEmptyPartMass)) {
      mask[v] = 0.0;
      pad[v] = 1.0;
      ++out.empty_parts;
    }
  }
  Var w = div(fg, add(z, tape.constant(pad)));                        // L / z, [P, F]
  Var centers = matmul(transpose(tape.constant(coords)), w);          // [2, F]
  Var cross = matmul(tape.constant(coords), centers);                 // [P, F]
  Var center_sq = sum(square(centers), 0);                            // [F]
  Tensor ones_row({1, F}, 1.0);
  Var dist = add(sub(matmul(tape.constant(coord_sq), tape.constant(ones_row)), mul_scalar(cross, 2.0)), center_sq);
  Var per_part = mul(sum(mul(dist, w), 0), tape.constant(mask));      // [F]
  out.loss = mul_scalar(sum_all(per_part), 1.0 / static_cast<double>(F));
  return out;
}

TruncatedCe truncated_neighborhood_ce_log(Var log_probs, const std::vector<size_t>& codes, double gamma) {
  const Shape& s = log_probs.shape();
  if (s.size() != 2) fail(ErrorCode::kShape, "truncated_neighborhood_ce: expected [N, V], got " + shape_str(s));
  if (s[0] < 2) fail(ErrorCode::kInvalidArgument, "truncated_neighborhood_ce: need N >= 2");
  if (!(gamma > 0.0)) fail(ErrorCode::kInvalidArgument, "truncated_neighborhood_ce: gamma must be > 0");
  Tape& tape = *log_probs.tape();
  const size_t N = s[0], V = s[1];
  if (codes.size() != N) {
    fail(ErrorCode::kShape, "truncated_neighborhood_ce: " + std::to_string(codes.size()) + " codes for " +
                                std::to_string(N) + " positions");
  }
  for (size_t c : codes)
    if (c >= V) fail(ErrorCode::kInvalidArgument, "truncated_neighborhood_ce: code " + std::to_string(c) + " out of range");
  TruncatedCe out;
  out.codes = codes;
  Tensor select({N, V}, 0.0);
  for (size_t i = 0; i + 1 < N; ++i) {
    select.at(i, out.codes[i + 1]) += 1.0;
    select.at(i + 1, out.codes[i]) += 1.0;
  }
  Var total = neg(sum_all(mul(log_probs, tape.constant(std::move(select)))));
  out.ce = mul_scalar(total, 1.0 / static_cast<double>(N - 1));
  out.sc = mul_scalar(tanh(mul_scalar(out.ce, 1.0 / gamma)), gamma);
  return out;
}

TruncatedCe truncated_neighborhood_ce_log(Var log_probs, double gamma) {
  const Tensor& lp = log_probs.value();
  if (lp.rank() != 2) fail(ErrorCode::kShape, "truncated_neighborhood_ce: expected [N, V], got " + shape_str(lp.shape()));
  std::vector<size_t> codes(lp.rows());
  for (size_t i = 0; i < codes.size(); ++i) {
    auto row = lp.row(i);
    codes[i] = static_cast<size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return truncated_neighborhood_ce_log(log_probs, codes, gamma);
}

TruncatedCe truncated_neighborhood_ce(Var probs, const std::vector<size_t>& codes, double gamma) {
  return truncated_neighborhood_ce_log(log(probs), codes, gamma);
}

TruncatedCe truncated_neighborhood_ce(Var probs, double gamma) {
  return truncated_neighborhood_ce_log(log(probs), gamma);
}

}  // namespace retriever

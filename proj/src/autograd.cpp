#include "autograd.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "error.hpp"

namespace retriever {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
  if (backward_done_) fail(ErrorCode::kState, "tape: cannot record after backward");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::input(Tensor value, bool requires_grad) {
  return record(std::move(value), requires_grad, nullptr);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Var v = record(p.value, true, nullptr);
  nodes_[v.id()].param = &p;
  param_nodes_.emplace(&p, v.id());
  return v;
}

std::vector<double>& Tape::grad_buffer(size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

const std::vector<double>* Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  return n.grad.empty() ? nullptr : &n.grad;
}

Tensor Tape::grad_tensor(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) fail(ErrorCode::kInvalidArgument, "backward: loss recorded on another tape");
  if (backward_done_) fail(ErrorCode::kState, "backward: tape already consumed; record a new forward pass");
  if (loss.value().size() != 1) {
    fail(ErrorCode::kShape, "backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  require_finite(loss.value(), "loss");
  backward_done_ = true;
  if (nodes_[loss.id()].requires_grad) {
    grad_buffer(loss.id())[0] = 1.0;
    for (size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
      // The closure may touch other nodes' buffers but never reallocates nodes_.
      n.backward(*this, i, n.grad);
    }
  }
  for (auto& [param, id] : param_nodes_) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    Tensor g(n.value.shape(), n.grad);
    require_finite(g, "gradient of parameter '" + param->name + "'");
    param->accumulate_grad(n.grad);
  }
}

namespace {

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorCode::kShape, std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                              shape_str(b));
}

Tape& tape_of(const char* op, Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) {
    fail(ErrorCode::kInvalidArgument, std::string(op) + ": operands on different tapes");
  }
  return *a.tape();
}

bool broadcasts_into(const Shape& small, const Shape& big) {
  if (shape_size(small) == 1) return true;
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

template <typename F, typename GA, typename GB>
Var binary(const char* op, Var a, Var b, F f, GA ga, GB gb) {
  Tape& tape = tape_of(op, a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Shape out_shape;
  if (A.shape() == B.shape() || (A.size() >= B.size() && broadcasts_into(B.shape(), A.shape()))) {
    out_shape = A.shape();
  } else if (broadcasts_into(A.shape(), B.shape())) {
    out_shape = B.shape();
  } else {
    shape_error(op, A.shape(), B.shape());
  }
  Tensor out(out_shape);
  const size_t n = out.size(), na = A.size(), nb = B.size();
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) po[i] = f(pa[i % na], pb[i % nb]);
  const bool rg = a.requires_grad() || b.requires_grad();
  const size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), rg, [ia, ib, ga, gb](Tape& t, size_t self, const std::vector<double>& g) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    const Tensor& O = t.value(self);
    const size_t n = g.size(), na = A.size(), nb = B.size();
    if (t.requires_grad(ia)) {
      auto& da = t.grad_buffer(ia);
      for (size_t i = 0; i < n; ++i) da[i % na] += ga(A[i % na], B[i % nb], O[i], g[i]);
    }
    if (t.requires_grad(ib)) {
      auto& db = t.grad_buffer(ib);
      for (size_t i = 0; i < n; ++i) db[i % nb] += gb(A[i % na], B[i % nb], O[i], g[i]);
    }
  });
}

template <typename F, typename G>
Var unary(Var a, F f, G dg) {
  Tape& tape = *a.tape();
  const Tensor& A = a.value();
  Tensor out(A.shape());
  for (size_t i = 0; i < A.size(); ++i) out[i] = f(A[i]);
  const size_t ia = a.id();
  return tape.record(std::move(out), a.requires_grad(), [ia, dg](Tape& t, size_t self, const std::vector<double>& g) {
    const Tensor& A = t.value(ia);
    const Tensor& O = t.value(self);
    auto& da = t.grad_buffer(ia);
    for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * dg(A[i], O[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double, double g) { return g; },
      [](double, double, double, double g) { return g; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double, double g) { return g; },
      [](double, double, double, double g) { return -g; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double, double g) { return g * y; },
      [](double x, double, double, double g) { return g * x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double, double g) { return g / y; },
      [](double, double y, double o, double g) { return -g * o / y; });
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var neg(Var a) { return mul_scalar(a, -1.0); }

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double o) { return 1.0 - o * o; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double o) { return 0.5 / o; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Var xlogx(Var a) {
  return unary(
      a, [](double x) { return x == 0.0 ? 0.0 : x * std::log(x); },
      [](double x, double) { return x == 0.0 ? 0.0 : std::log(x) + 1.0; });
}

Var matmul(Var a, Var b) {
  Tape& tape = tape_of("matmul", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() < 2 || B.rank() != 2 || A.cols() != B.dim(0)) shape_error("matmul", A.shape(), B.shape());
  const size_t n = A.rows(), k = A.cols(), m = B.dim(1);
  Shape out_shape = A.shape();
  out_shape.back() = m;
  Tensor out(out_shape);
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* po = out.data().data();
  for (size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  const size_t ia = a.id(), ib = b.id();
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.record(std::move(out), rg, [ia, ib, n, k, m](Tape& t, size_t, const std::vector<double>& g) {
    const double* pa = t.value(ia).data().data();
    const double* pb = t.value(ib).data().data();
    const double* pg = g.data();
    if (t.requires_grad(ia)) {
      double* da = t.grad_buffer(ia).data();
      for (size_t i = 0; i < n; ++i) {
        const double* grow = pg + i * m;
        for (size_t p = 0; p < k; ++p) {
          const double* brow = pb + p * m;
          double s = 0.0;
          for (size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
          da[i * k + p] += s;
        }
      }
    }
    if (t.requires_grad(ib)) {
      double* db = t.grad_buffer(ib).data();
      for (size_t i = 0; i < n; ++i) {
        const double* grow = pg + i * m;
        for (size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          if (av == 0.0) continue;
          double* drow = db + p * m;
          for (size_t j = 0; j < m; ++j) drow[j] += av * grow[j];
        }
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  if (A.rank() != 2) fail(ErrorCode::kShape, "transpose: expected 2-D, got " + shape_str(A.shape()));
  const size_t r = A.dim(0), c = A.dim(1);
  Tensor out({c, r});
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  const size_t ia = a.id();
  return a.tape()->record(std::move(out), a.requires_grad(), [ia, r, c](Tape& t, size_t, const std::vector<double>& g) {
    auto& da = t.grad_buffer(ia);
    for (size_t i = 0; i < r; ++i)
      for (size_t j = 0; j < c; ++j) da[i * c + j] += g[j * r + i];
  });
}

Var softmax(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.shape());
  const size_t rows = A.rows(), cols = A.cols();
  for (size_t r = 0; r < rows; ++r) {
    auto x = A.row(r);
    auto y = out.row(r);
    const double mx = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (size_t j = 0; j < cols; ++j) s += (y[j] = std::exp(x[j] - mx));
    for (size_t j = 0; j < cols; ++j) y[j] /= s;
  }
  const size_t ia = a.id();
  return a.tape()->record(std::move(out), a.requires_grad(), [ia, rows, cols](Tape& t, size_t self, const std::vector<double>& g) {
    const Tensor& Y = t.value(self);
    auto& da = t.grad_buffer(ia);
    for (size_t r = 0; r < rows; ++r) {
      const size_t o = r * cols;
      double dot = 0.0;
      for (size_t j = 0; j < cols; ++j) dot += g[o + j] * Y[o + j];
      for (size_t j = 0; j < cols; ++j) da[o + j] += Y[o + j] * (g[o + j] - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& A = a.value();
  Tensor out(A.shape());
  const size_t rows = A.rows(), cols = A.cols();
  for (size_t r = 0; r < rows; ++r) {
    auto x = A.row(r);
    auto y = out.row(r);
    const double mx = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (size_t j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
    const double lse = mx + std::log(s);
    for (size_t j = 0; j < cols; ++j) y[j] = x[j] - lse;
  }
  const size_t ia = a.id();
  return a.tape()->record(std::move(out), a.requires_grad(), [ia, rows, cols](Tape& t, size_t self, const std::vector<double>& g) {
    const Tensor& Y = t.value(self);
    auto& da = t.grad_buffer(ia);
    for (size_t r = 0; r < rows; ++r) {
      const size_t o = r * cols;
      double gs = 0.0;
      for (size_t j = 0; j < cols; ++j) gs += g[o + j];
      for (size_t j = 0; j < cols; ++j) da[o + j] += g[o + j] - std::exp(Y[o + j]) * gs;
    }
  });
}

Var layer_norm(Var a, double eps) {
  const Tensor& A = a.value();
  const size_t rows = A.rows(), cols = A.cols();
  Tensor out(A.shape());
  std::vector<double> inv_std(rows);
  for (size_t r = 0; r < rows; ++r) {
    auto x = A.row(r);
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto y = out.row(r);
    for (size_t j = 0; j < cols; ++j) y[j] = (x[j] - mu) * inv_std[r];
  }
  const size_t ia = a.id();
  return a.tape()->record(std::move(out), a.requires_grad(),
                          [ia, rows, cols, inv_std = std::move(inv_std)](Tape& t, size_t self, const std::vector<double>& g) {
    const Tensor& Y = t.value(self);
    auto& da = t.grad_buffer(ia);
    const double inv_n = 1.0 / static_cast<double>(cols);
    for (size_t r = 0; r < rows; ++r) {
      const size_t o = r * cols;
      double gm = 0.0, gy = 0.0;
      for (size_t j = 0; j < cols; ++j) {
        gm += g[o + j];
        gy += g[o + j] * Y[o + j];
      }
      gm *= inv_n;
      gy *= inv_n;
      for (size_t j = 0; j < cols; ++j) da[o + j] += inv_std[r] * (g[o + j] - gm - Y[o + j] * gy);
    }
  });
}

Var depthwise_conv1d(Var x, Var w) {
  Tape& tape = tape_of("depthwise_conv1d", x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  if (X.rank() != 2 || W.rank() != 2 || W.dim(1) != X.dim(1) || W.dim(0) % 2 == 0) {
    shape_error("depthwise_conv1d", X.shape(), W.shape());
  }
  const size_t n = X.dim(0), c = X.dim(1), k = W.dim(0), pad = k / 2;
  Tensor out({n, c});
  for (size_t t = 0; t < n; ++t) {
    for (size_t j = 0; j < k; ++j) {
      const long src = static_cast<long>(t + j) - static_cast<long>(pad);
      if (src < 0 || src >= static_cast<long>(n)) continue;
      for (size_t ch = 0; ch < c; ++ch) out[t * c + ch] += X[src * c + ch] * W[j * c + ch];
    }
  }
  const size_t ix = x.id(), iw = w.id();
  const bool rg = x.requires_grad() || w.requires_grad();
  return tape.record(std::move(out), rg, [ix, iw, n, c, k, pad](Tape& t, size_t, const std::vector<double>& g) {
    const Tensor& X = t.value(ix);
    const Tensor& W = t.value(iw);
    double* dx = t.requires_grad(ix) ? t.grad_buffer(ix).data() : nullptr;
    double* dw = t.requires_grad(iw) ? t.grad_buffer(iw).data() : nullptr;
    for (size_t tt = 0; tt < n; ++tt) {
      for (size_t j = 0; j < k; ++j) {
        const long src = static_cast<long>(tt + j) - static_cast<long>(pad);
        if (src < 0 || src >= static_cast<long>(n)) continue;
        for (size_t ch = 0; ch < c; ++ch) {
          const double gv = g[tt * c + ch];
          if (dx) dx[src * c + ch] += gv * W[j * c + ch];
          if (dw) dw[j * c + ch] += gv * X[src * c + ch];
        }
      }
    }
  });
}

Var depthwise_conv2d(Var x, Var w) {
  Tape& tape = tape_of("depthwise_conv2d", x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  if (X.rank() != 3 || W.rank() != 3 || W.dim(2) != X.dim(2) || W.dim(0) % 2 == 0 || W.dim(1) % 2 == 0) {
    shape_error("depthwise_conv2d", X.shape(), W.shape());
  }
  const long H = X.dim(0), Wd = X.dim(1);
  const size_t c = X.dim(2), kh = W.dim(0), kw = W.dim(1);
  const long ph = kh / 2, pw = kw / 2;
  Tensor out(X.shape());
  auto visit = [=](auto&& fn) {
    for (long h = 0; h < H; ++h)
      for (long ww = 0; ww < Wd; ++ww)
        for (size_t i = 0; i < kh; ++i) {
          const long sh = h + static_cast<long>(i) - ph;
          if (sh < 0 || sh >= H) continue;
          for (size_t j = 0; j < kw; ++j) {
            const long sw = ww + static_cast<long>(j) - pw;
            if (sw < 0 || sw >= Wd) continue;
            fn(static_cast<size_t>(h * Wd + ww) * c, static_cast<size_t>(sh * Wd + sw) * c, (i * kw + j) * c);
          }
        }
  };
  visit([&](size_t o, size_t s, size_t wo) {
    for (size_t ch = 0; ch < c; ++ch) out[o + ch] += X[s + ch] * W[wo + ch];
  });
  const size_t ix = x.id(), iw = w.id();
  const bool rg = x.requires_grad() || w.requires_grad();
  return tape.record(std::move(out), rg, [ix, iw, c, visit](Tape& t, size_t, const std::vector<double>& g) {
    const Tensor& X = t.value(ix);
    const Tensor& W = t.value(iw);
    double* dx = t.requires_grad(ix) ? t.grad_buffer(ix).data() : nullptr;
    double* dw = t.requires_grad(iw) ? t.grad_buffer(iw).data() : nullptr;
    visit([&](size_t o, size_t s, size_t wo) {
      for (size_t ch = 0; ch < c; ++ch) {
        if (dx) dx[s + ch] += g[o + ch] * W[wo + ch];
        if (dw) dw[wo + ch] += g[o + ch] * X[s + ch];
      }
    });
  });
}

Var conv2d(Var x, Var w) {
  Tape& tape = tape_of("conv2d", x, w);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  if (X.rank() != 3 || W.rank() != 4 || W.dim(2) != X.dim(2) || W.dim(0) % 2 == 0 || W.dim(1) % 2 == 0) {
    shape_error("conv2d", X.shape(), W.shape());
  }
  const long H = X.dim(0), Wd = X.dim(1);
  const size_t cin = X.dim(2), kh = W.dim(0), kw = W.dim(1), cout = W.dim(3);
  const long ph = kh / 2, pw = kw / 2;
  Tensor out({X.dim(0), X.dim(1), cout});
  auto visit = [=](auto&& fn) {
    for (long h = 0; h < H; ++h)
      for (long ww = 0; ww < Wd; ++ww)
        for (size_t i = 0; i < kh; ++i) {
          const long sh = h + static_cast<long>(i) - ph;
          if (sh < 0 || sh >= H) continue;
          for (size_t j = 0; j < kw; ++j) {
            const long sw = ww + static_cast<long>(j) - pw;
            if (sw < 0 || sw >= Wd) continue;
            fn(static_cast<size_t>(h * Wd + ww) * cout, static_cast<size_t>(sh * Wd + sw) * cin,
               (i * kw + j) * cin * cout);
          }
        }
  };
  visit([&](size_t o, size_t s, size_t wo) {
    for (size_t ci = 0; ci < cin; ++ci) {
      const double xv = X[s + ci];
      const size_t wr = wo + ci * cout;
      for (size_t co = 0; co < cout; ++co) out[o + co] += xv * W[wr + co];
    }
  });
  const size_t ix = x.id(), iw = w.id();
  const bool rg = x.requires_grad() || w.requires_grad();
  return tape.record(std::move(out), rg, [ix, iw, cin, cout, visit](Tape& t, size_t, const std::vector<double>& g) {
    const Tensor& X = t.value(ix);
    const Tensor& W = t.value(iw);
    double* dx = t.requires_grad(ix) ? t.grad_buffer(ix).data() : nullptr;
    double* dw = t.requires_grad(iw) ? t.grad_buffer(iw).data() : nullptr;
    visit([&](size_t o, size_t s, size_t wo) {
      for (size_t ci = 0; ci < cin; ++ci) {
        const size_t wr = wo + ci * cout;
        double acc = 0.0;
        for (size_t co = 0; co < cout; ++co) {
          acc += g[o + co] * W[wr + co];
          if (dw) dw[wr + co] += g[o + co] * X[s + ci];
        }
        if (dx) dx[s + ci] += acc;
      }
    });
  });
}

Var sum(Var a, size_t axis) {
  const Tensor& A = a.value();
  if (axis >= A.rank()) fail(ErrorCode::kShape, "sum: axis " + std::to_string(axis) + " out of range for " + shape_str(A.shape()));
  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= A.dim(i);
  for (size_t i = axis + 1; i < A.rank(); ++i) inner *= A.dim(i);
  const size_t len = A.dim(axis);
  Shape out_shape = A.shape();
  out_shape.erase(out_shape.begin() + static_cast<long>(axis));
  if (out_shape.empty()) out_shape = {1};
  Tensor out(out_shape);
  for (size_t o = 0; o < outer; ++o)
    for (size_t l = 0; l < len; ++l)
      for (size_t i = 0; i < inner; ++i) out[o * inner + i] += A[(o * len + l) * inner + i];
  const size_t ia = a.id();
  return a.tape()->record(std::move(out), a.requires_grad(), [ia, outer, len, inner](Tape& t, size_t, const std::vector<double>& g) {
    auto& da = t.grad_buffer(ia);
    for (size_t o = 0; o < outer; ++o)
      for (size_t l = 0; l < len; ++l)
        for (size_t i = 0; i < inner; ++i) da[(o * len + l) * inner + i] += g[o * inner + i];
  });
}

Var mean(Var a, size_t axis) {
  if (axis >= a.value().rank()) return sum(a, axis);
  return mul_scalar(sum(a, axis), 1.0 / static_cast<double>(a.value().dim(axis)));
}

Var sum_all(Var a) {
  const Tensor& A = a.value();
  double s = 0.0;
  for (double v : A.data()) s += v;
  const size_t ia = a.id();
  return a.tape()->record(Tensor({1}, std::vector<double>{s}), a.requires_grad(),
                          [ia](Tape& t, size_t, const std::vector<double>& g) {
                            for (double& d : t.grad_buffer(ia)) d += g[0];
                          });
}

Var mean_all(Var a) { return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var concat_last(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::kInvalidArgument, "concat_last: no inputs");
  Tape& tape = *parts[0].tape();
  const Tensor& first = parts[0].value();
  const size_t rows = first.rows();
  size_t total = 0;
  bool rg = false;
  std::vector<size_t> ids, widths;
  for (const Var& p : parts) {
    const Tensor& P = p.value();
    Shape lead(P.shape().begin(), P.shape().end() - 1);
    Shape lead0(first.shape().begin(), first.shape().end() - 1);
    if (p.tape() != &tape || lead != lead0) shape_error("concat_last", first.shape(), P.shape());
    total += P.cols();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
    widths.push_back(P.cols());
  }
  Shape out_shape = first.shape();
  out_shape.back() = total;
  Tensor out(out_shape);
  size_t off = 0;
  for (size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = parts[k].value();
    for (size_t r = 0; r < rows; ++r)
      std::copy_n(P.data().data() + r * widths[k], widths[k], out.data().data() + r * total + off);
    off += widths[k];
  }
  return tape.record(std::move(out), rg, [ids, widths, rows, total](Tape& t, size_t, const std::vector<double>& g) {
    size_t off = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        auto& d = t.grad_buffer(ids[k]);
        for (size_t r = 0; r < rows; ++r)
          for (size_t j = 0; j < widths[k]; ++j) d[r * widths[k] + j] += g[r * total + off + j];
      }
      off += widths[k];
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::kInvalidArgument, "concat_rows: no inputs");
  Tape& tape = *parts[0].tape();
  const size_t cols = parts[0].value().cols();
  size_t rows = 0;
  bool rg = false;
  std::vector<size_t> ids, sizes;
  for (const Var& p : parts) {
    if (p.tape() != &tape || p.value().cols() != cols) shape_error("concat_rows", parts[0].shape(), p.shape());
    rows += p.value().rows();
    rg = rg || p.requires_grad();
    ids.push_back(p.id());
    sizes.push_back(p.value().size());
  }
  Tensor out({rows, cols});
  size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<long>(off));
    off += p.value().size();
  }
  return tape.record(std::move(out), rg, [ids, sizes](Tape& t, size_t, const std::vector<double>& g) {
    size_t off = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) {
        auto& d = t.grad_buffer(ids[k]);
        for (size_t i = 0; i < sizes[k]; ++i) d[i] += g[off + i];
      }
      off += sizes[k];
    }
  });
}

Var slice_last(Var a, size_t start, size_t len) {
  const Tensor& A = a.value();
  const size_t cols = A.cols(), rows = A.rows();
  if (len == 0 || start + len > cols) {
    fail(ErrorCode::kShape, "slice_last: [" + std::to_string(start) + ", +" + std::to_string(len) +
                                ") out of range for " + shape_str(A.shape()));
  }
  Shape out_shape = A.shape();
  out_shape.back() = len;
  Tensor out(out_shape);
  for (size_t r = 0; r < rows; ++r)
    std::copy_n(A.data().data() + r * cols + start, len, out.data().data() + r * len);
  const size_t ia = a.id();
  return a.tape()->record(std::move(out), a.requires_grad(), [ia, rows, cols, start, len](Tape& t, size_t, const std::vector<double>& g) {
    auto& da = t.grad_buffer(ia);
    for (size_t r = 0; r < rows; ++r)
      for (size_t j = 0; j < len; ++j) da[r * cols + start + j] += g[r * len + j];
  });
}

Var gather_rows(Var a, const std::vector<size_t>& rows) {
  const Tensor& A = a.value();
  const size_t cols = A.cols(), nrows = A.rows();
  for (size_t r : rows) {
    if (r >= nrows) fail(ErrorCode::kShape, "gather_rows: index " + std::to_string(r) + " out of range for " + shape_str(A.shape()));
  }
  if (rows.empty()) fail(ErrorCode::kShape, "gather_rows: empty index list");
  Tensor out({rows.size(), cols});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(A.data().data() + rows[i] * cols, cols, out.data().data() + i * cols);
  const size_t ia = a.id();
  return a.tape()->record(std::move(out), a.requires_grad(), [ia, rows, cols](Tape& t, size_t, const std::vector<double>& g) {
    auto& da = t.grad_buffer(ia);
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t j = 0; j < cols; ++j) da[rows[i] * cols + j] += g[i * cols + j];
  });
}

Var reshape(Var a, Shape shape) {
  if (shape_size(shape) != a.value().size()) shape_error("reshape", a.shape(), shape);
  const size_t ia = a.id();
  return a.tape()->record(a.value().reshaped(std::move(shape)), a.requires_grad(),
                          [ia](Tape& t, size_t, const std::vector<double>& g) {
                            auto& da = t.grad_buffer(ia);
                            for (size_t i = 0; i < g.size(); ++i) da[i] += g[i];
                          });
}

Var straight_through(Var soft, const Tensor& hard) {
  if (soft.shape() != hard.shape()) shape_error("straight_through", soft.shape(), hard.shape());
  const size_t is = soft.id();
  return soft.tape()->record(hard, soft.requires_grad(), [is](Tape& t, size_t, const std::vector<double>& g) {
    auto& ds = t.grad_buffer(is);
    for (size_t i = 0; i < g.size(); ++i) ds[i] += g[i];
  });
}

Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) fail(ErrorCode::kInvalidArgument, "dropout: p must be < 1");
  Tensor mask(a.shape());
  const double keep = 1.0 / (1.0 - p);
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? 0.0 : keep;
  return mul(a, a.tape()->constant(std::move(mask)));
}

}  // namespace retriever

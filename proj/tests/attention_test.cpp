#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "attention.hpp"
#include "error.hpp"
#include "grad_check.hpp"

using namespace retriever;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.normal(0.0, scale);
  return t;
}

Tensor permute_rows(const Tensor& t, const std::vector<size_t>& perm) {
  Tensor out(t.shape());
  for (size_t i = 0; i < perm.size(); ++i)
    std::copy(t.row(perm[i]).begin(), t.row(perm[i]).end(), out.row(i).begin());
  return out;
}

void set_identity(Parameter* p) { p->value = Tensor::identity(p->value.dim(0)); }

// Straight-line attention with explicit loops, no tape.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  const size_t n = q.dim(0), m = k.dim(0), d = q.dim(1), dv = v.dim(1);
  Tensor out({n, dv});
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> logits(m);
    for (size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (size_t c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
      logits[j] = s / std::sqrt(static_cast<double>(d));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (size_t j = 0; j < m; ++j)
      for (size_t c = 0; c < dv; ++c) out.at(i, c) += logits[j] / z * v.at(j, c);
  }
  return out;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor out({a.dim(0), b.dim(1)});
  for (size_t i = 0; i < a.dim(0); ++i)
    for (size_t j = 0; j < b.dim(1); ++j)
      for (size_t k = 0; k < a.dim(1); ++k) out.at(i, j) += a.at(i, k) * b.at(k, j);
  return out;
}

Tensor columns(const Tensor& t, size_t start, size_t len) {
  Tensor out({t.dim(0), len});
  for (size_t i = 0; i < t.dim(0); ++i)
    for (size_t j = 0; j < len; ++j) out.at(i, j) = t.at(i, start + j);
  return out;
}

}  // namespace

TEST(Attention, SingleKeyReturnsItsValue) {
  Rng rng(1);
  Tape tape;
  Tensor v = random_tensor({1, 3}, rng);
  Var out = attention(tape.constant(random_tensor({4, 2}, rng)), tape.constant(random_tensor({1, 2}, rng)),
                      tape.constant(v));
  for (size_t i = 0; i < 4; ++i)
    for (size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(out.value().at(i, c), v.at(0, c));
}

TEST(Attention, OrthogonalQueryAveragesValues) {
  Tape tape;
  Var out = attention(tape.constant(Tensor::from_rows({{0, 0}})), tape.constant(Tensor::from_rows({{1, 0}, {0, 1}, {1, 1}})),
                      tape.constant(Tensor::from_rows({{3}, {6}, {0}})));
  EXPECT_NEAR(out.value()[0], 3.0, 1e-15);
}

TEST(Attention, TwoKeyScalarExample) {
  // weights softmax([1/sqrt(2), 0]); first weight from 30-digit evaluation.
  Tape tape;
  Var out = attention(tape.constant(Tensor::from_rows({{1, 0}})), tape.constant(Tensor::from_rows({{1, 0}, {0, 1}})),
                      tape.constant(Tensor::from_rows({{1}, {0}})));
  EXPECT_NEAR(out.value()[0], 0.669761549326656926, 1e-15);
}

TEST(Attention, ShapeErrors) {
  Tape tape;
  EXPECT_THROW(attention(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4, 2})), tape.constant(Tensor({4, 1}))),
               Error);
  EXPECT_THROW(attention(tape.constant(Tensor({2, 3})), tape.constant(Tensor({4, 3})), tape.constant(Tensor({3, 1}))),
               Error);
}

TEST(Attention, OutputStaysInsideValueHull) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Tensor v = random_tensor({6, 3}, rng, 2.0);
    Var out = attention(tape.constant(random_tensor({5, 4}, rng, 3.0)), tape.constant(random_tensor({6, 4}, rng, 3.0)),
                        tape.constant(v));
    for (size_t c = 0; c < 3; ++c) {
      double lo = 1e300, hi = -1e300;
      for (size_t j = 0; j < 6; ++j) {
        lo = std::min(lo, v.at(j, c));
        hi = std::max(hi, v.at(j, c));
      }
      for (size_t i = 0; i < 5; ++i) {
        EXPECT_GE(out.value().at(i, c), lo - 1e-12);
        EXPECT_LE(out.value().at(i, c), hi + 1e-12);
      }
    }
  }
}

TEST(MultiHead, HeadsMustDivideDims) {
  Rng rng(0);
  ParameterStore store;
  EXPECT_THROW(MultiHeadParams::create(store, "mha", 6, 6, 6, 4, rng), Error);
  EXPECT_NO_THROW(MultiHeadParams::create(store, "ok", 8, 8, 8, 4, rng));
}

TEST(MultiHead, SingleHeadIdentityProjectionsReduceToAttention) {
  Rng rng(3);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "mha", 4, 4, 4, 1, rng);
  for (Parameter* w : {p.w_q, p.w_k, p.w_v, p.w_o}) set_identity(w);
  Tape tape;
  Var q = tape.constant(random_tensor({3, 4}, rng));
  Var k = tape.constant(random_tensor({5, 4}, rng));
  Var v = tape.constant(random_tensor({5, 4}, rng));
  Var a = multi_head_attention(tape, q, k, v, p).out;
  EXPECT_LT(max_abs_diff(a.value(), attention(q, k, v).value()), 1e-14);
}

TEST(MultiHead, ZeroOutputProjectionZeroesOutput) {
  Rng rng(4);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "mha", 4, 4, 4, 2, rng);
  p.w_o->value = Tensor(p.w_o->value.shape(), 0.0);
  Tape tape;
  Var x = tape.constant(random_tensor({3, 4}, rng));
  Var out = self_attention(tape, x, p);
  for (double v : out.value().data()) EXPECT_EQ(v, 0.0);
  tape.backward(sum_all(mul(out, tape.constant(random_tensor({3, 4}, rng)))));
  double wo = 0.0;
  for (double g : p.w_o->grad.data()) wo += std::abs(g);
  EXPECT_GT(wo, 0.0);
  for (Parameter* w : {p.w_q, p.w_k, p.w_v})
    for (double g : w->grad.data()) EXPECT_EQ(g, 0.0);
}

TEST(MultiHead, TwoHeadsMatchManualComposition) {
  Rng rng(5);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "mha", 4, 6, 6, 2, rng);
  Tensor q = random_tensor({3, 4}, rng), k = random_tensor({5, 6}, rng), v = random_tensor({5, 6}, rng);
  Tape tape;
  Var got = multi_head_attention(tape, tape.constant(q), tape.constant(k), tape.constant(v), p).out;

  const Tensor qp = naive_matmul(q, p.w_q->value);
  const Tensor kp = naive_matmul(k, p.w_k->value);
  const Tensor vp = naive_matmul(v, p.w_v->value);
  const Tensor o0 = naive_attention(columns(qp, 0, 2), columns(kp, 0, 2), columns(vp, 0, 3));
  const Tensor o1 = naive_attention(columns(qp, 2, 2), columns(kp, 2, 2), columns(vp, 3, 3));
  Tensor cat({3, 6});
  for (size_t i = 0; i < 3; ++i)
    for (size_t c = 0; c < 3; ++c) {
      cat.at(i, c) = o0.at(i, c);
      cat.at(i, 3 + c) = o1.at(i, c);
    }
  EXPECT_LT(max_abs_diff(got.value(), naive_matmul(cat, p.w_o->value)), 1e-12);
}

TEST(SelfAttention, SingleTokenIsValueThroughOutputProjection) {
  Rng rng(6);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "sa", 4, 4, 4, 2, rng);
  Tensor x = random_tensor({1, 4}, rng);
  Tape tape;
  Var out = self_attention(tape, tape.constant(x), p);
  EXPECT_LT(max_abs_diff(out.value(), naive_matmul(naive_matmul(x, p.w_v->value), p.w_o->value)), 1e-14);
}

TEST(SelfAttention, ThreeTokensMatchQuadraticLoop) {
  Rng rng(7);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "sa", 2, 2, 2, 1, rng);
  Tensor x = random_tensor({3, 2}, rng);
  Tape tape;
  Var out = self_attention(tape, tape.constant(x), p);
  const Tensor qp = naive_matmul(x, p.w_q->value), kp = naive_matmul(x, p.w_k->value), vp = naive_matmul(x, p.w_v->value);
  Tensor expect({3, 2});
  for (size_t i = 0; i < 3; ++i) {
    double w[3], z = 0.0;
    for (size_t j = 0; j < 3; ++j) {
      w[j] = std::exp((qp.at(i, 0) * kp.at(j, 0) + qp.at(i, 1) * kp.at(j, 1)) / std::sqrt(2.0));
      z += w[j];
    }
    double mix[2] = {0, 0};
    for (size_t j = 0; j < 3; ++j)
      for (size_t c = 0; c < 2; ++c) mix[c] += w[j] / z * vp.at(j, c);
    for (size_t c = 0; c < 2; ++c) expect.at(i, c) = mix[0] * p.w_o->value.at(0, c) + mix[1] * p.w_o->value.at(1, c);
  }
  EXPECT_LT(max_abs_diff(out.value(), expect), 1e-12);
}

TEST(SelfAttention, SomePermutationChangesPerPositionOutput) {
  Rng rng(8);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "sa", 4, 4, 4, 2, rng);
  Tensor x = random_tensor({5, 4}, rng);
  const std::vector<size_t> perm{1, 0, 2, 3, 4};
  Tape tape;
  Var a = self_attention(tape, tape.constant(x), p);
  Var b = self_attention(tape, tape.constant(permute_rows(x, perm)), p);
  EXPECT_GT(max_abs_diff(a.value(), b.value()), 1e-3);
}

TEST(CrossAttention, InvariantToPermutingKeyValueSet) {
  Rng rng(9);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "ca", 8, 6, 6, 2, rng);
  Tensor x = random_tensor({4, 8}, rng), y = random_tensor({12, 6}, rng);
  Tape tape;
  const Tensor base = cross_attention(tape, tape.constant(x), tape.constant(y), p).value();
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    Tape tp;
    const Tensor out =
        cross_attention(tp, tp.constant(x), tp.constant(permute_rows(y, rng.permutation(12))), p).value();
    worst = std::max(worst, max_abs_diff(out, base));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(LinkAttention, JointPermutationOfKeysAndStylesIsInvariant) {
  Rng rng(10);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "link", 8, 4, 4, 2, rng);
  Tensor c = random_tensor({6, 8}, rng), k = random_tensor({5, 4}, rng), s = random_tensor({5, 4}, rng);
  Tape tape;
  const Tensor base = link_attention(tape, tape.constant(c), tape.constant(k), tape.constant(s), p).out.value();
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto perm = rng.permutation(5);
    Tape tp;
    const Tensor out = link_attention(tp, tp.constant(c), tp.constant(permute_rows(k, perm)),
                                      tp.constant(permute_rows(s, perm)), p)
                           .out.value();
    worst = std::max(worst, max_abs_diff(out, base));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(LinkAttention, SingleStyleTokenGivesEveryQueryTheSameStyle) {
  Rng rng(11);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "link", 4, 4, 4, 2, rng);
  Tape tape;
  AttentionResult r = link_attention(tape, tape.constant(random_tensor({7, 4}, rng)),
                                     tape.constant(random_tensor({1, 4}, rng)), tape.constant(random_tensor({1, 4}, rng)),
                                     p, true);
  for (size_t i = 1; i < 7; ++i)
    for (size_t c = 0; c < 4; ++c) EXPECT_NEAR(r.out.value().at(i, c), r.out.value().at(0, c), 1e-14);
}

TEST(LinkAttention, ExposedWeightsAreRowStochastic) {
  Rng rng(12);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "link", 8, 8, 8, 4, rng);
  Tape tape;
  AttentionResult r = link_attention(tape, tape.constant(random_tensor({9, 8}, rng)),
                                     tape.constant(random_tensor({6, 8}, rng)), tape.constant(random_tensor({6, 8}, rng)),
                                     p, true);
  ASSERT_EQ(r.head_weights.size(), 4u);
  const Tensor avg = r.mean_weights();
  for (const Tensor* w : {static_cast<const Tensor*>(&r.head_weights[0]), &avg}) {
    for (size_t i = 0; i < 9; ++i) {
      double s = 0.0;
      for (double v : w->row(i)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(LinkAttention, KeyStyleCountMismatchFails) {
  Rng rng(13);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "link", 4, 4, 4, 1, rng);
  Tape tape;
  EXPECT_THROW(link_attention(tape, tape.constant(Tensor({2, 4})), tape.constant(Tensor({3, 4})),
                              tape.constant(Tensor({4, 4})), p),
               Error);
}

TEST(AttentionGradients, AllVariantsPassGradCheck) {
  Rng rng(14);
  ParameterStore store;
  MultiHeadParams p = MultiHeadParams::create(store, "mha", 4, 4, 4, 2, rng);
  Tensor other = random_tensor({5, 4}, rng);
  Tensor weights = random_tensor({3, 4}, rng);
  Tensor x = random_tensor({3, 4}, rng);

  auto plain = [&](Tape& t, Var in) {
    return sum_all(mul(attention(in, t.constant(other), t.constant(other)), t.constant(weights)));
  };
  auto selfa = [&](Tape& t, Var in) { return sum_all(mul(self_attention(t, in, p), t.constant(weights))); };
  auto cross_q = [&](Tape& t, Var in) {
    return sum_all(mul(cross_attention(t, in, t.constant(other), p), t.constant(weights)));
  };
  auto cross_kv = [&](Tape& t, Var in) {
    return sum_all(mul(cross_attention(t, t.constant(x), in, p), t.constant(weights)));
  };
  EXPECT_LT(grad_check(plain, x).max_rel_error, 1e-5);
  EXPECT_LT(grad_check(selfa, x).max_rel_error, 1e-5);
  EXPECT_LT(grad_check(cross_q, x).max_rel_error, 1e-5);
  EXPECT_LT(grad_check(cross_kv, other).max_rel_error, 1e-5);

  auto through_params = [&](Tape& t) {
    return sum_all(mul(link_attention(t, t.constant(x), t.constant(other), t.constant(other), p).out,
                       t.constant(weights)));
  };
  Rng pick(15);
  EXPECT_LT(grad_check_params(through_params, sample_coords(store, 64, pick)).max_rel_error, 1e-5);
}

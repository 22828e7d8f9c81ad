#include <gtest/gtest.h>

#include <set>

#include "analysis.hpp"
#include "error.hpp"

using namespace retriever;

namespace {

CodeTable table_from(const std::vector<std::vector<uint32_t>>& group0, size_t entries) {
  CodeTable t;
  t.groups = 1;
  t.entries = entries;
  t.tokens = group0[0].size();
  t.codes = group0;
  return t;
}

struct ProbeFixture {
  std::vector<std::vector<uint32_t>> labels;
  std::vector<std::vector<uint32_t>> codes;
  std::vector<size_t> train, test;
};

// Random labels over `classes`; `code_of(labels, t)` builds the code of token t.
template <typename Fn>
ProbeFixture make_probe(size_t samples, size_t tokens, size_t classes, Fn code_of) {
  ProbeFixture f;
  Rng rng(5);
  for (size_t s = 0; s < samples; ++s) {
    std::vector<uint32_t> l(tokens);
    for (auto& v : l) v = static_cast<uint32_t>(rng.index(classes));
    std::vector<uint32_t> c(tokens);
    for (size_t t = 0; t < tokens; ++t) c[t] = code_of(l, t, rng);
    f.labels.push_back(l);
    f.codes.push_back(c);
    (s % 5 == 4 ? f.test : f.train).push_back(s);
  }
  return f;
}

RetrieverConfig tiny_grid() {
  RetrieverConfig c;
  c.domain = Domain::kGrid;
  c.grid_h = 4;
  c.grid_w = 4;
  c.d_raw = 16;
  c.d = 8;
  c.d_c = 8;
  c.d_s = 8;
  c.d_ffn = 8;
  c.l_s = 1;
  c.l_d = 1;
  c.style_tokens = 3;
  c.heads = 2;
  c.groups = 1;
  c.entries = 3;
  c.max_steps = 1;
  return c;
}

Dataset tiny_grid_data() {
  GridSpec g;
  g.height = 4;
  g.width = 4;
  g.parts = 2;
  g.count = 20;
  return gen_grids(g);
}

}  // namespace

TEST(Cooccurrence, HandComputedExample) {
  const Tensor a = Tensor::from_rows({{0.8, 0.2}, {0.4, 0.6}});
  const CooccurrenceMap map = cooccurrence_from({a}, {{0, 1}}, 2);
  EXPECT_NEAR(map.raw.at(0, 0), 0.4, 1e-15);
  EXPECT_NEAR(map.raw.at(1, 1), 0.3, 1e-15);
  EXPECT_NEAR(map.normalized.at(0, 0), 8.0 / 11.0, 1e-15);
  EXPECT_NEAR(map.normalized.at(0, 1), 3.0 / 11.0, 1e-15);
  EXPECT_NEAR(map.normalized.at(1, 0), 4.0 / 13.0, 1e-15);
  EXPECT_NEAR(map.normalized.at(1, 1), 9.0 / 13.0, 1e-15);
  EXPECT_EQ(map.major, (std::vector<size_t>{0, 1}));
  EXPECT_EQ(map.unique_fraction(), 1.0);
}

TEST(Cooccurrence, SingleStyleTokenIsAllOnes) {
  const Tensor a = Tensor::from_rows({{1.0}, {1.0}, {1.0}});
  const CooccurrenceMap map = cooccurrence_from({a}, {{0, 1, 1}}, 2);
  EXPECT_EQ(map.normalized.at(0, 0), 1.0);
  EXPECT_EQ(map.normalized.at(1, 0), 1.0);
}

TEST(Cooccurrence, RowsSumToOne) {
  Rng rng(3);
  std::vector<Tensor> weights;
  std::vector<std::vector<uint32_t>> labels;
  for (size_t s = 0; s < 5; ++s) {
    Tensor w({6, 4});
    for (size_t i = 0; i < 6; ++i) {
      double z = 0.0;
      for (size_t j = 0; j < 4; ++j) z += (w.at(i, j) = rng.uniform(0.1, 1.0));
      for (size_t j = 0; j < 4; ++j) w.at(i, j) /= z;
    }
    weights.push_back(w);
    std::vector<uint32_t> l(6);
    for (auto& v : l) v = static_cast<uint32_t>(rng.index(3));
    labels.push_back(l);
  }
  const CooccurrenceMap map = cooccurrence_from(weights, labels, 3);
  for (size_t c = 0; c < 3; ++c) {
    double row = 0.0;
    for (size_t j = 0; j < 4; ++j) row += map.normalized.at(c, j);
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
}

TEST(Cooccurrence, UniqueMarginAndOrdering) {
  // Equal row sums keep column 1 an exact tie after both normalizations.
  const Tensor a = Tensor::from_rows({{0.6, 0.2, 0.2}, {0.2, 0.2, 0.6}});
  const CooccurrenceMap map = cooccurrence_from({a}, {{0, 1}}, 2);
  EXPECT_EQ(map.major, (std::vector<size_t>{0, 0, 1}));
  EXPECT_EQ(map.unique, (std::vector<bool>{true, false, true}));
  const Tensor b = Tensor::from_rows({{0.2, 0.8}, {0.8, 0.2}});
  EXPECT_EQ(cooccurrence_from({b}, {{0, 1}}, 2).col_order, (std::vector<size_t>{1, 0}));
}

TEST(Cooccurrence, ExportsHaveHeaders) {
  const Tensor a = Tensor::from_rows({{0.8, 0.2}, {0.4, 0.6}});
  const CooccurrenceMap map = cooccurrence_from({a}, {{0, 1}}, 2);
  const std::string csv = cooccurrence_csv(map);
  EXPECT_EQ(csv.find("category,style0,style1\n"), 0u);
  EXPECT_NE(csv.find("major,0,1"), std::string::npos);
  const std::string pgm = cooccurrence_pgm(map, 4);
  EXPECT_EQ(pgm.find("P5\n8 8\n255\n"), 0u);
  EXPECT_EQ(pgm.size(), std::string("P5\n8 8\n255\n").size() + 64);
}

TEST(Cooccurrence, ShapeErrors) {
  EXPECT_THROW(cooccurrence_from({}, {}, 2), Error);
  EXPECT_THROW(cooccurrence_from({Tensor({2, 2}, 0.5)}, {{0}}, 2), Error);
  EXPECT_THROW(cooccurrence_from({Tensor({2, 2}, 0.5)}, {{0, 5}}, 2), Error);
}

TEST(Probe, CodesEqualToLabelsAreFullyDecodable) {
  const auto f = make_probe(100, 16, 4, [](const auto& l, size_t t, Rng&) { return l[t]; });
  const CodeTable codes = table_from(f.codes, 4);
  ProbeOptions o;
  EXPECT_EQ(probe_accuracy(codes, f.labels, 4, f.train, f.test, ProbeMode::kFrame, o), 1.0);
  EXPECT_EQ(probe_accuracy(codes, f.labels, 4, f.train, f.test, ProbeMode::kContext, o), 1.0);
}

TEST(Probe, RandomCodesStayNearChance) {
  const auto f = make_probe(100, 16, 4, [](const auto&, size_t, Rng& rng) { return static_cast<uint32_t>(rng.index(4)); });
  const double acc =
      probe_accuracy(table_from(f.codes, 4), f.labels, 4, f.train, f.test, ProbeMode::kFrame, ProbeOptions{});
  EXPECT_LT(acc, 0.35);
}

TEST(Probe, ContextSeesNeighbors) {
  // Token t's label is stored in the code of token t + 1.
  const auto f = make_probe(100, 16, 4, [](const auto& l, size_t t, Rng&) { return t == 0 ? 0u : l[t - 1]; });
  const CodeTable codes = table_from(f.codes, 4);
  const double frame = probe_accuracy(codes, f.labels, 4, f.train, f.test, ProbeMode::kFrame, ProbeOptions{});
  const double context = probe_accuracy(codes, f.labels, 4, f.train, f.test, ProbeMode::kContext, ProbeOptions{});
  EXPECT_LT(frame, 0.35);
  EXPECT_GT(context, 0.9);
}

TEST(Probe, GroupSelection) {
  CodeTable t;
  t.groups = 2;
  t.entries = 3;
  t.tokens = 8;
  std::vector<std::vector<uint32_t>> labels;
  std::vector<size_t> train, test;
  Rng rng(1);
  for (size_t s = 0; s < 60; ++s) {
    std::vector<uint32_t> l(8), c(16);
    for (size_t i = 0; i < 8; ++i) {
      l[i] = static_cast<uint32_t>(rng.index(3));
      c[i * 2] = static_cast<uint32_t>(rng.index(3));
      c[i * 2 + 1] = l[i];
    }
    labels.push_back(l);
    t.codes.push_back(c);
    (s % 5 == 4 ? test : train).push_back(s);
  }
  ProbeOptions o;
  o.groups = {1};
  EXPECT_EQ(probe_accuracy(t, labels, 3, train, test, ProbeMode::kFrame, o), 1.0);
  o.groups = {0};
  EXPECT_LT(probe_accuracy(t, labels, 3, train, test, ProbeMode::kFrame, o), 0.5);
  o.groups = {2};
  EXPECT_THROW(probe_accuracy(t, labels, 3, train, test, ProbeMode::kFrame, o), Error);
}

TEST(Probe, SingleClassRejected) {
  const auto f = make_probe(20, 4, 1, [](const auto&, size_t, Rng&) { return 0u; });
  EXPECT_THROW(probe_accuracy(table_from(f.codes, 2), f.labels, 1, f.train, f.test, ProbeMode::kFrame, ProbeOptions{}),
               Error);
}

TEST(Transfer, PairsAreHeldOutWithDifferentStyles) {
  SequenceSpec s;
  s.count = 100;
  const Dataset d = gen_sequences(s);
  const auto pairs = transfer_pairs(d, 15);
  EXPECT_EQ(pairs.size(), 15u);
  for (auto [a, b] : pairs) {
    EXPECT_TRUE(is_heldout(a));
    EXPECT_TRUE(is_heldout(b));
    EXPECT_NE(d.style[a], d.style[b]);
  }
}

TEST(Transfer, GridPairsDifferOnEveryPart) {
  const Dataset d = tiny_grid_data();
  const auto pairs = transfer_pairs(d, 10);
  EXPECT_FALSE(pairs.empty());
  for (auto [a, b] : pairs)
    for (size_t k = 0; k < d.symbols; ++k) EXPECT_NE(d.style_of_part(a, k), d.style_of_part(b, k));
}

TEST(Transfer, AllPartsEqualsFullTransfer) {
  RetrieverModel m(tiny_grid(), 3);
  const Dataset d = tiny_grid_data();
  const CooccurrenceMap map = cooccurrence(m, d, split_indices(d, false));
  const std::set<size_t> majors(map.major.begin(), map.major.end());
  const Tensor full = style_transfer(m, d.samples[0], d.samples[1]);
  const Tensor parts = part_transfer(m, d.samples[0], d.samples[1], map, {majors.begin(), majors.end()});
  EXPECT_EQ(max_abs_diff(full, parts), 0.0);
  EXPECT_EQ(max_abs_diff(style_transfer(m, d.samples[0], d.samples[0]), reconstruct(m, d.samples[0])), 0.0);
}

TEST(Transfer, UnmatchedPartsListMajors) {
  RetrieverModel m(tiny_grid(), 3);
  const Dataset d = tiny_grid_data();
  const CooccurrenceMap map = cooccurrence(m, d, {0, 1, 2});
  try {
    part_transfer(m, d.samples[0], d.samples[1], map, {7});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("column majors"), std::string::npos);
  }
}

TEST(Transfer, PartScoresInRange) {
  RetrieverModel m(tiny_grid(), 3);
  const Dataset d = tiny_grid_data();
  const CooccurrenceMap map = cooccurrence(m, d, split_indices(d, false));
  const PartTransferScore s = part_transfer_accuracy(m, d, map, {map.major[0]}, transfer_pairs(d, 3));
  EXPECT_EQ(s.pairs, 3u);
  EXPECT_GE(s.inside, 0.0);
  EXPECT_LE(s.inside, 1.0);
  EXPECT_GE(s.outside, 0.0);
  EXPECT_LE(s.outside, 1.0);
}

TEST(Analysis, ExtractCodesMatchesEncoder) {
  RetrieverModel m(tiny_grid(), 2);
  const Dataset d = tiny_grid_data();
  const CodeTable t = extract_codes(m, d);
  ASSERT_EQ(t.codes.size(), d.count());
  Tape tape;
  const ForwardOptions eval = ForwardOptions::eval();
  const CodeAssignment ca = m.encode_content(tape, m.preprocess(tape, tape.constant(d.samples[3]), eval), eval);
  for (size_t i = 0; i < d.tokens; ++i) EXPECT_EQ(t.at(3, i, 0), ca.code(i, 0));
  const std::string csv = codes_csv(t);
  EXPECT_EQ(csv.find("sample_id,token_index,group,code\n"), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(1 + d.count() * d.tokens));
}

TEST(Analysis, ContentPathIsNotPermutationInvariant) {
  RetrieverModel m(tiny_grid(), 2);
  const Dataset d = tiny_grid_data();
  Rng rng(1);
  EXPECT_GT(pi_check_content(m, d.samples[0], 5, rng), 0.0);
  EXPECT_LE(pi_check(m, d.samples[0], 5, rng), 1e-9);
}

TEST(Analysis, EvaluateReportsBoundedMetrics) {
  RetrieverModel m(tiny_grid(), 2);
  const Dataset d = tiny_grid_data();
  EvalOptions o;
  o.transfer_pairs = 4;
  o.probe.epochs = 2;
  const EvalReport r = evaluate(m, d, o);
  EXPECT_GT(r.rec_mse, 0.0);
  EXPECT_GE(r.code_perplexity, 1.0);
  EXPECT_LE(r.code_perplexity, 3.0 + 1e-12);
  EXPECT_EQ(r.leakage_chance, 0.25);
  for (double v : {r.content.accuracy_frame, r.content.accuracy_context, r.leakage, r.transfer}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const std::string text = eval_report_text(r);
  EXPECT_NE(text.find("content_probe_context "), std::string::npos);
  EXPECT_NE(text.find("style_leakage "), std::string::npos);
}

TEST(Analysis, GridExports) {
  RetrieverModel m(tiny_grid(), 2);
  const Dataset d = tiny_grid_data();
  const std::string ppm = part_assignment_ppm(extract_codes(m, d), d, 0, 2);
  EXPECT_EQ(ppm.find("P6\n8 8\n255\n"), 0u);
  EXPECT_EQ(ppm.size(), std::string("P6\n8 8\n255\n").size() + 8 * 8 * 3);
  const std::string centers = part_centers_csv(m, d, {0, 1});
  EXPECT_EQ(centers.find("sample,part,mass,c_h,c_w,defined\n"), 0u);
  EXPECT_EQ(std::count(centers.begin(), centers.end(), '\n'), 1 + 2 * 2);
}

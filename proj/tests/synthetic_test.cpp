#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "error.hpp"
#include "rng.hpp"
#include "synthetic.hpp"

using namespace retriever;

namespace {

SequenceSpec small_sequences() {
  SequenceSpec s;
  s.count = 200;
  return s;
}

GridSpec small_grids() {
  GridSpec g;
  g.count = 100;
  return g;
}

std::string temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("retriever_synthetic_" + name);
  std::filesystem::remove_all(dir);
  return dir.string();
}

}  // namespace

TEST(Sequences, DeterministicPerSeed) {
  const Dataset a = gen_sequences(small_sequences());
  const Dataset b = gen_sequences(small_sequences());
  EXPECT_EQ(a.hash(), b.hash());
  SequenceSpec other = small_sequences();
  other.seed = 1;
  EXPECT_NE(gen_sequences(other).hash(), a.hash());
}

TEST(Sequences, ShapesAndLabels) {
  const Dataset d = gen_sequences(small_sequences());
  ASSERT_EQ(d.count(), 200u);
  EXPECT_EQ(d.tokens, 32u);
  EXPECT_EQ(d.dim, 64u);
  EXPECT_EQ(d.dictionary.rows(), 32u);
  for (const Tensor& t : d.samples) {
    EXPECT_EQ(t.rows(), 32u);
    EXPECT_EQ(t.cols(), 64u);
  }
  for (uint32_t c : d.content) EXPECT_LT(c, 8u);
  for (uint32_t s : d.style) EXPECT_LT(s, 4u);
}

TEST(Sequences, DictionaryRowsSeparated) {
  const Dataset d = gen_sequences(small_sequences());
  const double max_cos = std::cos(30.0 * M_PI / 180.0);
  for (size_t i = 0; i < d.dictionary.rows(); ++i) {
    for (size_t j = i + 1; j < d.dictionary.rows(); ++j) {
      double dot = 0.0, ni = 0.0, nj = 0.0;
      for (size_t k = 0; k < d.dim; ++k) {
        dot += d.dictionary.at(i, k) * d.dictionary.at(j, k);
        ni += d.dictionary.at(i, k) * d.dictionary.at(i, k);
        nj += d.dictionary.at(j, k) * d.dictionary.at(j, k);
      }
      EXPECT_LE(dot / std::sqrt(ni * nj), max_cos + 1e-12) << i << "," << j;
    }
  }
}

TEST(Sequences, NoiselessIsExactlyIdentifiable) {
  SequenceSpec s = small_sequences();
  s.noise = 0.0;
  const Dataset d = gen_sequences(s);
  for (size_t i = 0; i < d.count(); ++i)
    for (size_t t = 0; t < d.tokens; ++t) {
      const RowMatch m = nearest_row(d, d.samples[i].row(t));
      EXPECT_EQ(m.style, d.style[i]);
      EXPECT_EQ(m.symbol, d.content_at(i, t));
      EXPECT_EQ(m.distance, 0.0);
    }
  const OracleAccuracy acc = oracle_accuracy(d);
  EXPECT_EQ(acc.style, 1.0);
  EXPECT_EQ(acc.symbol, 1.0);
}

TEST(Sequences, DefaultSpecOracleAccuracy) {
  const Dataset d = gen_sequences(SequenceSpec{});
  const OracleAccuracy acc = oracle_accuracy(d);
  EXPECT_GE(acc.style, 0.99);
  EXPECT_GE(acc.symbol, 0.99);
}

TEST(Sequences, StyleIsSetFunction) {
  const Dataset d = gen_sequences(small_sequences());
  Rng rng(3);
  for (size_t i = 0; i < 20; ++i) {
    const Tensor& x = d.samples[i];
    Tensor p(x.shape());
    const auto perm = rng.permutation(x.rows());
    for (size_t r = 0; r < perm.size(); ++r) std::copy(x.row(perm[r]).begin(), x.row(perm[r]).end(), p.row(r).begin());
    EXPECT_EQ(classify_style(d, p), classify_style(d, x));
    EXPECT_EQ(classify_style(d, x), d.style[i]);
  }
}

TEST(Sequences, ContentIsOrderDependent) {
  const Dataset d = gen_sequences(small_sequences());
  size_t reversed_differs = 0;
  for (size_t i = 0; i < d.count(); ++i) {
    bool differs = false;
    for (size_t t = 0; t < d.tokens; ++t) differs |= d.content_at(i, t) != d.content_at(i, d.tokens - 1 - t);
    reversed_differs += differs;
  }
  EXPECT_EQ(reversed_differs, d.count());
}

TEST(Sequences, RunLengthsNearSegmentLength) {
  const Dataset d = gen_sequences(SequenceSpec{});
  size_t runs = 0, tokens = 0;
  for (size_t i = 0; i < d.count(); ++i) {
    ++runs;
    for (size_t t = 1; t < d.tokens; ++t) runs += d.content_at(i, t) != d.content_at(i, t - 1);
    tokens += d.tokens;
  }
  const double mean_run = static_cast<double>(tokens) / static_cast<double>(runs);
  EXPECT_GT(mean_run, 3.0);
  EXPECT_LT(mean_run, 4.5);
}

TEST(Sequences, ClassBalanceWithinTwentyPercent) {
  const Dataset d = gen_sequences(SequenceSpec{});
  std::map<uint32_t, size_t> styles, symbols;
  for (uint32_t s : d.style) styles[s]++;
  for (uint32_t c : d.content) symbols[c]++;
  const double style_mean = static_cast<double>(d.count()) / 4.0;
  const double symbol_mean = static_cast<double>(d.content.size()) / 8.0;
  for (auto [k, n] : styles) EXPECT_NEAR(static_cast<double>(n), style_mean, 0.2 * style_mean) << "style " << k;
  for (auto [k, n] : symbols) EXPECT_NEAR(static_cast<double>(n), symbol_mean, 0.2 * symbol_mean) << "symbol " << k;
  EXPECT_EQ(styles.size(), 4u);
  EXPECT_EQ(symbols.size(), 8u);
}

TEST(Sequences, InseparableDictionaryFails) {
  SequenceSpec s = small_sequences();
  s.dim = 2;
  try {
    gen_sequences(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("dim"), std::string::npos);
  }
}

TEST(Sequences, InvalidSpecRejected) {
  SequenceSpec s = small_sequences();
  s.symbols = 1;
  EXPECT_THROW(gen_sequences(s), Error);
  s = small_sequences();
  s.segment_len = 0.5;
  EXPECT_THROW(gen_sequences(s), Error);
}

TEST(Grids, PartsAreConnectedRectangles) {
  const Dataset d = gen_grids(small_grids());
  EXPECT_EQ(d.tokens, 256u);
  for (size_t i = 0; i < d.count(); ++i) {
    for (uint32_t k = 0; k < 4; ++k) {
      size_t r0 = SIZE_MAX, r1 = 0, c0 = SIZE_MAX, c1 = 0, cells = 0;
      for (size_t r = 0; r < d.height; ++r)
        for (size_t c = 0; c < d.width; ++c)
          if (d.content_at(i, r * d.width + c) == k) {
            r0 = std::min(r0, r);
            r1 = std::max(r1, r);
            c0 = std::min(c0, c);
            c1 = std::max(c1, c);
            ++cells;
          }
      ASSERT_GT(cells, 0u) << "sample " << i << " part " << k;
      EXPECT_EQ(cells, (r1 - r0 + 1) * (c1 - c0 + 1)) << "sample " << i << " part " << k;
    }
  }
}

TEST(Grids, SinglePartCoversGrid) {
  GridSpec g = small_grids();
  g.parts = 1;
  const Dataset d = gen_grids(g);
  for (uint32_t c : d.content) EXPECT_EQ(c, 0u);
}

TEST(Grids, OverflowFails) {
  GridSpec g = small_grids();
  g.height = 2;
  g.width = 2;
  g.parts = 9;
  try {
    gen_grids(g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Grids, AppearanceSwapOracle) {
  const Dataset d = gen_grids(small_grids());
  const OracleAccuracy acc = oracle_accuracy(d);
  EXPECT_GE(acc.style, 0.99);
  EXPECT_GE(acc.symbol, 0.99);
  // Recoloring a sample with another style's rows is classified as that style.
  const size_t i = 0;
  const uint32_t target = (d.style[i] + 1) % d.styles;
  Tensor recolored(d.samples[i].shape());
  for (size_t t = 0; t < d.tokens; ++t) {
    auto row = d.row(target, d.content_at(i, t));
    std::copy(row.begin(), row.end(), recolored.row(t).begin());
  }
  EXPECT_EQ(classify_style(d, recolored), target);
}

TEST(Grids, EachPartHasItsOwnStyle) {
  GridSpec g = small_grids();
  g.noise = 0.0;
  const Dataset d = gen_grids(g);
  ASSERT_EQ(d.part_style.size(), d.count() * d.symbols);
  size_t mixed = 0;
  for (size_t s = 0; s < d.count(); ++s) {
    EXPECT_EQ(d.style[s], d.style_of_part(s, 0));
    for (size_t i = 0; i < d.tokens; ++i) {
      const RowMatch m = nearest_row(d, d.samples[s].row(i));
      EXPECT_EQ(m.style, d.style_at(s, i));
      EXPECT_EQ(m.distance, 0.0);
    }
    for (size_t k = 1; k < d.symbols; ++k) mixed += d.style_of_part(s, k) != d.style_of_part(s, 0);
  }
  EXPECT_GT(mixed, 0u);
  for (size_t k = 0; k < d.symbols; ++k) {
    std::vector<size_t> per(d.styles, 0);
    for (size_t s = 0; s < d.count(); ++s) ++per[d.style_of_part(s, k)];
    EXPECT_EQ(*std::max_element(per.begin(), per.end()) - *std::min_element(per.begin(), per.end()), 0u);
  }
}

TEST(DataSpecs, ParseAndEcho) {
  const DataSpec s = parse_data_spec("kind = grid\nheight = 8\nwidth = 8\nparts = 3\nseed = 4\n");
  EXPECT_EQ(s.kind, DataKind::kGrid);
  EXPECT_EQ(s.grid.height, 8u);
  EXPECT_EQ(s.grid.parts, 3u);
  const DataSpec back = parse_data_spec(data_spec_text(s));
  EXPECT_EQ(data_spec_text(back), data_spec_text(s));
}

TEST(DataSpecs, UnknownKeyNamed) {
  try {
    parse_data_spec("kind = sequence\nsymbolz = 3\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("symbolz"), std::string::npos);
  }
}

TEST(Split, EveryFifthHeldOut) {
  const Dataset d = gen_sequences(small_sequences());
  const auto held = split_indices(d, true), train = split_indices(d, false);
  EXPECT_EQ(held.size(), 40u);
  EXPECT_EQ(train.size(), 160u);
  for (size_t i : held) EXPECT_EQ(i % 5, 4u);
}

TEST(DatasetIo, RoundTripPreservesHash) {
  const Dataset d = gen_grids(small_grids());
  const std::string dir = temp_dir("roundtrip");
  save_dataset(d, dir);
  const Dataset back = load_dataset(dir);
  EXPECT_EQ(back.hash(), d.hash());
  EXPECT_EQ(back.kind, DataKind::kGrid);
  EXPECT_EQ(back.height, d.height);
  EXPECT_EQ(back.content, d.content);
  EXPECT_EQ(back.style, d.style);
  EXPECT_EQ(back.part_style, d.part_style);
  for (size_t i = 0; i < d.count(); ++i) EXPECT_EQ(max_abs_diff(back.samples[i], d.samples[i]), 0.0);
}

TEST(DatasetIo, TruncatedTokensRejected) {
  const Dataset d = gen_sequences(small_sequences());
  const std::string dir = temp_dir("truncated");
  save_dataset(d, dir);
  std::filesystem::resize_file(dir + "/tokens.bin", 100);
  try {
    load_dataset(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kArtifact);
  }
}

TEST(DatasetIo, TamperedLabelsFailHash) {
  const Dataset d = gen_sequences(small_sequences());
  const std::string dir = temp_dir("tampered");
  save_dataset(d, dir);
  std::ofstream(dir + "/styles.csv", std::ios::trunc) << "sample,style\n";
  EXPECT_THROW(load_dataset(dir), Error);
}

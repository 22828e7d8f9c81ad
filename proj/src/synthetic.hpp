#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace retriever {

// Rendering dictionary rows are normalize(c_a + shift * s_y + detail * u_{y,a})
// with shared content bases c_a, global style offsets s_y and
// content-specific style terms u_{y,a}, all standard normal / sqrt(dim).
struct SequenceSpec {
  size_t n = 32;
  size_t symbols = 8;  // A
  size_t styles = 4;   // S_true
  size_t dim = 64;
  double segment_len = 4.0;
  double noise = 0.05;
  size_t count = 2048;
  uint64_t seed = 0;
  double style_shift = 0.6;
  double style_detail = 0.3;
};

// K rectangular parts tile an H x W grid with jittered boundaries; part k
// has content label k. Each sample has one style.
struct GridSpec {
  size_t height = 16;
  size_t width = 16;
  size_t parts = 4;  // K
  size_t styles = 4;
  size_t dim = 16;
  double noise = 0.05;
  size_t count = 1024;
  uint64_t seed = 0;
  double style_shift = 0.4;
  double style_detail = 0.8;
  double jitter = 0.25;  // boundary jitter as a fraction of the nominal part size
};

enum class DataKind { kSequence, kGrid };

struct Dataset {
  DataKind kind = DataKind::kSequence;
  size_t tokens = 0;  // per sample
  size_t dim = 0;
  size_t height = 0;  // grids only
  size_t width = 0;
  size_t symbols = 0;  // content categories
  size_t styles = 0;
  std::vector<Tensor> samples;          // each [tokens, dim]
  std::vector<uint32_t> content;        // [count * tokens]
  std::vector<uint32_t> style;          // [count]; grids: style of part 0
  std::vector<uint32_t> part_style;     // grids only: [count * symbols]
  Tensor dictionary;                    // [styles * symbols, dim], row y * symbols + a
  std::vector<std::pair<std::string, std::string>> spec;  // generator settings echo

  size_t count() const { return samples.size(); }
  uint32_t content_at(size_t sample, size_t token) const { return content[sample * tokens + token]; }
  // Grids draw a style per part; sequences share one style per sample.
  uint32_t style_of_part(size_t sample, size_t part) const {
    return kind == DataKind::kGrid ? part_style[sample * symbols + part] : style[sample];
  }
  uint32_t style_at(size_t sample, size_t token) const { return style_of_part(sample, content_at(sample, token)); }
  // Returns the row of R_y[a].
  std::span<const double> row(size_t y, size_t a) const { return dictionary.row(y * symbols + a); }
  // FNV-1a over the serialized form.
  uint64_t hash() const;
};

Dataset gen_sequences(const SequenceSpec& spec);
Dataset gen_grids(const GridSpec& spec);

// Key=value spec files; the `kind` key selects sequence or grid.
struct DataSpec {
  DataKind kind = DataKind::kSequence;
  SequenceSpec sequence;
  GridSpec grid;
};
DataSpec parse_data_spec(const std::string& text, const std::string& source = "spec");
std::string data_spec_text(const DataSpec& spec);
Dataset generate(const DataSpec& spec);

// Nearest dictionary row for one token.
struct RowMatch {
  uint32_t style = 0;
  uint32_t symbol = 0;
  double distance = 0.0;
};
RowMatch nearest_row(const Dataset& data, std::span<const double> token);
// Majority vote of per-token nearest-row styles; ties go to the lowest label.
// Depends only on the token set.
uint32_t classify_style(const Dataset& data, const Tensor& tokens);
// Fraction of tokens whose nearest-row style and symbol match the labels.
struct OracleAccuracy {
  double style = 0.0;   // sequences: per sample (majority vote); grids: per token
  double symbol = 0.0;  // per token
};
OracleAccuracy oracle_accuracy(const Dataset& data);

// Deterministic held-out split: every sample with index % 5 == 4.
bool is_heldout(size_t index);
std::vector<size_t> split_indices(const Dataset& data, bool heldout);

// Directory layout: dataset.txt manifest, tokens.bin (f64 LE), dictionary.bin,
// content.csv, styles.csv, and part_styles.csv for grids.
void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace retriever

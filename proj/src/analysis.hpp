#pragma once

#include <string>
#include <vector>

#include "model.hpp"
#include "synthetic.hpp"

namespace retriever {

// Max over `trials` random token permutations of |S(pi(X)) - S(X)|_inf.
double pi_check(const RetrieverModel& model, const Tensor& sample, size_t trials, Rng& rng);
// Same harness on the content path: quantized content of pi(X) compared
// position-wise with that of X, without undoing the permutation.
double pi_check_content(const RetrieverModel& model, const Tensor& sample, size_t trials, Rng& rng);

// Evaluation-mode codes (zero Gumbel noise) for every sample.
struct CodeTable {
  size_t groups = 0;
  size_t entries = 0;
  size_t tokens = 0;
  std::vector<std::vector<uint32_t>> codes;  // per sample, [tokens * groups]
  uint32_t at(size_t sample, size_t token, size_t group) const { return codes[sample][token * groups + group]; }
};
CodeTable extract_codes(const RetrieverModel& model, const Dataset& data);
std::string codes_csv(const CodeTable& codes);

enum class ProbeMode {
  kFrame,    // linear layer on one token's code one-hots
  kContext,  // 1-D convolution over a window of code one-hots
};

struct ProbeOptions {
  std::vector<size_t> groups;  // empty: every group
  size_t kernel = 17;          // context window
  size_t epochs = 20;
  size_t batch = 256;
  double lr = 0.05;
  std::vector<uint64_t> seeds{1, 2};
};

// Softmax-regression probe from code one-hots to per-token labels, trained
// with Adam on `train` samples and scored on `test` samples; the accuracy is
// averaged over the seeds. Fails when the labels hold a single class.
double probe_accuracy(const CodeTable& codes, const std::vector<std::vector<uint32_t>>& labels, size_t classes,
                      const std::vector<size_t>& train, const std::vector<size_t>& test, ProbeMode mode,
                      const ProbeOptions& opts);

struct ProbeReport {
  double accuracy_frame = 0.0;
  double accuracy_context = 0.0;
  std::vector<size_t> groups;
};
// Content probe against the ground-truth symbols on the held-out split.
ProbeReport probe_codes(const CodeTable& codes, const Dataset& data, const ProbeOptions& opts);
// Frame probe predicting each sample's style label from its token codes.
double style_leakage(const CodeTable& codes, const Dataset& data, const ProbeOptions& opts);

struct CooccurrenceMap {
  Tensor raw;         // [C, m], sum of link attention mass per category
  Tensor normalized;  // columns scaled to sum 1, then rows scaled to sum 1
  std::vector<size_t> major;      // per style column: argmax category
  std::vector<bool> unique;       // top entry beats the runner-up by kUniqueMargin
  std::vector<size_t> col_order;  // columns sorted by major category
  double unique_fraction() const;
};
constexpr double kUniqueMargin = 1.05;

// Builds the map from per-sample [n, m] attention and per-token labels.
CooccurrenceMap cooccurrence_from(const std::vector<Tensor>& weights, const std::vector<std::vector<uint32_t>>& labels,
                                  size_t categories);
// Link attention of config().analysis_layer over `indices`, with the
// ground-truth content labels.
CooccurrenceMap cooccurrence(const RetrieverModel& model, const Dataset& data, const std::vector<size_t>& indices);
std::string cooccurrence_csv(const CooccurrenceMap& map);
// Binary PGM, one cell per pixel scaled by `scale`, columns in col_order.
std::string cooccurrence_pgm(const CooccurrenceMap& map, size_t scale = 8);

// decode(codes(source), K, S(target)). When `parts` is non-empty only the
// style tokens whose major category is in `parts` come from the target.
Tensor style_transfer(const RetrieverModel& model, const Tensor& source, const Tensor& target);
Tensor part_transfer(const RetrieverModel& model, const Tensor& source, const Tensor& target,
                     const CooccurrenceMap& map, const std::vector<size_t>& parts);
Tensor reconstruct(const RetrieverModel& model, const Tensor& raw);

// True when every part of sample `a` has a different style from the same part of `b`.
bool styles_differ(const Dataset& data, size_t a, size_t b);
// Sequences: majority style vote equals the target label. Grids: most cells
// match the target's style for their part.
bool classified_as_target(const Dataset& data, const Tensor& out, size_t source, size_t target);
// Held-out pairs (source, target) whose styles differ on every part.
std::vector<std::pair<size_t, size_t>> transfer_pairs(const Dataset& data, size_t limit);
// Fraction of pairs whose transferred output is classified as the target.
double transfer_accuracy(const RetrieverModel& model, const Dataset& data,
                         const std::vector<std::pair<size_t, size_t>>& pairs);

struct PartTransferScore {
  double inside = 0.0;   // masked cells classified as the target's style for their part
  double outside = 0.0;  // other cells classified as the source's style for their part
  size_t pairs = 0;
};
PartTransferScore part_transfer_accuracy(const RetrieverModel& model, const Dataset& data, const CooccurrenceMap& map,
                                         const std::vector<size_t>& parts,
                                         const std::vector<std::pair<size_t, size_t>>& pairs);

struct EvalReport {
  double rec_mse = 0.0;  // held-out reconstruction MSE
  double code_perplexity = 0.0;
  ProbeReport content;
  double leakage = 0.0;
  double leakage_chance = 0.0;
  double transfer = 0.0;
  // Content context-probe accuracy per single group and for groups {0, 1}.
  std::vector<double> group_context;
  double group01_context = 0.0;
};
struct EvalOptions {
  size_t transfer_pairs = 200;
  ProbeOptions probe;
  bool per_group = false;
};
EvalReport evaluate(const RetrieverModel& model, const Dataset& data, const EvalOptions& opts);
std::string eval_report_text(const EvalReport& r);

// Grid exports: part-assignment PPM (group-0 codes, one color per code) and
// part centers per image.
std::string part_assignment_ppm(const CodeTable& codes, const Dataset& data, size_t sample, size_t scale = 8);
std::string part_centers_csv(const RetrieverModel& model, const Dataset& data, const std::vector<size_t>& indices);

}  // namespace retriever

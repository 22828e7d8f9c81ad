#pragma once

#include <functional>
#include <string>
#include <vector>

#include "model.hpp"
#include "synthetic.hpp"

namespace retriever {

struct TrainLogRow {
  uint64_t step = 0;
  double tau = 0.0;
  double lr = 0.0;
  double rec = 0.0;
  double vq = 0.0;
  double sc = 0.0;
  double sum = 0.0;
  double perplexity = 0.0;
};

using LogSink = std::function<void(const std::string&)>;

struct TrainOptions {
  // When set, the log CSV and checkpoints are written here.
  std::string out_dir;
  // Continue from this many completed updates (restored model).
  uint64_t start_step = 0;
  // Training samples; defaults to the non-held-out split.
  std::vector<size_t> indices;
  LogSink log;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  uint64_t steps = 0;  // completed updates
  std::string checkpoint;
};

// Updates until max_steps (or all epochs) are done. Batches, Gumbel noise
// and dropout for step s depend only on (seed, s), so a resumed run matches
// an uninterrupted one. Throws kNumeric on divergence after keeping the
// last checkpoint.
TrainResult train(RetrieverModel& model, const Dataset& data, const TrainOptions& opts);

uint64_t total_steps(const RetrieverConfig& config, size_t train_count);
double learning_rate(const RetrieverConfig& config, uint64_t step);
double temperature(const RetrieverConfig& config, uint64_t step);

// Fails with kConfig when the dataset does not fit the model config.
void check_compatible(const RetrieverConfig& config, const Dataset& data);

std::string log_csv_header();
std::string log_csv_row(const TrainLogRow& row);

}  // namespace retriever

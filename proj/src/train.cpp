#include "train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "error.hpp"
#include "keyvalue.hpp"

namespace retriever {

namespace {

constexpr uint64_t kNoiseStream = 1ULL << 32;
constexpr uint64_t kOrderStream = 1ULL << 40;

std::vector<size_t> epoch_order(const std::vector<size_t>& indices, uint64_t seed, uint64_t epoch) {
  std::vector<size_t> order = indices;
  Rng rng(derive_seed(seed, kOrderStream + epoch));
  rng.shuffle(order);
  return order;
}

}  // namespace

uint64_t total_steps(const RetrieverConfig& c, size_t train_count) {
  if (c.max_steps > 0) return c.max_steps;
  const uint64_t per_epoch = (train_count + c.batch - 1) / c.batch;
  return per_epoch * c.epochs;
}

double learning_rate(const RetrieverConfig& c, uint64_t step) {
  if (c.lr_schedule == LrSchedule::kConstant) return c.lr;
  const double s = static_cast<double>(step + 1);
  const double w = static_cast<double>(c.warmup);
  return c.lr * std::min(s / w, std::pow(w / s, c.power));
}

double temperature(const RetrieverConfig& c, uint64_t step) {
  return AnnealSchedule{c.tau_init, c.tau_min, c.tau_decay}.at(step);
}

void check_compatible(const RetrieverConfig& c, const Dataset& data) {
  if (data.dim != c.d_raw) {
    fail(ErrorCode::kConfig, "config field 'd_raw' is " + std::to_string(c.d_raw) + " but the dataset has dim " +
                                 std::to_string(data.dim));
  }
  const bool grid = data.kind == DataKind::kGrid;
  if (grid != (c.domain == Domain::kGrid)) {
    fail(ErrorCode::kConfig, std::string("config field 'domain' does not match the ") + (grid ? "grid" : "sequence") +
                                 " dataset");
  }
  if (grid && (data.height != c.grid_h || data.width != c.grid_w)) {
    fail(ErrorCode::kConfig, "config fields 'grid_h'/'grid_w' are " + std::to_string(c.grid_h) + "x" +
                                 std::to_string(c.grid_w) + " but the dataset grid is " + std::to_string(data.height) +
                                 "x" + std::to_string(data.width));
  }
}

std::string log_csv_header() { return "step,tau,lr,L_rec,L_VQ,L_SC,L_sum,perplexity\n"; }

std::string log_csv_row(const TrainLogRow& r) {
  return std::to_string(r.step) + "," + format_real(r.tau) + "," + format_real(r.lr) + "," + format_real(r.rec) + "," +
         format_real(r.vq) + "," + format_real(r.sc) + "," + format_real(r.sum) + "," + format_real(r.perplexity) + "\n";
}

TrainResult train(RetrieverModel& model, const Dataset& data, const TrainOptions& opts) {
  const RetrieverConfig& c = model.config();
  check_compatible(c, data);
  const std::vector<size_t> indices = opts.indices.empty() ? split_indices(data, false) : opts.indices;
  if (indices.empty()) fail(ErrorCode::kInvalidArgument, "train: no training samples");
  const uint64_t steps = total_steps(c, indices.size());
  const uint64_t per_epoch = (indices.size() + c.batch - 1) / c.batch;

  std::ofstream log_file;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    const std::string path = opts.out_dir + "/train_log.csv";
    const bool append = opts.start_step > 0 && std::filesystem::exists(path);
    log_file.open(path, append ? std::ios::app : std::ios::trunc);
    if (!log_file) fail(ErrorCode::kIo, "cannot open " + path);
    if (!append) log_file << log_csv_header();
  }

  TrainResult result;
  result.steps = opts.start_step;
  auto save = [&](const std::string& name) {
    if (opts.out_dir.empty()) return;
    result.checkpoint = opts.out_dir + "/" + name;
    model.save(result.checkpoint, true, {{"train.step", std::to_string(result.steps)}});
  };

  uint64_t cached_epoch = UINT64_MAX;
  std::vector<size_t> order;
  for (uint64_t step = opts.start_step; step < steps; ++step) {
    const uint64_t epoch = step / per_epoch;
    if (epoch != cached_epoch) {
      order = epoch_order(indices, c.seed, epoch);
      cached_epoch = epoch;
    }
    const size_t begin = static_cast<size_t>((step % per_epoch) * c.batch);
    const size_t end = std::min(order.size(), begin + c.batch);
    std::vector<const Tensor*> batch;
    for (size_t i = begin; i < end; ++i) batch.push_back(&data.samples[order[i]]);

    Rng rng(derive_seed(c.seed, kNoiseStream + step));
    ForwardOptions fo;
    fo.mode = QuantMode::kHard;
    fo.noise = NoiseMode::kSampled;
    fo.tau = temperature(c, step);
    fo.train = true;
    fo.rng = &rng;
    TrainLogRow row;
    row.step = step;
    row.tau = fo.tau;
    row.lr = learning_rate(c, step);
    try {
      Tape tape;
      LossTerms t = model.loss(tape, batch, fo);
      tape.backward(t.total);
      row.rec = t.rec;
      row.vq = t.vq;
      row.sc = t.sc;
      row.sum = t.sum;
      row.perplexity = t.perplexity;
      adam_step(model.params(), AdamOptions{row.lr, c.beta1, c.beta2, 1e-8});
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumeric) throw;
      if (log_file) log_file.flush();
      fail(ErrorCode::kNumeric, "training diverged at step " + std::to_string(step) + ": " + e.what() +
                                    (result.checkpoint.empty() ? "" : "; last checkpoint " + result.checkpoint));
    }
    result.steps = step + 1;
    result.log.push_back(row);
    if (step % c.log_every == 0 || step + 1 == steps) {
      if (log_file) log_file << log_csv_row(row);
      if (opts.log) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "step %llu tau %.4f L_rec %.5f L_VQ %.5f L_SC %.5f L_sum %.5f ppl %.2f",
                      static_cast<unsigned long long>(step), row.tau, row.rec, row.vq, row.sc, row.sum, row.perplexity);
        opts.log(buf);
      }
    }
    if (c.ckpt_every > 0 && result.steps % c.ckpt_every == 0 && result.steps < steps) {
      save("checkpoint-" + std::to_string(result.steps) + ".ckpt");
    }
  }
  save("model.ckpt");
  return result;
}

}  // namespace retriever

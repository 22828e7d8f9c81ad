#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

#include "checkpoint.hpp"
#include "error.hpp"
#include "train.hpp"

using namespace retriever;

namespace {

Dataset small_data() {
  SequenceSpec s;
  s.n = 8;
  s.symbols = 4;
  s.styles = 2;
  s.dim = 8;
  s.count = 40;
  s.segment_len = 2.0;
  return gen_sequences(s);
}

RetrieverConfig small_config() {
  RetrieverConfig c;
  c.d_raw = 8;
  c.d = 8;
  c.d_c = 8;
  c.d_s = 8;
  c.d_ffn = 16;
  c.l_s = 1;
  c.l_d = 1;
  c.style_tokens = 2;
  c.heads = 2;
  c.groups = 2;
  c.entries = 4;
  c.kernel = 3;
  c.batch = 4;
  c.epochs = 0;
  c.max_steps = 20;
  c.lr = 5e-3;
  c.tau_decay = 0.95;
  c.seed = 11;
  return c;
}

std::string fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("retriever_train_" + name);
  std::filesystem::remove_all(dir);
  return dir.string();
}

void expect_same_params(const RetrieverModel& a, const RetrieverModel& b) {
  ASSERT_EQ(a.params().size(), b.params().size());
  for (size_t i = 0; i < a.params().size(); ++i) {
    EXPECT_EQ(max_abs_diff(a.params()[i].value, b.params()[i].value), 0.0) << a.params()[i].name;
  }
}

}  // namespace

TEST(Train, SameSeedIsByteIdentical) {
  const Dataset data = small_data();
  const std::string d1 = fresh_dir("det1"), d2 = fresh_dir("det2");
  RetrieverModel a(small_config(), 1), b(small_config(), 1);
  train(a, data, {d1, 0, {}, nullptr});
  train(b, data, {d2, 0, {}, nullptr});
  expect_same_params(a, b);
  EXPECT_EQ(read_file(d1 + "/train_log.csv"), read_file(d2 + "/train_log.csv"));
  EXPECT_EQ(read_file(d1 + "/model.ckpt.bin"), read_file(d2 + "/model.ckpt.bin"));
}

TEST(Train, DifferentSeedDiffers) {
  const Dataset data = small_data();
  RetrieverConfig c = small_config();
  RetrieverModel a(c, 1);
  const TrainResult ra = train(a, data, {});
  c.seed = 12;
  RetrieverModel b(c, 1);
  const TrainResult rb = train(b, data, {});
  EXPECT_NE(ra.log.back().rec, rb.log.back().rec);
}

TEST(Train, ResumeMatchesUninterrupted) {
  const Dataset data = small_data();
  RetrieverModel full(small_config(), 2);
  const TrainResult whole = train(full, data, {});

  RetrieverConfig half = small_config();
  half.max_steps = 9;
  const std::string dir = fresh_dir("resume");
  RetrieverModel first(half, 2);
  train(first, data, {dir, 0, {}, nullptr});

  const Checkpoint ck = read_checkpoint(dir + "/model.ckpt");
  ASSERT_NE(ck.find_meta("train.step"), nullptr);
  EXPECT_EQ(*ck.find_meta("train.step"), "9");
  RetrieverModel resumed(half, 99);
  resumed.restore(ck);
  resumed.set_training_config(small_config());
  const TrainResult rest = train(resumed, data, {dir, 9, {}, nullptr});
  expect_same_params(full, resumed);
  ASSERT_EQ(rest.log.size(), 11u);
  for (size_t i = 0; i < rest.log.size(); ++i) {
    EXPECT_EQ(rest.log[i].step, whole.log[9 + i].step);
    EXPECT_EQ(rest.log[i].sum, whole.log[9 + i].sum);
  }
  const std::string log = read_file(dir + "/train_log.csv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 21);
  EXPECT_EQ(log.find("step,"), 0u);
  EXPECT_EQ(log.rfind("step,"), 0u);
}

TEST(Train, TemperatureFollowsSchedule) {
  const Dataset data = small_data();
  RetrieverConfig c = small_config();
  c.tau_init = 2.0;
  c.tau_min = 0.9;
  c.tau_decay = 0.95;
  RetrieverModel m(c, 3);
  const TrainResult r = train(m, data, {});
  for (const TrainLogRow& row : r.log) {
    const double expected = std::max(0.9, 2.0 * std::pow(0.95, static_cast<double>(row.step)));
    EXPECT_DOUBLE_EQ(row.tau, expected) << row.step;
  }
  EXPECT_EQ(r.log.back().tau, 0.9);
}

TEST(Train, ReconstructionLossDecreases) {
  const Dataset data = small_data();
  RetrieverConfig c = small_config();
  c.max_steps = 200;
  RetrieverModel m(c, 4);
  const TrainResult r = train(m, data, {});
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  std::vector<double> head, tail;
  for (size_t i = 0; i < 20; ++i) {
    head.push_back(r.log[i].rec);
    tail.push_back(r.log[r.log.size() - 1 - i].rec);
  }
  EXPECT_LT(median(tail), median(head));
}

TEST(Train, CheckpointsAtInterval) {
  const Dataset data = small_data();
  RetrieverConfig c = small_config();
  c.ckpt_every = 5;
  const std::string dir = fresh_dir("ckpt");
  RetrieverModel m(c, 5);
  train(m, data, {dir, 0, {}, nullptr});
  for (int s : {5, 10, 15}) EXPECT_TRUE(std::filesystem::exists(dir + "/checkpoint-" + std::to_string(s) + ".ckpt"));
  EXPECT_FALSE(std::filesystem::exists(dir + "/checkpoint-20.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir + "/model.ckpt"));
}

TEST(Train, DivergenceReportsLastCheckpoint) {
  Dataset data = small_data();
  for (size_t i = 0; i < data.count(); ++i) data.samples[i].at(0, 0) = std::numeric_limits<double>::infinity();
  RetrieverConfig c = small_config();
  const std::string dir = fresh_dir("diverge");
  RetrieverModel m(c, 6);
  try {
    train(m, data, {dir, 0, {}, nullptr});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNumeric);
    EXPECT_NE(std::string(e.what()).find("diverged at step 0"), std::string::npos) << e.what();
  }
}

TEST(Train, IncompatibleDataRejected) {
  const Dataset data = small_data();
  RetrieverConfig c = small_config();
  c.d_raw = 6;
  RetrieverModel m(c, 0);
  try {
    train(m, data, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
    EXPECT_NE(std::string(e.what()).find("d_raw"), std::string::npos);
  }
}

TEST(Schedules, PowerLearningRate) {
  RetrieverConfig c;
  c.lr = 1e-3;
  c.lr_schedule = LrSchedule::kPower;
  c.warmup = 625;
  c.power = 0.3;
  EXPECT_DOUBLE_EQ(learning_rate(c, 0), 1e-3 / 625.0);
  EXPECT_DOUBLE_EQ(learning_rate(c, 624), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(c, 2499), 1e-3 * std::pow(0.25, 0.3));
  c.lr_schedule = LrSchedule::kConstant;
  EXPECT_EQ(learning_rate(c, 5000), 1e-3);
}

TEST(Schedules, TotalSteps) {
  RetrieverConfig c;
  c.batch = 32;
  c.epochs = 3;
  c.max_steps = 0;
  EXPECT_EQ(total_steps(c, 100), 12u);
  c.max_steps = 7;
  EXPECT_EQ(total_steps(c, 100), 7u);
}

TEST(Schedules, LogCsvFormat) {
  EXPECT_EQ(log_csv_header(), "step,tau,lr,L_rec,L_VQ,L_SC,L_sum,perplexity\n");
  TrainLogRow r{3, 0.5, 0.001, 0.25, 0.125, 1, 2, 3.5};
  EXPECT_EQ(log_csv_row(r), "3,0.5,0.001,0.25,0.125,1,2,3.5\n");
}

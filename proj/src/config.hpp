#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace retriever {

enum class Domain { kSequence, kGrid };
enum class DecoderKind { kLink, kAdain };
enum class LrSchedule { kConstant, kPower };

struct RetrieverConfig {
  Domain domain = Domain::kSequence;
  size_t d_raw = 64;  // raw token width
  size_t grid_h = 0;  // grid layout; 0 for sequences
  size_t grid_w = 0;

  size_t d = 64;
  size_t d_c = 64;
  size_t d_s = 64;
  size_t d_ffn = 256;
  size_t l_e = 0;
  size_t l_s = 3;
  size_t l_d = 4;
  size_t style_tokens = 8;  // m
  size_t heads = 4;
  size_t groups = 2;   // G
  size_t entries = 16; // V
  size_t kernel = 31;  // content conv; grids always use 3x3
  DecoderKind decoder = DecoderKind::kLink;
  double dropout = 0.0;

  double lambda_rec = 5.0;
  double lambda_vq = 0.3;
  double lambda_sc = 0.1;
  bool sc_normalize = false;  // grid coordinates scaled to [0, 1]

  double tau_init = 2.0;
  double tau_min = 0.01;
  double tau_decay = 0.9996;

  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  LrSchedule lr_schedule = LrSchedule::kConstant;
  size_t warmup = 625;
  double power = 0.3;
  size_t batch = 32;
  size_t epochs = 10;
  size_t max_steps = 0;  // 0: run all epochs
  uint64_t seed = 0;
  size_t ckpt_every = 0;  // 0: final checkpoint only
  size_t log_every = 1;
  size_t analysis_layer = 0;  // decoder round whose link attention feeds co-occurrence

  // Throws kConfig naming the first offending field.
  void validate() const;
  // Applies one key; throws kConfig for unknown keys or bad values.
  void set(const std::string& key, const std::string& value, size_t line = 0);
  std::string to_text() const;

  static RetrieverConfig parse(const std::string& text, const std::string& source = "config");
  static RetrieverConfig load(const std::string& path);
  // Desk-scale starting points.
  static RetrieverConfig desk_sequence();
  static RetrieverConfig desk_grid();
};

// (key, value) pairs in canonical order.
std::vector<std::pair<std::string, std::string>> config_entries(const RetrieverConfig& c);
// Keys that change parameter shapes or the forward computation.
bool is_architecture_key(const std::string& key);

// Names the first architecture field where `a` and `b` differ, or "".
std::string architecture_mismatch(const RetrieverConfig& a, const RetrieverConfig& b);

}  // namespace retriever

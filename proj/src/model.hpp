#pragma once

#include <memory>
#include <string>
#include <vector>

#include "attention.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "layers.hpp"
#include "quantizer.hpp"

namespace retriever {

// Pre-norm transformer block: x += MHSA(LN x); x += FFN(LN x).
struct EncoderBlock {
  LayerNorm ln_attn;
  MultiHeadParams attn;
  LayerNorm ln_ffn;
  FeedForward ffn;
};

// Z += MHCA(LN Z, LN F); Z += MHSA(LN Z) (token mixing); Z += FFN(LN Z).
struct StyleBlock {
  LayerNorm ln_query;
  LayerNorm ln_features;
  MultiHeadParams cross;
  LayerNorm ln_mix;
  MultiHeadParams mix;
  LayerNorm ln_ffn;
  FeedForward ffn;
};

// Y += MHSA(LN Y); Y += LinkAttn(LN Y, K, S) or AdaIN(LN Y, S); Y += FFN(LN Y).
struct DecoderBlock {
  LayerNorm ln_self;
  MultiHeadParams self;
  LayerNorm ln_link;
  MultiHeadParams link;  // link decoder
  Linear adain;          // AdaIN decoder: flattened S -> [gamma | beta]
  LayerNorm ln_ffn;
  FeedForward ffn;      // sequences
  MixFeedForward mix;   // grids
};

struct ForwardOptions {
  QuantMode mode = QuantMode::kHard;
  NoiseMode noise = NoiseMode::kZero;
  const Tensor* frozen_noise = nullptr;
  double tau = 1.0;
  bool train = false;  // enables dropout
  Rng* rng = nullptr;  // Gumbel noise and dropout
  bool keep_link_weights = false;

  static ForwardOptions eval() { return {}; }
};

struct ModelOutput {
  Var features;            // [n, d] after preprocessing
  Var style;               // [m, d_s]
  CodeAssignment content;  // codes and quantized [n, d_c]
  Var recon;               // [n, d_raw]
  // Head-averaged link attention [n, m] per decoder round, when kept.
  std::vector<Tensor> link_weights;
};

struct LossTerms {
  Var total;
  double rec = 0.0;
  double vq = 0.0;
  double sc = 0.0;
  double sum = 0.0;
  double perplexity = 0.0;  // code perplexity of group 0 in the batch
  size_t empty_parts = 0;
};

class RetrieverModel {
 public:
  RetrieverModel(const RetrieverConfig& config, uint64_t init_seed);
  RetrieverModel(const RetrieverModel&) = delete;
  RetrieverModel& operator=(const RetrieverModel&) = delete;

  const RetrieverConfig& config() const { return config_; }
  // Training-only fields may change between runs; architecture fields may not.
  void set_training_config(const RetrieverConfig& config);
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  Var tokenize(Tape& tape, Var raw) const;
  Var detokenize(Tape& tape, Var y) const;
  Var preprocess(Tape& tape, Var raw, const ForwardOptions& opts) const;
  Var encode_style(Tape& tape, Var features, const ForwardOptions& opts) const;
  CodeAssignment encode_content(Tape& tape, Var features, const ForwardOptions& opts) const;
  Var linking_keys(Tape& tape) const;
  // Decodes quantized content [n, d_c] with style tokens [m, d_s].
  Var decode(Tape& tape, Var quantized, Var style, const ForwardOptions& opts,
             std::vector<Tensor>* link_weights = nullptr) const;

  ModelOutput forward(Tape& tape, const Tensor& raw, const ForwardOptions& opts) const;

  // Style tokens for one sample, value only, evaluation mode.
  Tensor style_of(const Tensor& raw) const;

  // L_sum over a batch; aborts with kNumeric naming a non-finite component.
  LossTerms loss(Tape& tape, const std::vector<const Tensor*>& batch, const ForwardOptions& opts) const;

  // Checkpoint with config echo and parameters; `extra` adds meta pairs and
  // optional Adam state.
  Checkpoint to_checkpoint(bool with_optimizer, const std::vector<std::pair<std::string, std::string>>& extra = {}) const;
  void save(const std::string& path, bool with_optimizer = false,
            const std::vector<std::pair<std::string, std::string>>& extra = {}) const;
  // Restores parameters (and Adam state when present) from a checkpoint
  // whose architecture matches this model.
  void restore(const Checkpoint& ckpt);

  static RetrieverConfig config_from_checkpoint(const Checkpoint& ckpt);
  // Loads a checkpoint; when `runtime` is given its architecture fields
  // must match the stored config (kArtifact naming the field otherwise).
  static std::unique_ptr<RetrieverModel> load(const std::string& path, const RetrieverConfig* runtime = nullptr);

 private:
  Var maybe_dropout(Var x, const ForwardOptions& opts) const;
  Var ffn(Tape& tape, const DecoderBlock& b, Var x, const ForwardOptions& opts) const;

  RetrieverConfig config_;
  ParameterStore params_;
  Linear tokenizer_;
  std::vector<EncoderBlock> encoder_;
  Parameter* prototypes_ = nullptr;  // Z_0 [m, d_s]
  std::vector<StyleBlock> style_blocks_;
  LayerNorm style_out_;
  Codebooks books_;
  Linear content_out_;  // d_c -> d when they differ
  Parameter* keys_ = nullptr;  // [m, d_s]
  Parameter* conv_ = nullptr;  // [kernel, d] or [3, 3, d]
  Parameter* conv_bias_ = nullptr;
  std::vector<DecoderBlock> decoder_;
  LayerNorm final_ln_;
  Linear detokenizer_;
};

}  // namespace retriever

#include "model.hpp"

#include <cmath>

#include "constraints.hpp"
#include "error.hpp"

namespace retriever {

namespace {

MultiHeadParams mha(ParameterStore& s, const std::string& name, size_t q, size_t kv, const RetrieverConfig& c,
                    Rng& rng) {
  return MultiHeadParams::create(s, name, q, kv, kv, c.heads, rng);
}

}  // namespace

RetrieverModel::RetrieverModel(const RetrieverConfig& config, uint64_t init_seed) : config_(config) {
  config_.validate();
  const RetrieverConfig& c = config_;
  const bool grid = c.domain == Domain::kGrid;
  Rng rng(init_seed);
  ParameterStore& s = params_;

  tokenizer_ = Linear::create(s, "tokenizer", c.d_raw, c.d, rng);
  if (c.d_raw == c.d) tokenizer_.weight->value = Tensor::identity(c.d);
  for (size_t i = 0; i < c.l_e; ++i) {
    const std::string p = "encoder." + std::to_string(i);
    EncoderBlock b;
    b.ln_attn = LayerNorm::create(s, p + ".ln_attn", c.d);
    b.attn = mha(s, p + ".attn", c.d, c.d, c, rng);
    b.ln_ffn = LayerNorm::create(s, p + ".ln_ffn", c.d);
    b.ffn = FeedForward::create(s, p + ".ffn", c.d, c.d_ffn, rng);
    encoder_.push_back(b);
  }

  Tensor z0({c.style_tokens, c.d_s});
  for (double& v : z0.data()) v = rng.normal();
  prototypes_ = &s.add("style.prototypes", std::move(z0));
  for (size_t i = 0; i < c.l_s; ++i) {
    const std::string p = "style." + std::to_string(i);
    StyleBlock b;
    b.ln_query = LayerNorm::create(s, p + ".ln_query", c.d_s);
    b.ln_features = LayerNorm::create(s, p + ".ln_features", c.d);
    b.cross = MultiHeadParams::create(s, p + ".cross", c.d_s, c.d, c.d, c.heads, rng);
    b.ln_mix = LayerNorm::create(s, p + ".ln_mix", c.d_s);
    b.mix = mha(s, p + ".mix", c.d_s, c.d_s, c, rng);
    b.ln_ffn = LayerNorm::create(s, p + ".ln_ffn", c.d_s);
    b.ffn = FeedForward::create(s, p + ".ffn", c.d_s, c.d_ffn, rng);
    style_blocks_.push_back(b);
  }
  style_out_ = LayerNorm::create(s, "style.ln_out", c.d_s);

  books_ = Codebooks::create(s, "content", c.d, c.d_c, c.groups, c.entries, rng);
  if (c.d_c != c.d) content_out_ = Linear::create(s, "content.out", c.d_c, c.d, rng);

  if (c.decoder == DecoderKind::kLink) {
    Tensor k({c.style_tokens, c.d_s});
    for (double& v : k.data()) v = rng.normal();
    keys_ = &s.add("decoder.keys", std::move(k));
  }
  // Depthwise content conv, initialized near the identity.
  Tensor w(grid ? Shape{3, 3, c.d} : Shape{c.kernel, c.d});
  for (double& v : w.data()) v = rng.normal(0.0, 0.02);
  const size_t center = grid ? 4 : c.kernel / 2;
  for (size_t ch = 0; ch < c.d; ++ch) w[center * c.d + ch] += 1.0;
  conv_ = &s.add("decoder.conv", std::move(w));
  conv_bias_ = &s.add("decoder.conv_bias", Tensor({c.d}, 0.0));
  for (size_t i = 0; i < c.l_d; ++i) {
    const std::string p = "decoder." + std::to_string(i);
    DecoderBlock b;
    b.ln_self = LayerNorm::create(s, p + ".ln_self", c.d);
    b.self = mha(s, p + ".self", c.d, c.d, c, rng);
    b.ln_link = LayerNorm::create(s, p + ".ln_link", c.d);
    if (c.decoder == DecoderKind::kLink) {
      b.link = MultiHeadParams::create(s, p + ".link", c.d, c.d_s, c.d_s, c.heads, rng);
    } else {
      b.adain = Linear::create(s, p + ".adain", c.style_tokens * c.d_s, 2 * c.d, rng);
    }
    b.ln_ffn = LayerNorm::create(s, p + ".ln_ffn", c.d);
    if (grid) {
      b.mix = MixFeedForward::create(s, p + ".mixffn", c.d, c.d_ffn, rng);
    } else {
      b.ffn = FeedForward::create(s, p + ".ffn", c.d, c.d_ffn, rng);
    }
    decoder_.push_back(b);
  }
  final_ln_ = LayerNorm::create(s, "decoder.ln_out", c.d);
  detokenizer_ = Linear::create(s, "detokenizer", c.d, c.d_raw, rng);
}

void RetrieverModel::set_training_config(const RetrieverConfig& config) {
  const std::string field = architecture_mismatch(config_, config);
  if (!field.empty()) fail(ErrorCode::kArtifact, "config field '" + field + "' differs from the model's");
  config.validate();
  config_ = config;
}

Var RetrieverModel::maybe_dropout(Var x, const ForwardOptions& opts) const {
  if (!opts.train || config_.dropout == 0.0) return x;
  if (!opts.rng) fail(ErrorCode::kInvalidArgument, "dropout in training mode needs an rng");
  return dropout(x, config_.dropout, *opts.rng);
}

Var RetrieverModel::tokenize(Tape& tape, Var raw) const {
  if (raw.shape().size() != 2 || raw.shape()[1] != config_.d_raw) {
    fail(ErrorCode::kShape, "tokenize: expected [n, " + std::to_string(config_.d_raw) + "], got " +
                                shape_str(raw.shape()));
  }
  if (config_.domain == Domain::kGrid && raw.shape()[0] != config_.grid_h * config_.grid_w) {
    fail(ErrorCode::kShape, "tokenize: grid input has " + std::to_string(raw.shape()[0]) + " tokens, config expects " +
                                std::to_string(config_.grid_h) + "x" + std::to_string(config_.grid_w));
  }
  if (config_.domain == Domain::kSequence && raw.shape()[0] < 2) {
    fail(ErrorCode::kShape, "tokenize: sequences need at least 2 tokens");
  }
  return tokenizer_(tape, raw);
}

Var RetrieverModel::detokenize(Tape& tape, Var y) const { return detokenizer_(tape, y); }

Var RetrieverModel::preprocess(Tape& tape, Var raw, const ForwardOptions& opts) const {
  Var x = tokenize(tape, raw);
  for (const EncoderBlock& b : encoder_) {
    x = add(x, maybe_dropout(self_attention(tape, b.ln_attn(tape, x), b.attn), opts));
    x = add(x, b.ffn(tape, b.ln_ffn(tape, x), config_.dropout, opts.train && config_.dropout > 0 ? opts.rng : nullptr));
  }
  return x;
}

Var RetrieverModel::encode_style(Tape& tape, Var features, const ForwardOptions& opts) const {
  Var z = tape.param(*prototypes_);
  for (const StyleBlock& b : style_blocks_) {
    z = add(z, maybe_dropout(cross_attention(tape, b.ln_query(tape, z), b.ln_features(tape, features), b.cross), opts));
    z = add(z, maybe_dropout(self_attention(tape, b.ln_mix(tape, z), b.mix), opts));
    z = add(z, b.ffn(tape, b.ln_ffn(tape, z), config_.dropout, opts.train && config_.dropout > 0 ? opts.rng : nullptr));
  }
  return style_out_(tape, z);
}

CodeAssignment RetrieverModel::encode_content(Tape& tape, Var features, const ForwardOptions& opts) const {
  QuantizeOptions q;
  q.tau = opts.tau;
  q.mode = opts.mode;
  q.noise = opts.noise;
  q.frozen_noise = opts.frozen_noise;
  q.rng = opts.rng;
  return product_quantize(tape, features, books_, q);
}

Var RetrieverModel::linking_keys(Tape& tape) const {
  if (!keys_) fail(ErrorCode::kState, "AdaIN decoder has no linking keys");
  return tape.param(*keys_);
}

Var RetrieverModel::ffn(Tape& tape, const DecoderBlock& b, Var x, const ForwardOptions& opts) const {
  Rng* rng = opts.train && config_.dropout > 0 ? opts.rng : nullptr;
  if (config_.domain == Domain::kGrid) return b.mix(tape, x, config_.grid_h, config_.grid_w, config_.dropout, rng);
  return b.ffn(tape, x, config_.dropout, rng);
}

Var RetrieverModel::decode(Tape& tape, Var quantized, Var style, const ForwardOptions& opts,
                           std::vector<Tensor>* link_weights) const {
  const RetrieverConfig& c = config_;
  if (style.shape() != Shape{c.style_tokens, c.d_s}) {
    fail(ErrorCode::kShape, "decode: style tokens " + shape_str(style.shape()) + ", expected [" +
                                std::to_string(c.style_tokens) + "," + std::to_string(c.d_s) + "]");
  }
  Var content = c.d_c != c.d ? content_out_(tape, quantized) : quantized;
  const size_t n = content.shape()[0];
  Var y;
  if (c.domain == Domain::kGrid) {
    y = reshape(depthwise_conv2d(reshape(content, {c.grid_h, c.grid_w, c.d}), tape.param(*conv_)), {n, c.d});
  } else {
    y = depthwise_conv1d(content, tape.param(*conv_));
  }
  y = add(y, tape.param(*conv_bias_));
  Var keys = keys_ ? tape.param(*keys_) : Var();
  Var flat = c.decoder == DecoderKind::kAdain ? reshape(style, {1, c.style_tokens * c.d_s}) : Var();
  for (const DecoderBlock& b : decoder_) {
    y = add(y, maybe_dropout(self_attention(tape, b.ln_self(tape, y), b.self), opts));
    if (c.decoder == DecoderKind::kLink) {
      AttentionResult r = link_attention(tape, b.ln_link(tape, y), keys, style, b.link, link_weights != nullptr);
      if (link_weights) link_weights->push_back(r.mean_weights());
      y = add(y, maybe_dropout(r.out, opts));
    } else {
      // Instance normalization over tokens, then a style-driven affine map.
      Var affine = reshape(b.adain(tape, flat), {2 * c.d});
      Var gamma = slice_last(affine, 0, c.d);
      Var beta = slice_last(affine, c.d, c.d);
      Var normed = transpose(layer_norm(transpose(b.ln_link(tape, y))));
      y = add(y, maybe_dropout(add(mul(normed, gamma), beta), opts));
    }
    y = add(y, ffn(tape, b, b.ln_ffn(tape, y), opts));
  }
  return detokenize(tape, final_ln_(tape, y));
}

ModelOutput RetrieverModel::forward(Tape& tape, const Tensor& raw, const ForwardOptions& opts) const {
  ModelOutput out;
  out.features = preprocess(tape, tape.constant(raw), opts);
  out.style = encode_style(tape, out.features, opts);
  out.content = encode_content(tape, out.features, opts);
  out.recon = decode(tape, out.content.quantized, out.style, opts, opts.keep_link_weights ? &out.link_weights : nullptr);
  return out;
}

Tensor RetrieverModel::style_of(const Tensor& raw) const {
  Tape tape;
  const ForwardOptions opts = ForwardOptions::eval();
  return encode_style(tape, preprocess(tape, tape.constant(raw), opts), opts).value();
}

LossTerms RetrieverModel::loss(Tape& tape, const std::vector<const Tensor*>& batch, const ForwardOptions& opts) const {
  if (batch.empty()) fail(ErrorCode::kInvalidArgument, "loss: empty batch");
  const RetrieverConfig& c = config_;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  Var rec_sum, sc_sum;
  std::vector<Var> logits;
  std::vector<size_t> group0;
  LossTerms t;
  for (const Tensor* x : batch) {
    ModelOutput o = forward(tape, *x, opts);
    Var rec = mean_all(square(sub(o.recon, tape.constant(*x))));
    rec_sum = rec_sum.valid() ? add(rec_sum, rec) : rec;
    logits.push_back(o.content.logits);
    for (size_t i = 0; i < o.content.tokens; ++i) group0.push_back(o.content.code(i, 0));
    if (c.lambda_sc > 0.0) {
      Var l0 = slice_last(o.content.logits, 0, c.entries);
      Var sc;
      if (c.domain == Domain::kGrid) {
        GeometricLoss g = geometric_concentration_loss(softmax(l0), c.grid_h, c.grid_w, c.sc_normalize);
        t.empty_parts += g.empty_parts;
        sc = g.loss;
      } else {
        sc = truncated_neighborhood_ce_log(log_softmax(l0), std::log(static_cast<double>(c.entries))).sc;
      }
      sc_sum = sc_sum.valid() ? add(sc_sum, sc) : sc;
    }
  }
  Var rec = mul_scalar(rec_sum, inv_b);
  Var vq = vq_perplexity_loss(logits, c.groups, c.entries);
  t.rec = rec.value().item();
  t.vq = vq.value().item();
  Var total = add(mul_scalar(rec, c.lambda_rec), mul_scalar(vq, c.lambda_vq));
  if (sc_sum.valid()) {
    Var sc = mul_scalar(sc_sum, inv_b);
    t.sc = sc.value().item();
    total = add(total, mul_scalar(sc, c.lambda_sc));
  }
  const std::pair<const char*, double> parts[] = {{"L_rec", t.rec}, {"L_VQ", t.vq}, {"L_SC", t.sc}};
  for (auto [name, v] : parts)
    if (!std::isfinite(v)) fail(ErrorCode::kNumeric, std::string("loss component ") + name + " is not finite");
  t.total = total;
  t.sum = total.value().item();
  if (!std::isfinite(t.sum)) fail(ErrorCode::kNumeric, "loss component L_sum is not finite");
  t.perplexity = code_perplexity(group0, 1, c.entries);
  return t;
}

Checkpoint RetrieverModel::to_checkpoint(bool with_optimizer,
                                         const std::vector<std::pair<std::string, std::string>>& extra) const {
  Checkpoint ck;
  for (auto& [k, v] : config_entries(config_)) ck.meta.emplace_back("config." + k, v);
  for (auto& kv : extra) ck.meta.push_back(kv);
  for (const auto& p : params_) ck.records.push_back({p->name, p->value});
  if (with_optimizer) {
    ck.meta.emplace_back("adam.step", std::to_string(params_.size() ? params_[0].step : 0));
    for (const auto& p : params_) {
      if (p->adam_m.size() == 0) continue;
      ck.records.push_back({"adam.m/" + p->name, p->adam_m});
      ck.records.push_back({"adam.v/" + p->name, p->adam_v});
    }
  }
  return ck;
}

void RetrieverModel::save(const std::string& path, bool with_optimizer,
                          const std::vector<std::pair<std::string, std::string>>& extra) const {
  write_checkpoint(path, to_checkpoint(with_optimizer, extra));
}

void RetrieverModel::restore(const Checkpoint& ckpt) {
  for (auto& p : params_) {
    const CheckpointRecord* r = ckpt.find_record(p->name);
    if (!r) fail(ErrorCode::kArtifact, "checkpoint has no parameter '" + p->name + "'");
    if (r->value.shape() != p->value.shape()) {
      fail(ErrorCode::kArtifact, "checkpoint parameter '" + p->name + "' has shape " + shape_str(r->value.shape()) +
                                     ", model expects " + shape_str(p->value.shape()));
    }
    p->value = r->value;
    p->clear_grad();
    const CheckpointRecord* m = ckpt.find_record("adam.m/" + p->name);
    const CheckpointRecord* v = ckpt.find_record("adam.v/" + p->name);
    if (m && v) {
      p->adam_m = m->value;
      p->adam_v = v->value;
    } else {
      p->adam_m = Tensor();
      p->adam_v = Tensor();
    }
  }
  uint64_t step = 0;
  if (const std::string* s = ckpt.find_meta("adam.step")) step = std::stoull(*s);
  for (auto& p : params_) p->step = p->adam_m.size() ? step : 0;
}

RetrieverConfig RetrieverModel::config_from_checkpoint(const Checkpoint& ckpt) {
  RetrieverConfig c;
  bool any = false;
  for (auto& [k, v] : ckpt.meta) {
    if (k.rfind("config.", 0) != 0) continue;
    any = true;
    try {
      c.set(k.substr(7), v);
    } catch (const Error& e) {
      fail(ErrorCode::kArtifact, std::string("checkpoint config: ") + e.what());
    }
  }
  if (!any) fail(ErrorCode::kArtifact, "checkpoint carries no config");
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kArtifact, std::string("checkpoint config: ") + e.what());
  }
  return c;
}

std::unique_ptr<RetrieverModel> RetrieverModel::load(const std::string& path, const RetrieverConfig* runtime) {
  const Checkpoint ck = read_checkpoint(path);
  const RetrieverConfig stored = config_from_checkpoint(ck);
  if (runtime) {
    const std::string field = architecture_mismatch(stored, *runtime);
    if (!field.empty()) {
      std::string have, want;
      for (auto& [k, v] : config_entries(stored))
        if (k == field) have = v;
      for (auto& [k, v] : config_entries(*runtime))
        if (k == field) want = v;
      fail(ErrorCode::kArtifact, "config field '" + field + "' mismatch: checkpoint has " + have + ", runtime has " + want);
    }
  }
  auto model = std::make_unique<RetrieverModel>(runtime ? *runtime : stored, 0);
  model->restore(ck);
  return model;
}

}  // namespace retriever

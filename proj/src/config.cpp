#include "config.hpp"

#include <functional>
#include <set>

#include "checkpoint.hpp"
#include "error.hpp"
#include "keyvalue.hpp"

namespace retriever {

namespace {

struct Field {
  const char* key;
  bool architecture;
  std::function<std::string(const RetrieverConfig&)> get;
  std::function<void(RetrieverConfig&, const KeyValue&)> set;
};

Field count(const char* key, bool arch, size_t RetrieverConfig::*m) {
  return {key, arch, [m](const RetrieverConfig& c) { return std::to_string(c.*m); },
          [m](RetrieverConfig& c, const KeyValue& kv) { c.*m = static_cast<size_t>(parse_count(kv)); }};
}

Field real(const char* key, bool arch, double RetrieverConfig::*m) {
  return {key, arch, [m](const RetrieverConfig& c) { return format_real(c.*m); },
          [m](RetrieverConfig& c, const KeyValue& kv) { c.*m = parse_real(kv); }};
}

template <typename E>
Field choice(const char* key, bool arch, E RetrieverConfig::*m, std::vector<std::pair<E, const char*>> names) {
  return {key, arch,
          [m, names](const RetrieverConfig& c) {
            for (auto& [e, n] : names)
              if (e == c.*m) return std::string(n);
            return std::string("?");
          },
          [m, names, key](RetrieverConfig& c, const KeyValue& kv) {
            std::string options;
            for (auto& [e, n] : names) {
              if (kv.value == n) {
                c.*m = e;
                return;
              }
              options += (options.empty() ? "" : "|") + std::string(n);
            }
            fail(ErrorCode::kConfig, std::string("key '") + key + "': expected " + options + ", got '" + kv.value + "'");
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      choice("domain", true, &RetrieverConfig::domain, {{Domain::kSequence, "sequence"}, {Domain::kGrid, "grid"}}),
      count("d_raw", true, &RetrieverConfig::d_raw),
      count("grid_h", true, &RetrieverConfig::grid_h),
      count("grid_w", true, &RetrieverConfig::grid_w),
      count("d", true, &RetrieverConfig::d),
      count("d_c", true, &RetrieverConfig::d_c),
      count("d_s", true, &RetrieverConfig::d_s),
      count("d_ffn", true, &RetrieverConfig::d_ffn),
      count("l_e", true, &RetrieverConfig::l_e),
      count("l_s", true, &RetrieverConfig::l_s),
      count("l_d", true, &RetrieverConfig::l_d),
      count("style_tokens", true, &RetrieverConfig::style_tokens),
      count("heads", true, &RetrieverConfig::heads),
      count("groups", true, &RetrieverConfig::groups),
      count("entries", true, &RetrieverConfig::entries),
      count("kernel", true, &RetrieverConfig::kernel),
      choice("decoder", true, &RetrieverConfig::decoder, {{DecoderKind::kLink, "link"}, {DecoderKind::kAdain, "adain"}}),
      real("dropout", false, &RetrieverConfig::dropout),
      real("lambda_rec", false, &RetrieverConfig::lambda_rec),
      real("lambda_vq", false, &RetrieverConfig::lambda_vq),
      real("lambda_sc", false, &RetrieverConfig::lambda_sc),
      {"sc_normalize", false, [](const RetrieverConfig& c) { return std::string(c.sc_normalize ? "true" : "false"); },
       [](RetrieverConfig& c, const KeyValue& kv) { c.sc_normalize = parse_flag(kv); }},
      real("tau_init", false, &RetrieverConfig::tau_init),
      real("tau_min", false, &RetrieverConfig::tau_min),
      real("tau_decay", false, &RetrieverConfig::tau_decay),
      real("lr", false, &RetrieverConfig::lr),
      real("beta1", false, &RetrieverConfig::beta1),
      real("beta2", false, &RetrieverConfig::beta2),
      choice("lr_schedule", false, &RetrieverConfig::lr_schedule,
             {{LrSchedule::kConstant, "constant"}, {LrSchedule::kPower, "power"}}),
      count("warmup", false, &RetrieverConfig::warmup),
      real("power", false, &RetrieverConfig::power),
      count("batch", false, &RetrieverConfig::batch),
      count("epochs", false, &RetrieverConfig::epochs),
      count("max_steps", false, &RetrieverConfig::max_steps),
      {"seed", false, [](const RetrieverConfig& c) { return std::to_string(c.seed); },
       [](RetrieverConfig& c, const KeyValue& kv) { c.seed = parse_count(kv); }},
      count("ckpt_every", false, &RetrieverConfig::ckpt_every),
      count("log_every", false, &RetrieverConfig::log_every),
      count("analysis_layer", false, &RetrieverConfig::analysis_layer),
  };
  return f;
}

[[noreturn]] void invalid(const std::string& key, const std::string& why) {
  fail(ErrorCode::kConfig, "config field '" + key + "': " + why);
}

}  // namespace

void RetrieverConfig::validate() const {
  const std::pair<const char*, size_t> positive[] = {
      {"d_raw", d_raw}, {"d", d}, {"d_c", d_c}, {"d_s", d_s}, {"d_ffn", d_ffn}, {"l_d", l_d},
      {"style_tokens", style_tokens}, {"heads", heads}, {"groups", groups}, {"batch", batch}, {"log_every", log_every}};
  for (auto [k, v] : positive)
    if (v == 0) invalid(k, "must be positive");
  if (d % heads != 0) invalid("heads", "must divide d = " + std::to_string(d));
  if (d_s % heads != 0) invalid("heads", "must divide d_s = " + std::to_string(d_s));
  if (d_c % groups != 0) invalid("groups", "must divide d_c = " + std::to_string(d_c));
  if (entries < 2) invalid("entries", "must be at least 2");
  if (domain == Domain::kGrid) {
    if (grid_h == 0 || grid_w == 0) invalid("grid_h", "grid domain needs grid_h and grid_w");
  } else {
    if (kernel % 2 == 0) invalid("kernel", "must be odd");
  }
  if (analysis_layer >= l_d) invalid("analysis_layer", "must be below l_d = " + std::to_string(l_d));
  if (dropout < 0.0 || dropout >= 1.0) invalid("dropout", "must be in [0, 1)");
  if (lambda_rec < 0.0 || lambda_vq < 0.0 || lambda_sc < 0.0) invalid("lambda_rec", "loss weights must be >= 0");
  if (!(tau_min > 0.0) || tau_init < tau_min) invalid("tau_min", "need 0 < tau_min <= tau_init");
  if (!(tau_decay > 0.0) || tau_decay > 1.0) invalid("tau_decay", "must be in (0, 1]");
  if (!(lr > 0.0)) invalid("lr", "must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0) invalid("beta1", "must be in [0, 1)");
  if (beta2 < 0.0 || beta2 >= 1.0) invalid("beta2", "must be in [0, 1)");
  if (lr_schedule == LrSchedule::kPower && warmup == 0) invalid("warmup", "power schedule needs warmup > 0");
  if (epochs == 0 && max_steps == 0) invalid("epochs", "epochs or max_steps must be positive");
}

void RetrieverConfig::set(const std::string& key, const std::string& value, size_t line) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(*this, KeyValue{key, value, line});
      return;
    }
  }
  fail(ErrorCode::kConfig, "unknown config key '" + key + "'" + (line ? " (line " + std::to_string(line) + ")" : ""));
}

std::vector<std::pair<std::string, std::string>> config_entries(const RetrieverConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(c));
  return out;
}

bool is_architecture_key(const std::string& key) {
  for (const Field& f : fields())
    if (key == f.key) return f.architecture;
  return false;
}

std::string architecture_mismatch(const RetrieverConfig& a, const RetrieverConfig& b) {
  for (const Field& f : fields())
    if (f.architecture && f.get(a) != f.get(b)) return f.key;
  return "";
}

std::string RetrieverConfig::to_text() const {
  std::string out;
  for (auto& [k, v] : config_entries(*this)) out += k + " = " + v + "\n";
  return out;
}

RetrieverConfig RetrieverConfig::parse(const std::string& text, const std::string& source) {
  RetrieverConfig c;
  for (const KeyValue& kv : parse_key_values(text, source)) c.set(kv.key, kv.value, kv.line);
  c.validate();
  return c;
}

RetrieverConfig RetrieverConfig::load(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, e.what());
  }
  return parse(text, path);
}

RetrieverConfig RetrieverConfig::desk_sequence() {
  RetrieverConfig c;
  c.domain = Domain::kSequence;
  c.d_raw = 64;
  c.d = 32;
  c.d_c = 32;
  c.d_s = 32;
  c.d_ffn = 64;
  c.l_e = 0;
  c.l_s = 2;
  c.l_d = 2;
  c.style_tokens = 8;
  c.heads = 2;
  c.groups = 2;
  c.entries = 8;
  c.kernel = 5;
  c.lambda_rec = 320.0;
  c.lambda_vq = 0.3;
  c.lambda_sc = 0.1;
  c.lr = 2e-3;
  c.batch = 16;
  c.epochs = 0;
  c.max_steps = 1500;
  c.tau_decay = 0.998;
  return c;
}

RetrieverConfig RetrieverConfig::desk_grid() {
  RetrieverConfig c = desk_sequence();
  c.domain = Domain::kGrid;
  c.grid_h = 8;
  c.grid_w = 8;
  c.d_raw = 16;
  c.l_e = 1;
  c.groups = 1;
  c.entries = 5;
  c.kernel = 3;
  c.lambda_rec = 1.0;
  c.lambda_sc = 4.0;
  c.sc_normalize = true;
  c.analysis_layer = 1;
  c.max_steps = 4000;
  return c;
}

}  // namespace retriever

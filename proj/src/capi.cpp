#include "retriever/retriever.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>

#include "analysis.hpp"
#include "checks.hpp"
#include "constraints.hpp"
#include "error.hpp"
#include "grad_check.hpp"
#include "keyvalue.hpp"
#include "train.hpp"

using namespace retriever;

struct rt_dataset {
  Dataset data;
};

struct rt_model {
  std::unique_ptr<RetrieverModel> model;
  uint64_t train_step = 0;
  mutable std::string config_text;
};

namespace {

thread_local std::string last_error;

template <typename Fn>
rt_status guarded(Fn&& fn) {
  last_error.clear();
  try {
    fn();
    return RT_OK;
  } catch (const Error& e) {
    last_error = e.what();
    return static_cast<rt_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return RT_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return RT_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) fail(ErrorCode::kInvalidArgument, std::string(what) + " is null");
}

DataSpec spec_from(const char* text, const char* source, int64_t seed_override) {
  require(text, "spec text");
  DataSpec spec = parse_data_spec(text, source ? source : "spec");
  if (seed_override >= 0) {
    spec.sequence.seed = static_cast<uint64_t>(seed_override);
    spec.grid.seed = static_cast<uint64_t>(seed_override);
  }
  return spec;
}

const Dataset& data_of(const rt_dataset* d) {
  require(d, "dataset");
  return d->data;
}

const RetrieverModel& model_of(const rt_model* m) {
  require(m, "model");
  return *m->model;
}

// Dataset and checkpoint must agree; a mismatch is an artifact error.
void check_pair(const RetrieverModel& m, const Dataset& d) {
  try {
    check_compatible(m.config(), d);
  } catch (const Error& e) {
    fail(ErrorCode::kArtifact, std::string("checkpoint/dataset mismatch: ") + e.what());
  }
}

void check_sample(const Dataset& d, size_t i) {
  if (i >= d.count()) {
    fail(ErrorCode::kInvalidArgument, "sample " + std::to_string(i) + " out of range (dataset has " +
                                          std::to_string(d.count()) + ")");
  }
}

void fill(rt_check_value* values, size_t capacity, size_t& n, const std::string& name, double value, double bound,
          bool pass) {
  if (n < capacity) {
    rt_check_value& v = values[n];
    std::memset(v.name, 0, sizeof v.name);
    std::strncpy(v.name, name.c_str(), sizeof v.name - 1);
    v.value = value;
    v.bound = bound;
    v.pass = pass ? 1 : 0;
  }
  ++n;
}

void fill_all(rt_check_value* values, size_t capacity, size_t& n, const std::vector<CheckValue>& checks) {
  for (const CheckValue& c : checks) fill(values, capacity, n, c.name, c.value, c.bound, c.pass);
}

}  // namespace

extern "C" {

const char* rt_last_error(void) { return last_error.c_str(); }

const char* rt_version(void) { return "retriever 0.1.0"; }

rt_status rt_dataset_generate(const char* spec_text, const char* source, int64_t seed_override, rt_dataset** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto d = std::make_unique<rt_dataset>();
    d->data = generate(spec_from(spec_text, source, seed_override));
    *out = d.release();
  });
}

rt_status rt_spec_canonical(const char* spec_text, const char* source, int64_t seed_override, char** out) {
  return guarded([&] {
    require(out, "out");
    const std::string text = data_spec_text(spec_from(spec_text, source, seed_override));
    *out = static_cast<char*>(std::malloc(text.size() + 1));
    if (!*out) throw std::bad_alloc();
    std::memcpy(*out, text.c_str(), text.size() + 1);
  });
}

rt_status rt_dataset_save(const rt_dataset* data, const char* dir) {
  return guarded([&] {
    require(dir, "dir");
    save_dataset(data_of(data), dir);
  });
}

rt_status rt_dataset_load(const char* dir, rt_dataset** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = nullptr;
    auto d = std::make_unique<rt_dataset>();
    d->data = load_dataset(dir);
    *out = d.release();
  });
}

rt_status rt_dataset_info_get(const rt_dataset* data, rt_dataset_info* out) {
  return guarded([&] {
    require(out, "out");
    const Dataset& d = data_of(data);
    const OracleAccuracy acc = oracle_accuracy(d);
    *out = rt_dataset_info{d.kind == DataKind::kGrid ? 1 : 0,
                           d.count(),
                           d.tokens,
                           d.dim,
                           d.height,
                           d.width,
                           d.symbols,
                           d.styles,
                           d.hash(),
                           acc.style,
                           acc.symbol};
  });
}

uint32_t rt_dataset_style(const rt_dataset* data, size_t sample) {
  if (!data || sample >= data->data.count()) return UINT32_MAX;
  return data->data.style[sample];
}

uint32_t rt_dataset_part_style(const rt_dataset* data, size_t sample, size_t part) {
  if (!data || sample >= data->data.count() || part >= data->data.symbols) return UINT32_MAX;
  return data->data.style_of_part(sample, part);
}

void rt_dataset_free(rt_dataset* data) { delete data; }

rt_status rt_config_check(const char* config_text, const char* source, size_t* param_count) {
  return guarded([&] {
    require(config_text, "config text");
    const RetrieverConfig c = RetrieverConfig::parse(config_text, source ? source : "config");
    if (param_count) *param_count = RetrieverModel(c, 0).params().scalar_count();
  });
}

rt_status rt_model_create(const char* config_text, const char* source, int64_t seed_override, rt_model** out) {
  return guarded([&] {
    require(config_text, "config text");
    require(out, "out");
    *out = nullptr;
    RetrieverConfig c = RetrieverConfig::parse(config_text, source ? source : "config");
    if (seed_override >= 0) c.seed = static_cast<uint64_t>(seed_override);
    auto m = std::make_unique<rt_model>();
    m->model = std::make_unique<RetrieverModel>(c, c.seed);
    *out = m.release();
  });
}

rt_status rt_model_load(const char* path, const char* runtime_config_text, rt_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto m = std::make_unique<rt_model>();
    if (runtime_config_text) {
      const RetrieverConfig runtime = RetrieverConfig::parse(runtime_config_text, "runtime config");
      m->model = RetrieverModel::load(path, &runtime);
    } else {
      m->model = RetrieverModel::load(path);
    }
    const Checkpoint ck = read_checkpoint(path);
    if (const std::string* step = ck.find_meta("train.step")) m->train_step = std::stoull(*step);
    *out = m.release();
  });
}

rt_status rt_model_save(const rt_model* model, const char* path) {
  return guarded([&] {
    require(path, "path");
    model_of(model).save(path, false, {{"train.step", std::to_string(model->train_step)}});
  });
}

size_t rt_model_param_count(const rt_model* model) { return model ? model->model->params().scalar_count() : 0; }

uint64_t rt_model_train_step(const rt_model* model) { return model ? model->train_step : 0; }

const char* rt_model_config(const rt_model* model) {
  if (!model) return "";
  model->config_text = model->model->config().to_text();
  return model->config_text.c_str();
}

rt_status rt_model_set_training_config(rt_model* model, const char* config_text, const char* source) {
  return guarded([&] {
    require(model, "model");
    require(config_text, "config text");
    model->model->set_training_config(RetrieverConfig::parse(config_text, source ? source : "config"));
  });
}

void rt_model_free(rt_model* model) { delete model; }

rt_status rt_train(rt_model* model, const rt_dataset* data, const char* out_dir, rt_log_fn log, void* user,
                   uint64_t* steps_done) {
  return guarded([&] {
    require(model, "model");
    TrainOptions o;
    o.out_dir = out_dir ? out_dir : "";
    o.start_step = model->train_step;
    if (log) o.log = [&](const std::string& line) { log(line.c_str(), user); };
    const TrainResult r = train(*model->model, data_of(data), o);
    model->train_step = r.steps;
    if (steps_done) *steps_done = r.steps;
  });
}

rt_status rt_evaluate(const rt_model* model, const rt_dataset* data, const rt_eval_options* options,
                      rt_eval_report* out) {
  return guarded([&] {
    check_pair(model_of(model), data_of(data));
    require(out, "out");
    EvalOptions o;
    if (options) {
      if (options->transfer_pairs) o.transfer_pairs = options->transfer_pairs;
      o.per_group = options->per_group != 0;
      o.probe.seeds = {options->probe_seed, options->probe_seed + 1};
    }
    const EvalReport r = evaluate(model_of(model), data_of(data), o);
    *out = rt_eval_report{};
    out->rec_mse = r.rec_mse;
    out->code_perplexity = r.code_perplexity;
    out->content_frame = r.content.accuracy_frame;
    out->content_context = r.content.accuracy_context;
    out->leakage = r.leakage;
    out->leakage_chance = r.leakage_chance;
    out->transfer = r.transfer;
    out->groups = std::min<size_t>(r.group_context.size(), RT_MAX_GROUPS);
    for (size_t g = 0; g < out->groups; ++g) out->group_context[g] = r.group_context[g];
    out->group01_context = r.group01_context;
  });
}

rt_status rt_export_cooccurrence(const rt_model* model, const rt_dataset* data, const char* csv_path,
                                 const char* pgm_path, rt_cooccurrence_info* info) {
  return guarded([&] {
    check_pair(model_of(model), data_of(data));
    const Dataset& d = data_of(data);
    const CooccurrenceMap map = cooccurrence(model_of(model), d, split_indices(d, false));
    if (csv_path) write_file(csv_path, cooccurrence_csv(map));
    if (pgm_path) write_file(pgm_path, cooccurrence_pgm(map));
    if (info) *info = rt_cooccurrence_info{map.normalized.rows(), map.normalized.cols(), map.unique_fraction()};
  });
}

rt_status rt_export_codes(const rt_model* model, const rt_dataset* data, const char* csv_path) {
  return guarded([&] {
    check_pair(model_of(model), data_of(data));
    require(csv_path, "path");
    write_file(csv_path, codes_csv(extract_codes(model_of(model), data_of(data))));
  });
}

rt_status rt_export_part_assignment(const rt_model* model, const rt_dataset* data, size_t sample,
                                    const char* ppm_path) {
  return guarded([&] {
    check_pair(model_of(model), data_of(data));
    require(ppm_path, "path");
    const Dataset& d = data_of(data);
    check_sample(d, sample);
    write_file(ppm_path, part_assignment_ppm(extract_codes(model_of(model), d), d, sample));
  });
}

rt_status rt_export_part_centers(const rt_model* model, const rt_dataset* data, const char* csv_path) {
  return guarded([&] {
    check_pair(model_of(model), data_of(data));
    require(csv_path, "path");
    const Dataset& d = data_of(data);
    write_file(csv_path, part_centers_csv(model_of(model), d, split_indices(d, true)));
  });
}

rt_status rt_export_style_vectors(const rt_model* model, const rt_dataset* data, const char* csv_path) {
  return guarded([&] {
    check_pair(model_of(model), data_of(data));
    require(csv_path, "path");
    const Dataset& d = data_of(data);
    const RetrieverModel& m = model_of(model);
    const size_t width = m.config().style_tokens * m.config().d_s;
    std::string out = "sample,style";
    for (size_t k = 0; k < width; ++k) out += ",s" + std::to_string(k);
    out += "\n";
    for (size_t i : split_indices(d, true)) {
      const Tensor s = m.style_of(d.samples[i]);
      out += std::to_string(i) + "," + std::to_string(d.style[i]);
      for (double v : s.data()) out += "," + format_real(v);
      out += "\n";
    }
    write_file(csv_path, out);
  });
}

rt_status rt_transfer(const rt_model* model, const rt_dataset* data, size_t source, size_t target,
                      const size_t* parts, size_t part_count, double* out, size_t out_len,
                      rt_transfer_result* result) {
  return guarded([&] {
    check_pair(model_of(model), data_of(data));
    const Dataset& d = data_of(data);
    const RetrieverModel& m = model_of(model);
    check_sample(d, source);
    check_sample(d, target);
    const size_t needed = d.tokens * d.dim;
    if (out && out_len < needed) {
      fail(ErrorCode::kInvalidArgument, "output buffer holds " + std::to_string(out_len) + " values, need " +
                                            std::to_string(needed));
    }
    Tensor y;
    std::vector<size_t> chosen;
    if (parts) {
      chosen.assign(parts, parts + part_count);
      const CooccurrenceMap map = cooccurrence(m, d, split_indices(d, false));
      y = part_transfer(m, d.samples[source], d.samples[target], map, chosen);
    } else {
      y = style_transfer(m, d.samples[source], d.samples[target]);
    }
    if (out) std::copy(y.data().begin(), y.data().end(), out);
    if (result) {
      result->source_style = d.style[source];
      result->target_style = d.style[target];
      result->predicted_style = classify_style(d, y);
      size_t in_ok = 0, in_all = 0, out_ok = 0, out_all = 0;
      for (size_t t = 0; t < d.tokens; ++t) {
        const uint32_t s = nearest_row(d, y.row(t)).style;
        const uint32_t part = d.content_at(source, t);
        const bool masked = !parts || std::find(chosen.begin(), chosen.end(), part) != chosen.end();
        if (masked) {
          ++in_all;
          in_ok += s == d.style_of_part(target, part);
        } else {
          ++out_all;
          out_ok += s == d.style_of_part(source, part);
        }
      }
      result->inside = in_all ? static_cast<double>(in_ok) / static_cast<double>(in_all) : 0.0;
      result->outside = out_all ? static_cast<double>(out_ok) / static_cast<double>(out_all) : 0.0;
    }
  });
}

rt_status rt_check(const rt_model* model, const char* what, uint64_t seed, rt_check_value* values, size_t capacity,
                   size_t* count) {
  return guarded([&] {
    require(what, "what");
    require(count, "count");
    if (capacity > 0) require(values, "values");
    size_t n = 0;
    const std::string w = what;
    Rng rng(seed);
    if (w == "pi") {
      const RetrieverModel& m = model_of(model);
      std::vector<Tensor> inputs;
      for (int i = 0; i < 3; ++i) inputs.push_back(random_input(m.config(), rng));
      fill_all(values, capacity, n, pi_checks(m, inputs, 100, rng.next_u64()));
    } else if (w == "grad") {
      const RetrieverModel& m = model_of(model);
      fill_all(values, capacity, n, model_grad_checks(m, random_input(m.config(), rng), 200, rng.next_u64()));
    } else if (w == "losses") {
      fill_all(values, capacity, n, analytic_loss_checks());
    } else {
      fail(ErrorCode::kInvalidArgument, "unknown check '" + w + "' (expected pi, grad or losses)");
    }
    *count = n;
  });
}

void rt_string_free(char* s) { std::free(s); }

}  // extern "C"

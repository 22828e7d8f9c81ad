#include <retriever/retriever.h>

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitArtifact = 4;

struct Failure : std::runtime_error {
  int exit_code;
  Failure(int code, const std::string& msg) : std::runtime_error(msg), exit_code(code) {}
};

int exit_code_of(rt_status s) {
  switch (s) {
    case RT_OK: return kExitOk;
    case RT_ERR_CONFIG: return kExitConfig;
    case RT_ERR_NUMERIC: return kExitNumeric;
    case RT_ERR_ARTIFACT:
    case RT_ERR_IO: return kExitArtifact;
    default: return kExitOther;
  }
}

void check(rt_status s) {
  if (s != RT_OK) throw Failure(exit_code_of(s), rt_last_error());
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Failure(kExitConfig, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Failure(kExitArtifact, "cannot write " + path.string());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Dataset {
  rt_dataset* p = nullptr;
  ~Dataset() { rt_dataset_free(p); }
};

struct Model {
  rt_model* p = nullptr;
  ~Model() { rt_model_free(p); }
};

// Run manifest written into --out; every listed output is relative to it.
class Manifest {
 public:
  Manifest(std::string command, const fs::path& out) : command_(std::move(command)), out_(out) {
    fs::create_directories(out_);
  }

  void set_seed(int64_t seed) { seed_ = seed; }
  void add_input(const std::string& key, const std::string& value) { inputs_.push_back(key + " " + value); }
  void set_config(const std::string& text) { config_ = text; }
  void add_output(const std::string& rel) { outputs_.push_back(rel); }
  fs::path path(const std::string& rel) const { return out_ / rel; }

  void write() const {
    std::string s = "retriever-run 1\ncommand " + command_ + "\nversion " + rt_version() + "\n";
    s += "seed " + (seed_ < 0 ? std::string("default") : std::to_string(seed_)) + "\n";
    for (const std::string& i : inputs_) s += "input " + i + "\n";
    for (const std::string& o : outputs_) {
      if (!fs::exists(out_ / o)) throw Failure(kExitArtifact, "missing output " + (out_ / o).string());
      s += "output " + o + "\n";
    }
    std::istringstream cfg(config_);
    for (std::string line; std::getline(cfg, line);) {
      if (!line.empty()) s += "config " + line + "\n";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    s += "wall_clock_seconds " + fmt(secs) + "\n";
    write_text(out_ / "manifest.txt", s);
  }

 private:
  std::string command_;
  fs::path out_;
  int64_t seed_ = -1;
  std::vector<std::string> inputs_;
  std::string config_;
  std::vector<std::string> outputs_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void load_dataset(const std::string& dir, Dataset& d) { check(rt_dataset_load(dir.c_str(), &d.p)); }

void load_model(const std::string& ckpt, const std::string& config_path, Model& m) {
  if (config_path.empty()) {
    check(rt_model_load(ckpt.c_str(), nullptr, &m.p));
  } else {
    const std::string text = read_text(config_path);
    check(rt_config_check(text.c_str(), config_path.c_str(), nullptr));
    check(rt_model_load(ckpt.c_str(), text.c_str(), &m.p));
  }
}

struct GenerateArgs {
  std::string spec, out;
  int64_t seed = -1;
};

int cmd_generate(const GenerateArgs& a) {
  const std::string text = a.spec.empty() ? std::string() : read_text(a.spec);
  const char* source = a.spec.empty() ? "default spec" : a.spec.c_str();
  char* canonical = nullptr;
  check(rt_spec_canonical(text.c_str(), source, a.seed, &canonical));
  const std::string spec_echo = canonical;
  rt_string_free(canonical);

  Dataset d;
  check(rt_dataset_generate(text.c_str(), source, a.seed, &d.p));
  Manifest man("generate", a.out);
  man.set_seed(a.seed);
  if (!a.spec.empty()) man.add_input("spec", a.spec);
  man.set_config(spec_echo);
  check(rt_dataset_save(d.p, a.out.c_str()));
  write_text(man.path("spec.txt"), spec_echo);
  for (const char* f : {"dataset.txt", "tokens.bin", "dictionary.bin", "content.csv", "styles.csv", "spec.txt"}) {
    man.add_output(f);
  }
  rt_dataset_info info{};
  check(rt_dataset_info_get(d.p, &info));
  if (info.grid) man.add_output("part_styles.csv");
  man.write();
  std::printf("generated %zu samples (%zu tokens x %zu dims), hash %016llx\n", info.count, info.tokens, info.dim,
              static_cast<unsigned long long>(info.hash));
  std::printf("oracle accuracy: style %s symbol %s\n", fmt(info.oracle_style).c_str(),
              fmt(info.oracle_symbol).c_str());
  return kExitOk;
}

struct TrainArgs {
  std::string config, data, out, resume;
  int64_t seed = -1;
  bool dry_run = false;
};

void print_line(const char* line, void*) {
  std::puts(line);
  std::fflush(stdout);
}

int cmd_train(const TrainArgs& a) {
  const std::string text = read_text(a.config);
  size_t params = 0;
  check(rt_config_check(text.c_str(), a.config.c_str(), &params));
  if (a.dry_run) {
    std::printf("config ok: %zu parameters\n", params);
    return kExitOk;
  }
  if (a.data.empty() || a.out.empty()) throw Failure(kExitConfig, "train needs --data and --out (or --dry-run)");

  Dataset d;
  load_dataset(a.data, d);
  Model m;
  if (a.resume.empty()) {
    check(rt_model_create(text.c_str(), a.config.c_str(), a.seed, &m.p));
  } else {
    check(rt_model_load(a.resume.c_str(), text.c_str(), &m.p));
    check(rt_model_set_training_config(m.p, text.c_str(), a.config.c_str()));
  }
  if (!a.resume.empty() && a.seed >= 0) {
    throw Failure(kExitConfig, "--seed cannot change the seed of a resumed run; set it in the config");
  }

  Manifest man("train", a.out);
  man.set_seed(a.seed);
  man.add_input("config", a.config);
  man.add_input("data", a.data);
  if (!a.resume.empty()) man.add_input("resume", a.resume + " step " + std::to_string(rt_model_train_step(m.p)));
  const std::string effective = rt_model_config(m.p);
  man.set_config(effective);
  write_text(man.path("config.txt"), effective);

  uint64_t steps = 0;
  check(rt_train(m.p, d.p, a.out.c_str(), print_line, nullptr, &steps));
  std::vector<std::string> outputs = {"config.txt", "train_log.csv", "model.ckpt", "model.ckpt.bin"};
  std::vector<std::string> ckpts;
  for (const auto& e : fs::directory_iterator(a.out)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("checkpoint-", 0) == 0) ckpts.push_back(name);
  }
  std::sort(ckpts.begin(), ckpts.end());
  outputs.insert(outputs.end(), ckpts.begin(), ckpts.end());
  for (const std::string& o : outputs) man.add_output(o);
  man.write();
  std::printf("trained to step %llu; %zu parameters\n", static_cast<unsigned long long>(steps), params);
  return kExitOk;
}

struct EvalArgs {
  std::string ckpt, data, out, config;
  int64_t seed = -1;
  size_t pairs = 0;
  bool per_group = true;
  size_t sample = 0;
};

int cmd_eval(const EvalArgs& a) {
  Dataset d;
  load_dataset(a.data, d);
  Model m;
  load_model(a.ckpt, a.config, m);
  rt_dataset_info info{};
  check(rt_dataset_info_get(d.p, &info));

  Manifest man("eval", a.out);
  man.set_seed(a.seed);
  man.add_input("ckpt", a.ckpt);
  man.add_input("data", a.data);
  man.set_config(rt_model_config(m.p));

  rt_eval_options opts{a.pairs, a.per_group ? 1 : 0, a.seed < 0 ? 1u : static_cast<uint64_t>(a.seed)};
  rt_eval_report r{};
  check(rt_evaluate(m.p, d.p, &opts, &r));
  std::string report;
  auto line = [&](const std::string& k, double v) { report += k + " " + fmt(v) + "\n"; };
  line("rec_mse", r.rec_mse);
  line("code_perplexity", r.code_perplexity);
  line("content_probe_frame", r.content_frame);
  line("content_probe_context", r.content_context);
  line("style_leakage", r.leakage);
  line("style_leakage_chance", r.leakage_chance);
  line("transfer_accuracy", r.transfer);
  if (a.per_group) {
    for (size_t g = 0; g < r.groups && g < RT_MAX_GROUPS; ++g) line("group" + std::to_string(g) + "_context", r.group_context[g]);
    if (r.groups >= 2) line("group01_context", r.group01_context);
  }

  check(rt_export_codes(m.p, d.p, man.path("codes.csv").c_str()));
  check(rt_export_style_vectors(m.p, d.p, man.path("style_vectors.csv").c_str()));
  man.add_output("codes.csv");
  man.add_output("style_vectors.csv");
  rt_cooccurrence_info co{};
  check(rt_export_cooccurrence(m.p, d.p, man.path("cooccurrence.csv").c_str(), man.path("cooccurrence.pgm").c_str(),
                               &co));
  line("cooccurrence_unique_fraction", co.unique_fraction);
  man.add_output("cooccurrence.csv");
  man.add_output("cooccurrence.pgm");
  if (info.grid) {
    check(rt_export_part_assignment(m.p, d.p, a.sample, man.path("part_assignment.ppm").c_str()));
    check(rt_export_part_centers(m.p, d.p, man.path("part_centers.csv").c_str()));
    man.add_output("part_assignment.ppm");
    man.add_output("part_centers.csv");
  }
  write_text(man.path("eval_report.txt"), report);
  man.add_output("eval_report.txt");
  man.write();
  std::fputs(report.c_str(), stdout);
  return kExitOk;
}

struct TransferArgs {
  std::string ckpt, data, out, config, parts = "all";
  int64_t seed = -1;
  size_t source = 0, target = 0;
};

std::vector<size_t> parse_parts(const std::string& s) {
  std::vector<size_t> parts;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw Failure(kExitConfig, "--parts: expected 'all' or a comma list, got '" + s + "'");
    parts.push_back(v);
  }
  if (parts.empty()) throw Failure(kExitConfig, "--parts: empty list");
  return parts;
}

int cmd_transfer(const TransferArgs& a) {
  const bool all = a.parts == "all";
  const std::vector<size_t> parts = all ? std::vector<size_t>{} : parse_parts(a.parts);
  Dataset d;
  load_dataset(a.data, d);
  Model m;
  load_model(a.ckpt, a.config, m);
  rt_dataset_info info{};
  check(rt_dataset_info_get(d.p, &info));

  Manifest man("transfer", a.out);
  man.set_seed(a.seed);
  man.add_input("ckpt", a.ckpt);
  man.add_input("data", a.data);
  man.add_input("transfer", std::to_string(a.source) + " -> " + std::to_string(a.target) + " parts " + a.parts);
  man.set_config(rt_model_config(m.p));

  std::vector<double> out(info.tokens * info.dim);
  rt_transfer_result r{};
  check(rt_transfer(m.p, d.p, a.source, a.target, all ? nullptr : parts.data(), parts.size(), out.data(), out.size(),
                    &r));
  std::string csv;
  for (size_t t = 0; t < info.tokens; ++t) {
    for (size_t k = 0; k < info.dim; ++k) csv += (k ? "," : "") + fmt(out[t * info.dim + k]);
    csv += "\n";
  }
  write_text(man.path("transfer.csv"), csv);
  std::string report = "source " + std::to_string(a.source) + "\ntarget " + std::to_string(a.target) + "\n";
  report += "source_style " + std::to_string(r.source_style) + "\ntarget_style " + std::to_string(r.target_style) + "\n";
  report += "predicted_style " + std::to_string(r.predicted_style) + "\n";
  report += "inside " + fmt(r.inside) + "\noutside " + fmt(r.outside) + "\n";
  write_text(man.path("transfer_report.txt"), report);
  man.add_output("transfer.csv");
  man.add_output("transfer_report.txt");
  man.write();
  std::fputs(report.c_str(), stdout);
  return kExitOk;
}

struct CheckArgs {
  std::string what, ckpt, config;
  int64_t seed = -1;
};

int cmd_check(const CheckArgs& a) {
  Model m;
  if (a.what != "losses") {
    if (!a.ckpt.empty()) {
      load_model(a.ckpt, a.config, m);
    } else {
      const std::string text = a.config.empty() ? std::string() : read_text(a.config);
      check(rt_model_create(text.c_str(), a.config.empty() ? "default config" : a.config.c_str(), a.seed, &m.p));
    }
  }
  rt_check_value values[64];
  size_t n = 0;
  check(rt_check(m.p, a.what.c_str(), a.seed < 0 ? 0u : static_cast<uint64_t>(a.seed), values, 64, &n));
  bool ok = true;
  for (size_t i = 0; i < n; ++i) {
    std::printf("%s %s bound %s %s\n", values[i].name, fmt(values[i].value).c_str(), fmt(values[i].bound).c_str(),
                values[i].pass ? "pass" : "FAIL");
    ok = ok && values[i].pass;
  }
  return ok ? kExitOk : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Content-style decomposition on synthetic structured data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rt_version()));

  GenerateArgs gen;
  CLI::App* g = app.add_subcommand("generate", "Generate a synthetic dataset");
  g->add_option("--spec", gen.spec, "Dataset spec file (key=value); defaults apply when omitted");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Override the spec seed")->check(CLI::NonNegativeNumber);

  TrainArgs tr;
  CLI::App* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Model config file (key=value)")->required();
  t->add_option("--data", tr.data, "Dataset directory");
  t->add_option("--out", tr.out, "Output directory for the log and checkpoints");
  t->add_option("--seed", tr.seed, "Override the config seed")->check(CLI::NonNegativeNumber);
  t->add_option("--resume", tr.resume, "Continue from this checkpoint");
  t->add_flag("--dry-run", tr.dry_run, "Validate the config and print the parameter count");

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("eval", "Evaluate a checkpoint and export analysis files");
  e->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--config", ev.config, "Runtime config; architecture must match the checkpoint");
  e->add_option("--seed", ev.seed, "Probe seed (default 1)")->check(CLI::NonNegativeNumber);
  e->add_option("--pairs", ev.pairs, "Transfer pairs (default 200)");
  e->add_option("--sample", ev.sample, "Held-out sample for the part image (grid data)");

  TransferArgs tf;
  CLI::App* x = app.add_subcommand("transfer", "Transfer the style of one sample onto another");
  x->add_option("--ckpt", tf.ckpt, "Checkpoint")->required();
  x->add_option("--data", tf.data, "Dataset directory")->required();
  x->add_option("--out", tf.out, "Output directory")->required();
  x->add_option("--source", tf.source, "Content sample index")->required();
  x->add_option("--target", tf.target, "Style sample index")->required();
  x->add_option("--parts", tf.parts, "Content categories to transfer: 'all' or a comma list");
  x->add_option("--config", tf.config, "Runtime config; architecture must match the checkpoint");
  x->add_option("--seed", tf.seed, "Accepted for uniformity; transfer is deterministic")->check(CLI::NonNegativeNumber);

  CheckArgs ck;
  CLI::App* c = app.add_subcommand("check", "Run a verification suite");
  c->add_option("--what", ck.what, "Suite")->required()->check(CLI::IsMember({"pi", "grad", "losses"}));
  c->add_option("--ckpt", ck.ckpt, "Checkpoint to check (pi, grad)");
  c->add_option("--config", ck.config, "Config for a fresh model when no checkpoint is given");
  c->add_option("--seed", ck.seed, "Seed for random inputs and sampling")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int rc = app.exit(err);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*g) return cmd_generate(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*x) return cmd_transfer(tf);
    if (*c) return cmd_check(ck);
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.what());
    return f.exit_code;
  } catch (const fs::filesystem_error& f) {
    std::fprintf(stderr, "error: %s\n", f.what());
    return kExitArtifact;
  }
  return kExitOther;
}

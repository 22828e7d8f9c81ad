#include "analysis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "constraints.hpp"
#include "error.hpp"
#include "keyvalue.hpp"
#include "parallel.hpp"

namespace retriever {

namespace {

Tensor permute_rows(const Tensor& t, const std::vector<size_t>& perm) {
  Tensor out(t.shape());
  for (size_t i = 0; i < perm.size(); ++i) std::copy(t.row(perm[i]).begin(), t.row(perm[i]).end(), out.row(i).begin());
  return out;
}

Tensor quantized_of(const RetrieverModel& model, const Tensor& raw) {
  Tape tape;
  const ForwardOptions opts = ForwardOptions::eval();
  return model.encode_content(tape, model.preprocess(tape, tape.constant(raw), opts), opts).quantized.value();
}

}  // namespace

double pi_check(const RetrieverModel& model, const Tensor& sample, size_t trials, Rng& rng) {
  const Tensor base = model.style_of(sample);
  double worst = 0.0;
  for (size_t t = 0; t < trials; ++t) {
    const Tensor s = model.style_of(permute_rows(sample, rng.permutation(sample.rows())));
    worst = std::max(worst, max_abs_diff(s, base));
  }
  return worst;
}

double pi_check_content(const RetrieverModel& model, const Tensor& sample, size_t trials, Rng& rng) {
  const Tensor base = quantized_of(model, sample);
  double worst = 0.0;
  for (size_t t = 0; t < trials; ++t) {
    worst = std::max(worst, max_abs_diff(quantized_of(model, permute_rows(sample, rng.permutation(sample.rows()))), base));
  }
  return worst;
}

CodeTable extract_codes(const RetrieverModel& model, const Dataset& data) {
  CodeTable table;
  table.groups = model.config().groups;
  table.entries = model.config().entries;
  table.tokens = data.tokens;
  table.codes.resize(data.count());
  parallel_for(data.count(), [&](size_t s) {
    Tape tape;
    const ForwardOptions opts = ForwardOptions::eval();
    CodeAssignment ca = model.encode_content(tape, model.preprocess(tape, tape.constant(data.samples[s]), opts), opts);
    table.codes[s].assign(ca.codes.begin(), ca.codes.end());
  });
  return table;
}

std::string codes_csv(const CodeTable& codes) {
  std::string out = "sample_id,token_index,group,code\n";
  for (size_t s = 0; s < codes.codes.size(); ++s)
    for (size_t t = 0; t < codes.tokens; ++t)
      for (size_t g = 0; g < codes.groups; ++g)
        out += std::to_string(s) + "," + std::to_string(t) + "," + std::to_string(g) + "," +
               std::to_string(codes.at(s, t, g)) + "\n";
  return out;
}

namespace {

struct ProbeData {
  size_t features = 0;
  size_t active = 0;                 // feature slots per token (padding uses -1)
  std::vector<int64_t> index;        // [tokens * active]
  std::vector<uint32_t> label;       // [tokens]
};

ProbeData probe_data(const CodeTable& codes, const std::vector<std::vector<uint32_t>>& labels,
                     const std::vector<size_t>& samples, const std::vector<size_t>& groups, ProbeMode mode,
                     size_t kernel) {
  ProbeData d;
  const size_t span = mode == ProbeMode::kFrame ? 1 : kernel;
  const long half = static_cast<long>(span / 2);
  const size_t G = groups.size(), V = codes.entries;
  d.features = span * G * V;
  d.active = span * G;
  for (size_t s : samples) {
    for (size_t t = 0; t < codes.tokens; ++t) {
      for (size_t o = 0; o < span; ++o) {
        const long p = static_cast<long>(t) + static_cast<long>(o) - half;
        for (size_t j = 0; j < G; ++j) {
          if (p < 0 || p >= static_cast<long>(codes.tokens)) {
            d.index.push_back(-1);
          } else {
            d.index.push_back(static_cast<int64_t>((o * G + j) * V + codes.at(s, static_cast<size_t>(p), groups[j])));
          }
        }
      }
      d.label.push_back(labels[s][t]);
    }
  }
  return d;
}

void logits_of(const ProbeData& d, size_t row, const std::vector<double>& w, const std::vector<double>& b,
               size_t classes, std::vector<double>& out) {
  out.assign(b.begin(), b.end());
  for (size_t a = 0; a < d.active; ++a) {
    const int64_t f = d.index[row * d.active + a];
    if (f < 0) continue;
    const double* wr = w.data() + static_cast<size_t>(f) * classes;
    for (size_t c = 0; c < classes; ++c) out[c] += wr[c];
  }
}

double run_probe(const ProbeData& train, const ProbeData& test, size_t classes, const ProbeOptions& opts,
                 uint64_t seed) {
  const size_t F = train.features, C = classes;
  std::vector<double> w(F * C, 0.0), b(C, 0.0);
  std::vector<double> mw(w.size(), 0.0), vw(w.size(), 0.0), mb(C, 0.0), vb(C, 0.0);
  std::vector<double> gw(w.size(), 0.0), gb(C, 0.0), logits;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  const size_t n = train.label.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  uint64_t step = 0;
  for (size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < n; start += opts.batch) {
      const size_t end = std::min(n, start + opts.batch);
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (size_t k = start; k < end; ++k) {
        const size_t row = order[k];
        logits_of(train, row, w, b, C, logits);
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - mx));
        for (size_t c = 0; c < C; ++c) {
          const double g = (logits[c] / z - (c == train.label[row] ? 1.0 : 0.0)) * scale;
          gb[c] += g;
          for (size_t a = 0; a < train.active; ++a) {
            const int64_t f = train.index[row * train.active + a];
            if (f >= 0) gw[static_cast<size_t>(f) * C + c] += g;
          }
        }
      }
      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      auto update = [&](std::vector<double>& p, std::vector<double>& m, std::vector<double>& v,
                        const std::vector<double>& g) {
        for (size_t i = 0; i < p.size(); ++i) {
          m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
          v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
          p[i] -= opts.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
      };
      update(w, mw, vw, gw);
      update(b, mb, vb, gb);
    }
  }
  size_t correct = 0;
  for (size_t row = 0; row < test.label.size(); ++row) {
    logits_of(test, row, w, b, C, logits);
    const size_t arg = static_cast<size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (arg == test.label[row]) ++correct;
  }
  return test.label.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test.label.size());
}

std::vector<size_t> all_groups(const CodeTable& codes, const ProbeOptions& opts) {
  if (!opts.groups.empty()) {
    for (size_t g : opts.groups)
      if (g >= codes.groups) fail(ErrorCode::kInvalidArgument, "probe: group " + std::to_string(g) + " out of range");
    return opts.groups;
  }
  std::vector<size_t> g(codes.groups);
  std::iota(g.begin(), g.end(), 0);
  return g;
}

}  // namespace

double probe_accuracy(const CodeTable& codes, const std::vector<std::vector<uint32_t>>& labels, size_t classes,
                      const std::vector<size_t>& train, const std::vector<size_t>& test, ProbeMode mode,
                      const ProbeOptions& opts) {
  if (train.empty() || test.empty()) fail(ErrorCode::kInvalidArgument, "probe: empty train or test split");
  if (opts.kernel % 2 == 0) fail(ErrorCode::kInvalidArgument, "probe: context kernel must be odd");
  if (opts.seeds.empty()) fail(ErrorCode::kInvalidArgument, "probe: no seeds");
  std::set<uint32_t> seen;
  for (size_t s : train)
    for (uint32_t l : labels[s]) {
      if (l >= classes) fail(ErrorCode::kInvalidArgument, "probe: label " + std::to_string(l) + " out of range");
      seen.insert(l);
    }
  if (seen.size() < 2) fail(ErrorCode::kInvalidArgument, "probe: labels hold a single class");
  const std::vector<size_t> groups = all_groups(codes, opts);
  const ProbeData tr = probe_data(codes, labels, train, groups, mode, opts.kernel);
  const ProbeData te = probe_data(codes, labels, test, groups, mode, opts.kernel);
  double total = 0.0;
  for (uint64_t seed : opts.seeds) total += run_probe(tr, te, classes, opts, seed);
  return total / static_cast<double>(opts.seeds.size());
}

namespace {

std::vector<std::vector<uint32_t>> content_labels(const Dataset& data) {
  std::vector<std::vector<uint32_t>> out(data.count());
  for (size_t s = 0; s < data.count(); ++s)
    out[s].assign(data.content.begin() + static_cast<long>(s * data.tokens),
                  data.content.begin() + static_cast<long>((s + 1) * data.tokens));
  return out;
}

}  // namespace

ProbeReport probe_codes(const CodeTable& codes, const Dataset& data, const ProbeOptions& opts) {
  const auto labels = content_labels(data);
  const auto train = split_indices(data, false), test = split_indices(data, true);
  ProbeReport r;
  r.groups = all_groups(codes, opts);
  r.accuracy_frame = probe_accuracy(codes, labels, data.symbols, train, test, ProbeMode::kFrame, opts);
  r.accuracy_context = probe_accuracy(codes, labels, data.symbols, train, test, ProbeMode::kContext, opts);
  return r;
}

double style_leakage(const CodeTable& codes, const Dataset& data, const ProbeOptions& opts) {
  std::vector<std::vector<uint32_t>> labels(data.count());
  for (size_t s = 0; s < data.count(); ++s) {
    labels[s].resize(data.tokens);
    for (size_t i = 0; i < data.tokens; ++i) labels[s][i] = data.style_at(s, i);
  }
  return probe_accuracy(codes, labels, data.styles, split_indices(data, false), split_indices(data, true),
                        ProbeMode::kFrame, opts);
}

double CooccurrenceMap::unique_fraction() const {
  if (unique.empty()) return 0.0;
  return static_cast<double>(std::count(unique.begin(), unique.end(), true)) / static_cast<double>(unique.size());
}

CooccurrenceMap cooccurrence_from(const std::vector<Tensor>& weights, const std::vector<std::vector<uint32_t>>& labels,
                                  size_t categories) {
  if (weights.empty()) fail(ErrorCode::kInvalidArgument, "cooccurrence: empty dataset");
  if (weights.size() != labels.size()) fail(ErrorCode::kShape, "cooccurrence: weights and labels differ in count");
  const size_t m = weights[0].cols();
  CooccurrenceMap map;
  map.raw = Tensor({categories, m}, 0.0);
  size_t tokens = 0;
  for (size_t s = 0; s < weights.size(); ++s) {
    const Tensor& a = weights[s];
    if (a.cols() != m || a.rows() != labels[s].size()) fail(ErrorCode::kShape, "cooccurrence: sample shape mismatch");
    for (size_t t = 0; t < a.rows(); ++t) {
      const uint32_t c = labels[s][t];
      if (c >= categories) fail(ErrorCode::kInvalidArgument, "cooccurrence: label out of range");
      for (size_t j = 0; j < m; ++j) map.raw.at(c, j) += a.at(t, j);
      ++tokens;
    }
  }
  for (double& v : map.raw.data()) v /= static_cast<double>(tokens);

  map.normalized = map.raw;
  Tensor& n = map.normalized;
  for (size_t j = 0; j < m; ++j) {
    double col = 0.0;
    for (size_t c = 0; c < categories; ++c) col += n.at(c, j);
    if (col > 0.0)
      for (size_t c = 0; c < categories; ++c) n.at(c, j) /= col;
  }
  for (size_t c = 0; c < categories; ++c) {
    double row = 0.0;
    for (size_t j = 0; j < m; ++j) row += n.at(c, j);
    if (row > 0.0)
      for (size_t j = 0; j < m; ++j) n.at(c, j) /= row;
  }
  for (size_t j = 0; j < m; ++j) {
    size_t best = 0;
    double top = -1.0, second = -1.0;
    for (size_t c = 0; c < categories; ++c) {
      const double v = n.at(c, j);
      if (v > top) {
        second = top;
        top = v;
        best = c;
      } else if (v > second) {
        second = v;
      }
    }
    map.major.push_back(best);
    map.unique.push_back(categories == 1 || top > kUniqueMargin * second);
  }
  map.col_order.resize(m);
  std::iota(map.col_order.begin(), map.col_order.end(), 0);
  std::stable_sort(map.col_order.begin(), map.col_order.end(),
                   [&](size_t a, size_t b) { return map.major[a] < map.major[b]; });
  return map;
}

CooccurrenceMap cooccurrence(const RetrieverModel& model, const Dataset& data, const std::vector<size_t>& indices) {
  if (model.config().decoder != DecoderKind::kLink) {
    fail(ErrorCode::kInvalidArgument, "cooccurrence: needs the link-attention decoder");
  }
  const size_t layer = model.config().analysis_layer;
  std::vector<Tensor> weights(indices.size());
  std::vector<std::vector<uint32_t>> labels(indices.size());
  const auto all_labels = content_labels(data);
  parallel_for(indices.size(), [&](size_t k) {
    Tape tape;
    ForwardOptions opts = ForwardOptions::eval();
    opts.keep_link_weights = true;
    ModelOutput o = model.forward(tape, data.samples[indices[k]], opts);
    weights[k] = o.link_weights.at(layer);
    labels[k] = all_labels[indices[k]];
  });
  return cooccurrence_from(weights, labels, data.symbols);
}

std::string cooccurrence_csv(const CooccurrenceMap& map) {
  std::string out = "category";
  for (size_t j : map.col_order) out += ",style" + std::to_string(j);
  out += "\n";
  for (size_t c = 0; c < map.normalized.rows(); ++c) {
    out += std::to_string(c);
    for (size_t j : map.col_order) out += "," + format_real(map.normalized.at(c, j));
    out += "\n";
  }
  out += "major";
  for (size_t j : map.col_order) out += "," + std::to_string(map.major[j]);
  out += "\n";
  return out;
}

std::string cooccurrence_pgm(const CooccurrenceMap& map, size_t scale) {
  const size_t rows = map.normalized.rows(), cols = map.normalized.cols();
  double mx = 0.0;
  for (double v : map.normalized.data()) mx = std::max(mx, v);
  std::string out = "P5\n" + std::to_string(cols * scale) + " " + std::to_string(rows * scale) + "\n255\n";
  for (size_t r = 0; r < rows * scale; ++r)
    for (size_t c = 0; c < cols * scale; ++c) {
      const double v = mx > 0.0 ? map.normalized.at(r / scale, map.col_order[c / scale]) / mx : 0.0;
      out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  return out;
}

Tensor reconstruct(const RetrieverModel& model, const Tensor& raw) {
  Tape tape;
  return model.forward(tape, raw, ForwardOptions::eval()).recon.value();
}

Tensor style_transfer(const RetrieverModel& model, const Tensor& source, const Tensor& target) {
  Tape tape;
  const ForwardOptions opts = ForwardOptions::eval();
  CodeAssignment content = model.encode_content(tape, model.preprocess(tape, tape.constant(source), opts), opts);
  Var style = model.encode_style(tape, model.preprocess(tape, tape.constant(target), opts), opts);
  return model.decode(tape, content.quantized, style, opts).value();
}

Tensor part_transfer(const RetrieverModel& model, const Tensor& source, const Tensor& target,
                     const CooccurrenceMap& map, const std::vector<size_t>& parts) {
  const std::set<size_t> chosen(parts.begin(), parts.end());
  Tensor style = model.style_of(source);
  const Tensor target_style = model.style_of(target);
  if (map.major.size() != style.rows()) fail(ErrorCode::kShape, "part_transfer: map does not match the style tokens");
  size_t swapped = 0;
  for (size_t j = 0; j < style.rows(); ++j) {
    if (!chosen.count(map.major[j])) continue;
    std::copy(target_style.row(j).begin(), target_style.row(j).end(), style.row(j).begin());
    ++swapped;
  }
  if (swapped == 0) {
    std::string majors;
    for (size_t j = 0; j < map.major.size(); ++j)
      majors += (j ? " " : "") + std::to_string(j) + ":" + std::to_string(map.major[j]);
    fail(ErrorCode::kInvalidArgument, "part_transfer: no style token has its major category in the mask; column majors " +
                                          majors);
  }
  Tape tape;
  const ForwardOptions opts = ForwardOptions::eval();
  CodeAssignment content = model.encode_content(tape, model.preprocess(tape, tape.constant(source), opts), opts);
  return model.decode(tape, content.quantized, tape.constant(style), opts).value();
}

bool styles_differ(const Dataset& data, size_t a, size_t b) {
  for (size_t k = 0; k < (data.kind == DataKind::kGrid ? data.symbols : 1); ++k)
    if (data.style_of_part(a, k) == data.style_of_part(b, k)) return false;
  return true;
}

bool classified_as_target(const Dataset& data, const Tensor& out, size_t source, size_t target) {
  if (data.kind != DataKind::kGrid) return classify_style(data, out) == data.style[target];
  size_t ok = 0;
  for (size_t i = 0; i < data.tokens; ++i)
    ok += nearest_row(data, out.row(i)).style == data.style_of_part(target, data.content_at(source, i));
  return 2 * ok > data.tokens;
}

std::vector<std::pair<size_t, size_t>> transfer_pairs(const Dataset& data, size_t limit) {
  const std::vector<size_t> held = split_indices(data, true);
  std::vector<std::pair<size_t, size_t>> pairs;
  for (size_t k = 0; k < held.size() && pairs.size() < limit; ++k) {
    for (size_t step = 1; step < held.size(); ++step) {
      const size_t t = held[(k + step) % held.size()];
      if (styles_differ(data, held[k], t)) {
        pairs.emplace_back(held[k], t);
        break;
      }
    }
  }
  return pairs;
}

double transfer_accuracy(const RetrieverModel& model, const Dataset& data,
                         const std::vector<std::pair<size_t, size_t>>& pairs) {
  if (pairs.empty()) return 0.0;
  std::vector<char> ok(pairs.size(), 0);
  parallel_for(pairs.size(), [&](size_t k) {
    const auto [s, t] = pairs[k];
    ok[k] = classified_as_target(data, style_transfer(model, data.samples[s], data.samples[t]), s, t);
  });
  return static_cast<double>(std::count(ok.begin(), ok.end(), 1)) / static_cast<double>(pairs.size());
}

PartTransferScore part_transfer_accuracy(const RetrieverModel& model, const Dataset& data, const CooccurrenceMap& map,
                                         const std::vector<size_t>& parts,
                                         const std::vector<std::pair<size_t, size_t>>& pairs) {
  const std::set<size_t> chosen(parts.begin(), parts.end());
  std::vector<std::array<size_t, 4>> counts(pairs.size());  // in_ok, in_all, out_ok, out_all
  parallel_for(pairs.size(), [&](size_t k) {
    const auto [s, t] = pairs[k];
    const Tensor out = part_transfer(model, data.samples[s], data.samples[t], map, parts);
    std::array<size_t, 4> c{0, 0, 0, 0};
    for (size_t i = 0; i < data.tokens; ++i) {
      const uint32_t style = nearest_row(data, out.row(i)).style;
      const uint32_t part = data.content_at(s, i);
      if (chosen.count(part)) {
        c[1]++;
        if (style == data.style_of_part(t, part)) c[0]++;
      } else {
        c[3]++;
        if (style == data.style_of_part(s, part)) c[2]++;
      }
    }
    counts[k] = c;
  });
  std::array<size_t, 4> total{0, 0, 0, 0};
  for (const auto& c : counts)
    for (size_t i = 0; i < 4; ++i) total[i] += c[i];
  PartTransferScore r;
  r.pairs = pairs.size();
  r.inside = total[1] ? static_cast<double>(total[0]) / static_cast<double>(total[1]) : 0.0;
  r.outside = total[3] ? static_cast<double>(total[2]) / static_cast<double>(total[3]) : 0.0;
  return r;
}

EvalReport evaluate(const RetrieverModel& model, const Dataset& data, const EvalOptions& opts) {
  EvalReport r;
  const std::vector<size_t> held = split_indices(data, true);
  std::vector<double> mse(held.size());
  parallel_for(held.size(), [&](size_t k) {
    const Tensor& x = data.samples[held[k]];
    const Tensor y = reconstruct(model, x);
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += (y[i] - x[i]) * (y[i] - x[i]);
    mse[k] = s / static_cast<double>(x.size());
  });
  r.rec_mse = held.empty() ? 0.0 : std::accumulate(mse.begin(), mse.end(), 0.0) / static_cast<double>(held.size());

  const CodeTable codes = extract_codes(model, data);
  std::vector<size_t> flat;
  for (size_t s : held)
    for (uint32_t c : codes.codes[s]) flat.push_back(c);
  r.code_perplexity = code_perplexity(flat, codes.groups, codes.entries);
  r.content = probe_codes(codes, data, opts.probe);
  r.leakage = style_leakage(codes, data, opts.probe);
  r.leakage_chance = 1.0 / static_cast<double>(data.styles);
  r.transfer = transfer_accuracy(model, data, transfer_pairs(data, opts.transfer_pairs));
  if (opts.per_group) {
    const auto labels = content_labels(data);
    const auto train = split_indices(data, false);
    ProbeOptions p = opts.probe;
    for (size_t g = 0; g < codes.groups; ++g) {
      p.groups = {g};
      r.group_context.push_back(probe_accuracy(codes, labels, data.symbols, train, held, ProbeMode::kContext, p));
    }
    if (codes.groups >= 2) {
      p.groups = {0, 1};
      r.group01_context = probe_accuracy(codes, labels, data.symbols, train, held, ProbeMode::kContext, p);
    }
  }
  return r;
}

std::string eval_report_text(const EvalReport& r) {
  std::ostringstream os;
  os << "rec_mse " << format_real(r.rec_mse) << "\n";
  os << "code_perplexity " << format_real(r.code_perplexity) << "\n";
  os << "content_probe_frame " << format_real(r.content.accuracy_frame) << "\n";
  os << "content_probe_context " << format_real(r.content.accuracy_context) << "\n";
  os << "style_leakage " << format_real(r.leakage) << "\n";
  os << "style_leakage_chance " << format_real(r.leakage_chance) << "\n";
  os << "transfer_accuracy " << format_real(r.transfer) << "\n";
  for (size_t g = 0; g < r.group_context.size(); ++g)
    os << "group" << g << "_context " << format_real(r.group_context[g]) << "\n";
  if (r.group_context.size() >= 2) os << "group01_context " << format_real(r.group01_context) << "\n";
  return os.str();
}

std::string part_assignment_ppm(const CodeTable& codes, const Dataset& data, size_t sample, size_t scale) {
  if (data.kind != DataKind::kGrid) fail(ErrorCode::kInvalidArgument, "part assignment export needs grid data");
  static const unsigned char palette[][3] = {{0, 0, 0},       {230, 25, 75},   {60, 180, 75},  {255, 225, 25},
                                             {0, 130, 200},   {245, 130, 48},  {145, 30, 180}, {70, 240, 240},
                                             {240, 50, 230},  {210, 245, 60},  {250, 190, 212}, {0, 128, 128},
                                             {220, 190, 255}, {170, 110, 40},  {255, 250, 200}, {128, 0, 0}};
  const size_t H = data.height, W = data.width;
  std::string out = "P6\n" + std::to_string(W * scale) + " " + std::to_string(H * scale) + "\n255\n";
  for (size_t r = 0; r < H * scale; ++r)
    for (size_t c = 0; c < W * scale; ++c) {
      const uint32_t code = codes.at(sample, (r / scale) * W + c / scale, 0);
      const auto& rgb = palette[code % 16];
      out.append(reinterpret_cast<const char*>(rgb), 3);
    }
  return out;
}

std::string part_centers_csv(const RetrieverModel& model, const Dataset& data, const std::vector<size_t>& indices) {
  if (data.kind != DataKind::kGrid) fail(ErrorCode::kInvalidArgument, "part centers need grid data");
  const size_t V = model.config().entries;
  std::string out = "sample,part,mass,c_h,c_w,defined\n";
  for (size_t s : indices) {
    Tape tape;
    const ForwardOptions opts = ForwardOptions::eval();
    CodeAssignment ca = model.encode_content(tape, model.preprocess(tape, tape.constant(data.samples[s]), opts), opts);
    const Tensor probs = softmax(slice_last(ca.logits, 0, V)).value();
    const PartCenters pc = part_centers(probs, data.height, data.width);
    for (size_t v = 0; v < pc.centers.size(); ++v) {
      out += std::to_string(s) + "," + std::to_string(v + 1) + "," + format_real(pc.mass[v]) + "," +
             format_real(pc.centers[v][0]) + "," + format_real(pc.centers[v][1]) + "," +
             (pc.defined[v] ? "1" : "0") + "\n";
    }
  }
  return out;
}

}  // namespace retriever

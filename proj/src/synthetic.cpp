#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <sstream>

#include "checkpoint.hpp"
#include "error.hpp"
#include "keyvalue.hpp"
#include "rng.hpp"

namespace retriever {

namespace {

constexpr double kMinAngleDeg = 30.0;
constexpr int kDictionaryAttempts = 200;

std::vector<double> normal_vec(size_t dim, Rng& rng) {
  std::vector<double> v(dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& x : v) x = rng.normal(0.0, s);
  return v;
}

double min_pairwise_angle(const Tensor& rows) {
  double best = 180.0;
  for (size_t i = 0; i < rows.rows(); ++i)
    for (size_t j = i + 1; j < rows.rows(); ++j) {
      double dot = 0.0;
      for (size_t c = 0; c < rows.cols(); ++c) dot += rows.at(i, c) * rows.at(j, c);
      best = std::min(best, std::acos(std::clamp(dot, -1.0, 1.0)) * 180.0 / std::numbers::pi);
    }
  return best;
}

// Unit rows normalize(c_a + shift * s_y + detail * u_{y,a}), resampled until
// every pair is at least kMinAngleDeg apart.
Tensor make_dictionary(size_t styles, size_t symbols, size_t dim, double shift, double detail, Rng& rng) {
  for (int attempt = 0; attempt < kDictionaryAttempts; ++attempt) {
    std::vector<std::vector<double>> base, offset;
    for (size_t a = 0; a < symbols; ++a) base.push_back(normal_vec(dim, rng));
    for (size_t y = 0; y < styles; ++y) offset.push_back(normal_vec(dim, rng));
    Tensor dict({styles * symbols, dim});
    for (size_t y = 0; y < styles; ++y)
      for (size_t a = 0; a < symbols; ++a) {
        const std::vector<double> u = normal_vec(dim, rng);
        auto row = dict.row(y * symbols + a);
        double norm = 0.0;
        for (size_t c = 0; c < dim; ++c) {
          row[c] = base[a][c] + shift * offset[y][c] + detail * u[c];
          norm += row[c] * row[c];
        }
        norm = std::sqrt(norm);
        for (double& v : row) v /= norm;
      }
    if (min_pairwise_angle(dict) >= kMinAngleDeg) return dict;
  }
  fail(ErrorCode::kInvalidArgument, "cannot separate " + std::to_string(styles * symbols) +
                                        " dictionary rows by 30 degrees at dim " + std::to_string(dim) +
                                        "; use a larger dim");
}

std::vector<uint32_t> balanced_styles(size_t count, size_t styles, Rng& rng) {
  std::vector<uint32_t> out(count);
  for (size_t i = 0; i < count; ++i) out[i] = static_cast<uint32_t>(i % styles);
  rng.shuffle(out);
  return out;
}

Tensor render(const Dataset& data, size_t sample, const uint32_t* labels, double noise, Rng& rng) {
  Tensor t({data.tokens, data.dim});
  for (size_t i = 0; i < data.tokens; ++i) {
    auto src = data.row(data.style_of_part(sample, labels[i]), labels[i]);
    auto dst = t.row(i);
    for (size_t c = 0; c < data.dim; ++c) dst[c] = src[c] + (noise > 0.0 ? rng.normal(0.0, noise) : 0.0);
  }
  return t;
}

// Cut points splitting `length` cells into `pieces` runs of at least one cell.
std::vector<size_t> jittered_cuts(size_t length, size_t pieces, double jitter, Rng& rng) {
  std::vector<size_t> cuts{0};
  const double nominal = static_cast<double>(length) / static_cast<double>(pieces);
  for (size_t p = 1; p < pieces; ++p) {
    const double j = jitter * nominal * rng.uniform(-1.0, 1.0);
    long c = std::lround(nominal * static_cast<double>(p) + j);
    c = std::clamp<long>(c, static_cast<long>(cuts.back()) + 1, static_cast<long>(length - (pieces - p)));
    cuts.push_back(static_cast<size_t>(c));
  }
  cuts.push_back(length);
  return cuts;
}

const char* kind_name(DataKind k) { return k == DataKind::kGrid ? "grid" : "sequence"; }

}  // namespace

Dataset gen_sequences(const SequenceSpec& spec) {
  if (spec.symbols < 2) fail(ErrorCode::kConfig, "spec field 'symbols': need at least 2");
  if (spec.styles < 2) fail(ErrorCode::kConfig, "spec field 'styles': need at least 2");
  if (spec.segment_len < 1.0) fail(ErrorCode::kConfig, "spec field 'segment_len': must be >= 1");
  if (spec.n < 2 || spec.dim == 0 || spec.count == 0) fail(ErrorCode::kConfig, "spec: n >= 2, dim and count > 0 required");
  if (spec.noise < 0.0) fail(ErrorCode::kConfig, "spec field 'noise': must be >= 0");
  Dataset data;
  data.kind = DataKind::kSequence;
  data.tokens = spec.n;
  data.dim = spec.dim;
  data.symbols = spec.symbols;
  data.styles = spec.styles;
  Rng dict_rng(derive_seed(spec.seed, 0));
  data.dictionary = make_dictionary(spec.styles, spec.symbols, spec.dim, spec.style_shift, spec.style_detail, dict_rng);
  Rng label_rng(derive_seed(spec.seed, 1));
  data.style = balanced_styles(spec.count, spec.styles, label_rng);
  data.content.resize(spec.count * spec.n);
  const double switch_p = 1.0 / spec.segment_len;
  for (size_t s = 0; s < spec.count; ++s) {
    Rng rng(derive_seed(spec.seed, 2 + s));
    uint32_t* labels = data.content.data() + s * spec.n;
    labels[0] = static_cast<uint32_t>(rng.index(spec.symbols));
    for (size_t i = 1; i < spec.n; ++i) {
      if (rng.uniform() < switch_p) {
        const uint32_t other = static_cast<uint32_t>(rng.index(spec.symbols - 1));
        labels[i] = other >= labels[i - 1] ? other + 1 : other;
      } else {
        labels[i] = labels[i - 1];
      }
    }
    data.samples.push_back(render(data, s, labels, spec.noise, rng));
  }
  for (const KeyValue& kv : parse_key_values(data_spec_text({DataKind::kSequence, spec, {}}), "spec"))
    data.spec.emplace_back(kv.key, kv.value);
  return data;
}

Dataset gen_grids(const GridSpec& spec) {
  if (spec.parts == 0) fail(ErrorCode::kConfig, "spec field 'parts': need at least 1");
  if (spec.styles < 2) fail(ErrorCode::kConfig, "spec field 'styles': need at least 2");
  if (spec.dim == 0 || spec.count == 0) fail(ErrorCode::kConfig, "spec: dim and count must be positive");
  if (spec.jitter < 0.0 || spec.jitter >= 0.5) fail(ErrorCode::kConfig, "spec field 'jitter': must be in [0, 0.5)");
  const size_t band_count = static_cast<size_t>(std::floor(std::sqrt(static_cast<double>(spec.parts))));
  std::vector<size_t> per_band(band_count, spec.parts / band_count);
  for (size_t b = 0; b < spec.parts % band_count; ++b) ++per_band[b];
  if (band_count > spec.height || per_band[0] > spec.width) {
    fail(ErrorCode::kConfig, std::to_string(spec.parts) + " parts overflow a " + std::to_string(spec.height) + "x" +
                                 std::to_string(spec.width) + " grid");
  }
  Dataset data;
  data.kind = DataKind::kGrid;
  data.height = spec.height;
  data.width = spec.width;
  data.tokens = spec.height * spec.width;
  data.dim = spec.dim;
  data.symbols = spec.parts;
  data.styles = spec.styles;
  Rng dict_rng(derive_seed(spec.seed, 0));
  data.dictionary = make_dictionary(spec.styles, spec.parts, spec.dim, spec.style_shift, spec.style_detail, dict_rng);
  Rng label_rng(derive_seed(spec.seed, 1));
  data.part_style.resize(spec.count * spec.parts);
  for (size_t k = 0; k < spec.parts; ++k) {
    const std::vector<uint32_t> labels = balanced_styles(spec.count, spec.styles, label_rng);
    for (size_t s = 0; s < spec.count; ++s) data.part_style[s * spec.parts + k] = labels[s];
  }
  data.style.resize(spec.count);
  for (size_t s = 0; s < spec.count; ++s) data.style[s] = data.part_style[s * spec.parts];
  data.content.resize(spec.count * data.tokens);
  for (size_t s = 0; s < spec.count; ++s) {
    Rng rng(derive_seed(spec.seed, 2 + s));
    uint32_t* labels = data.content.data() + s * data.tokens;
    const std::vector<size_t> rows = jittered_cuts(spec.height, band_count, spec.jitter, rng);
    uint32_t part = 0;
    for (size_t b = 0; b < band_count; ++b) {
      const std::vector<size_t> cols = jittered_cuts(spec.width, per_band[b], spec.jitter, rng);
      for (size_t k = 0; k < per_band[b]; ++k, ++part)
        for (size_t h = rows[b]; h < rows[b + 1]; ++h)
          for (size_t w = cols[k]; w < cols[k + 1]; ++w) labels[h * spec.width + w] = part;
    }
    data.samples.push_back(render(data, s, labels, spec.noise, rng));
  }
  for (const KeyValue& kv : parse_key_values(data_spec_text({DataKind::kGrid, {}, spec}), "spec"))
    data.spec.emplace_back(kv.key, kv.value);
  return data;
}

DataSpec parse_data_spec(const std::string& text, const std::string& source) {
  const std::vector<KeyValue> kvs = parse_key_values(text, source);
  DataSpec spec;
  for (const KeyValue& kv : kvs) {
    if (kv.key != "kind") continue;
    if (kv.value == "sequence") spec.kind = DataKind::kSequence;
    else if (kv.value == "grid") spec.kind = DataKind::kGrid;
    else fail(ErrorCode::kConfig, "key 'kind': expected sequence|grid, got '" + kv.value + "'");
  }
  SequenceSpec& q = spec.sequence;
  GridSpec& g = spec.grid;
  const bool seq = spec.kind == DataKind::kSequence;
  for (const KeyValue& kv : kvs) {
    const std::string& k = kv.key;
    if (k == "kind") continue;
    if (k == "count") (seq ? q.count : g.count) = parse_count(kv);
    else if (k == "seed") (seq ? q.seed : g.seed) = parse_count(kv);
    else if (k == "dim") (seq ? q.dim : g.dim) = parse_count(kv);
    else if (k == "styles") (seq ? q.styles : g.styles) = parse_count(kv);
    else if (k == "noise") (seq ? q.noise : g.noise) = parse_real(kv);
    else if (k == "style_shift") (seq ? q.style_shift : g.style_shift) = parse_real(kv);
    else if (k == "style_detail") (seq ? q.style_detail : g.style_detail) = parse_real(kv);
    else if (seq && k == "n") q.n = parse_count(kv);
    else if (seq && k == "symbols") q.symbols = parse_count(kv);
    else if (seq && k == "segment_len") q.segment_len = parse_real(kv);
    else if (!seq && k == "height") g.height = parse_count(kv);
    else if (!seq && k == "width") g.width = parse_count(kv);
    else if (!seq && k == "parts") g.parts = parse_count(kv);
    else if (!seq && k == "jitter") g.jitter = parse_real(kv);
    else fail(ErrorCode::kConfig, "unknown " + std::string(seq ? "sequence" : "grid") + " spec key '" + k + "' (line " +
                                      std::to_string(kv.line) + ")");
  }
  return spec;
}

std::string data_spec_text(const DataSpec& spec) {
  std::ostringstream os;
  os << "kind = " << kind_name(spec.kind) << "\n";
  if (spec.kind == DataKind::kSequence) {
    const SequenceSpec& q = spec.sequence;
    os << "n = " << q.n << "\nsymbols = " << q.symbols << "\nstyles = " << q.styles << "\ndim = " << q.dim
       << "\nsegment_len = " << format_real(q.segment_len) << "\nnoise = " << format_real(q.noise)
       << "\ncount = " << q.count << "\nseed = " << q.seed << "\nstyle_shift = " << format_real(q.style_shift)
       << "\nstyle_detail = " << format_real(q.style_detail) << "\n";
  } else {
    const GridSpec& g = spec.grid;
    os << "height = " << g.height << "\nwidth = " << g.width << "\nparts = " << g.parts << "\nstyles = " << g.styles
       << "\ndim = " << g.dim << "\nnoise = " << format_real(g.noise) << "\ncount = " << g.count
       << "\nseed = " << g.seed << "\nstyle_shift = " << format_real(g.style_shift)
       << "\nstyle_detail = " << format_real(g.style_detail) << "\njitter = " << format_real(g.jitter) << "\n";
  }
  return os.str();
}

Dataset generate(const DataSpec& spec) {
  return spec.kind == DataKind::kSequence ? gen_sequences(spec.sequence) : gen_grids(spec.grid);
}

RowMatch nearest_row(const Dataset& data, std::span<const double> token) {
  RowMatch best{0, 0, INFINITY};
  for (size_t y = 0; y < data.styles; ++y)
    for (size_t a = 0; a < data.symbols; ++a) {
      auto r = data.row(y, a);
      double d = 0.0;
      for (size_t c = 0; c < data.dim; ++c) d += (token[c] - r[c]) * (token[c] - r[c]);
      if (d < best.distance) best = {static_cast<uint32_t>(y), static_cast<uint32_t>(a), d};
    }
  best.distance = std::sqrt(best.distance);
  return best;
}

uint32_t classify_style(const Dataset& data, const Tensor& tokens) {
  std::vector<size_t> votes(data.styles, 0);
  for (size_t i = 0; i < tokens.rows(); ++i) ++votes[nearest_row(data, tokens.row(i)).style];
  return static_cast<uint32_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

OracleAccuracy oracle_accuracy(const Dataset& data) {
  size_t style_ok = 0, symbol_ok = 0;
  const bool grid = data.kind == DataKind::kGrid;
  for (size_t s = 0; s < data.count(); ++s) {
    if (!grid && classify_style(data, data.samples[s]) == data.style[s]) ++style_ok;
    for (size_t i = 0; i < data.tokens; ++i) {
      const RowMatch m = nearest_row(data, data.samples[s].row(i));
      if (m.symbol == data.content_at(s, i)) ++symbol_ok;
      if (grid && m.style == data.style_at(s, i)) ++style_ok;
    }
  }
  return {static_cast<double>(style_ok) / static_cast<double>(grid ? data.count() * data.tokens : data.count()),
          static_cast<double>(symbol_ok) / static_cast<double>(data.count() * data.tokens)};
}

bool is_heldout(size_t index) { return index % 5 == 4; }

std::vector<size_t> split_indices(const Dataset& data, bool heldout) {
  std::vector<size_t> out;
  for (size_t i = 0; i < data.count(); ++i)
    if (is_heldout(i) == heldout) out.push_back(i);
  return out;
}

namespace {

std::string manifest_text(const Dataset& data) {
  std::ostringstream os;
  os << "retriever-dataset 1\n";
  os << "kind " << kind_name(data.kind) << "\n";
  os << "count " << data.count() << "\ntokens " << data.tokens << "\ndim " << data.dim << "\nheight " << data.height
     << "\nwidth " << data.width << "\nsymbols " << data.symbols << "\nstyles " << data.styles << "\n";
  for (auto& [k, v] : data.spec) os << "spec " << k << " " << v << "\n";
  return os.str();
}

std::string token_blob(const Dataset& data) {
  std::string out;
  out.reserve(data.count() * data.tokens * data.dim * 8);
  for (const Tensor& t : data.samples) append_f64_le(out, t.data());
  return out;
}

std::string content_csv(const Dataset& data) {
  std::string out = "sample,token,content\n";
  for (size_t s = 0; s < data.count(); ++s)
    for (size_t i = 0; i < data.tokens; ++i)
      out += std::to_string(s) + "," + std::to_string(i) + "," + std::to_string(data.content_at(s, i)) + "\n";
  return out;
}

std::string styles_csv(const Dataset& data) {
  std::string out = "sample,style\n";
  for (size_t s = 0; s < data.count(); ++s) out += std::to_string(s) + "," + std::to_string(data.style[s]) + "\n";
  return out;
}

std::string part_styles_csv(const Dataset& data) {
  if (data.kind != DataKind::kGrid) return {};
  std::string out = "sample,part,style\n";
  for (size_t s = 0; s < data.count(); ++s)
    for (size_t k = 0; k < data.symbols; ++k)
      out += std::to_string(s) + "," + std::to_string(k) + "," + std::to_string(data.style_of_part(s, k)) + "\n";
  return out;
}

std::string dictionary_blob(const Dataset& data) {
  std::string out;
  append_f64_le(out, data.dictionary.data());
  return out;
}

std::vector<std::vector<std::string>> read_csv(const std::string& text, size_t columns, const std::string& name) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(text);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != columns) fail(ErrorCode::kArtifact, name + ": malformed row '" + line + "'");
    rows.push_back(std::move(cells));
  }
  return rows;
}

size_t to_index(const std::string& s, const std::string& name) {
  try {
    size_t pos = 0;
    const unsigned long v = std::stoul(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kArtifact, name + ": bad integer '" + s + "'");
  }
}

}  // namespace

uint64_t Dataset::hash() const {
  return fnv1a64(manifest_text(*this) + token_blob(*this) + dictionary_blob(*this) + content_csv(*this) +
                 styles_csv(*this) + part_styles_csv(*this));
}

void save_dataset(const Dataset& data, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(data.hash()));
  write_file(dir + "/dataset.txt", manifest_text(data) + "hash " + hash + "\n");
  write_file(dir + "/tokens.bin", token_blob(data));
  write_file(dir + "/dictionary.bin", dictionary_blob(data));
  write_file(dir + "/content.csv", content_csv(data));
  write_file(dir + "/styles.csv", styles_csv(data));
  if (data.kind == DataKind::kGrid) write_file(dir + "/part_styles.csv", part_styles_csv(data));
}

Dataset load_dataset(const std::string& dir) {
  const std::string manifest = read_file(dir + "/dataset.txt");
  std::istringstream is(manifest);
  std::string line;
  std::getline(is, line);
  if (line != "retriever-dataset 1") fail(ErrorCode::kArtifact, dir + "/dataset.txt: not a dataset manifest");
  Dataset data;
  size_t count = 0;
  std::string stored_hash;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "spec") {
      std::string k, v;
      ls >> k;
      std::getline(ls >> std::ws, v);
      data.spec.emplace_back(k, v);
      continue;
    }
    std::string value;
    ls >> value;
    if (key == "kind") data.kind = value == "grid" ? DataKind::kGrid : DataKind::kSequence;
    else if (key == "hash") stored_hash = value;
    else if (key == "count") count = to_index(value, "dataset.txt");
    else if (key == "tokens") data.tokens = to_index(value, "dataset.txt");
    else if (key == "dim") data.dim = to_index(value, "dataset.txt");
    else if (key == "height") data.height = to_index(value, "dataset.txt");
    else if (key == "width") data.width = to_index(value, "dataset.txt");
    else if (key == "symbols") data.symbols = to_index(value, "dataset.txt");
    else if (key == "styles") data.styles = to_index(value, "dataset.txt");
    else if (!key.empty()) fail(ErrorCode::kArtifact, dir + "/dataset.txt: unknown entry '" + key + "'");
  }
  if (data.tokens == 0 || data.dim == 0 || data.symbols == 0 || data.styles == 0 || count == 0) {
    fail(ErrorCode::kArtifact, dir + "/dataset.txt: incomplete manifest");
  }
  const std::string blob = read_file(dir + "/tokens.bin");
  const size_t per = data.tokens * data.dim;
  if (blob.size() != count * per * 8) {
    fail(ErrorCode::kArtifact, dir + "/tokens.bin: expected " + std::to_string(count * per * 8) + " bytes, found " +
                                   std::to_string(blob.size()));
  }
  for (size_t s = 0; s < count; ++s)
    data.samples.emplace_back(Shape{data.tokens, data.dim}, read_f64_le(blob, s * per * 8, per));
  const std::string dict = read_file(dir + "/dictionary.bin");
  const size_t dict_n = data.styles * data.symbols * data.dim;
  if (dict.size() != dict_n * 8) fail(ErrorCode::kArtifact, dir + "/dictionary.bin: size mismatch");
  data.dictionary = Tensor({data.styles * data.symbols, data.dim}, read_f64_le(dict, 0, dict_n));

  data.content.assign(count * data.tokens, 0);
  const auto content_rows = read_csv(read_file(dir + "/content.csv"), 3, "content.csv");
  if (content_rows.size() != count * data.tokens) fail(ErrorCode::kArtifact, "content.csv: row count mismatch");
  for (const auto& r : content_rows) {
    const size_t s = to_index(r[0], "content.csv"), i = to_index(r[1], "content.csv");
    const size_t c = to_index(r[2], "content.csv");
    if (s >= count || i >= data.tokens || c >= data.symbols) fail(ErrorCode::kArtifact, "content.csv: index out of range");
    data.content[s * data.tokens + i] = static_cast<uint32_t>(c);
  }
  data.style.assign(count, 0);
  const auto style_rows = read_csv(read_file(dir + "/styles.csv"), 2, "styles.csv");
  if (style_rows.size() != count) fail(ErrorCode::kArtifact, "styles.csv: row count mismatch");
  for (const auto& r : style_rows) {
    const size_t s = to_index(r[0], "styles.csv"), y = to_index(r[1], "styles.csv");
    if (s >= count || y >= data.styles) fail(ErrorCode::kArtifact, "styles.csv: index out of range");
    data.style[s] = static_cast<uint32_t>(y);
  }
  if (data.kind == DataKind::kGrid) {
    data.part_style.assign(count * data.symbols, 0);
    const auto part_rows = read_csv(read_file(dir + "/part_styles.csv"), 3, "part_styles.csv");
    if (part_rows.size() != count * data.symbols) fail(ErrorCode::kArtifact, "part_styles.csv: row count mismatch");
    for (const auto& r : part_rows) {
      const size_t s = to_index(r[0], "part_styles.csv"), k = to_index(r[1], "part_styles.csv");
      const size_t y = to_index(r[2], "part_styles.csv");
      if (s >= count || k >= data.symbols || y >= data.styles) fail(ErrorCode::kArtifact, "part_styles.csv: index out of range");
      data.part_style[s * data.symbols + k] = static_cast<uint32_t>(y);
    }
  }
  if (!stored_hash.empty()) {
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(data.hash()));
    if (stored_hash != hash) fail(ErrorCode::kArtifact, dir + ": content hash " + hash + " does not match manifest " + stored_hash);
  }
  return data;
}

}  // namespace retriever

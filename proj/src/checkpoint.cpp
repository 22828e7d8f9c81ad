#include "checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "error.hpp"

namespace retriever {

const std::string* Checkpoint::find_meta(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return &v;
  }
  return nullptr;
}

const CheckpointRecord* Checkpoint::find_record(const std::string& name) const {
  for (const auto& r : records) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

void append_f64_le(std::string& out, std::span<const double> values) {
  const size_t start = out.size();
  out.resize(start + 8 * values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    const uint64_t bits = std::bit_cast<uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) out[start + 8 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
}

std::vector<double> read_f64_le(const std::string& bytes, size_t offset, size_t count) {
  if (offset + 8 * count > bytes.size()) {
    fail(ErrorCode::kArtifact, "binary blob truncated: need " + std::to_string(offset + 8 * count) +
                                   " bytes, have " + std::to_string(bytes.size()));
  }
  std::vector<double> out(count);
  for (size_t i = 0; i < count; ++i) {
    uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<uint64_t>(static_cast<unsigned char>(bytes[offset + 8 * i + b])) << (8 * b);
    }
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed for '" + path + "'");
}

uint64_t fnv1a64(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

Shape parse_shape(const std::string& s, const std::string& path) {
  Shape shape;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, 'x')) {
    try {
      size_t pos = 0;
      const unsigned long v = std::stoul(tok, &pos);
      if (pos != tok.size() || v == 0) throw std::invalid_argument(tok);
      shape.push_back(v);
    } catch (const std::exception&) {
      fail(ErrorCode::kArtifact, path + ": bad shape '" + s + "'");
    }
  }
  if (shape.empty()) fail(ErrorCode::kArtifact, path + ": empty shape");
  return shape;
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ostringstream manifest;
  manifest << "retriever-checkpoint 1\n";
  for (const auto& [k, v] : ckpt.meta) manifest << "meta " << k << ' ' << v << '\n';
  std::string blob;
  for (const auto& r : ckpt.records) {
    manifest << "param " << r.name << " f64 ";
    const Shape& s = r.value.shape();
    for (size_t i = 0; i < s.size(); ++i) manifest << (i ? "x" : "") << s[i];
    manifest << '\n';
    append_f64_le(blob, r.value.data());
  }
  write_file(path + ".bin", blob);
  write_file(path, manifest.str());
}

Checkpoint read_checkpoint(const std::string& path) {
  std::istringstream manifest(read_file(path));
  std::string line;
  if (!std::getline(manifest, line) || line != "retriever-checkpoint 1") {
    fail(ErrorCode::kArtifact, path + ": not a retriever checkpoint manifest");
  }
  const std::string blob = read_file(path + ".bin");
  Checkpoint ckpt;
  size_t offset = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ckpt.meta.emplace_back(key, value);
    } else if (kind == "param") {
      std::string name, dtype, shape_s;
      if (!(ls >> name >> dtype >> shape_s)) fail(ErrorCode::kArtifact, path + ": malformed record '" + line + "'");
      if (dtype != "f64") fail(ErrorCode::kArtifact, path + ": unsupported dtype '" + dtype + "' for " + name);
      Shape shape = parse_shape(shape_s, path);
      const size_t n = shape_size(shape);
      ckpt.records.push_back({name, Tensor(shape, read_f64_le(blob, offset, n))});
      offset += 8 * n;
    } else {
      fail(ErrorCode::kArtifact, path + ": unknown manifest line '" + line + "'");
    }
  }
  if (offset != blob.size()) {
    fail(ErrorCode::kArtifact, path + ": blob has " + std::to_string(blob.size()) + " bytes, manifest describes " +
                                   std::to_string(offset));
  }
  return ckpt;
}

}  // namespace retriever

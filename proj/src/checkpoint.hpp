#pragma once

#include <string>
#include <utility>
#include <vector>

#include "parameter.hpp"

namespace retriever {

// On disk a checkpoint is two files: `<path>` is a UTF-8 manifest
//
//   retriever-checkpoint 1
//   meta <key> <value>
//   param <name> f64 <d0>x<d1>...
//
// and `<path>.bin` holds the little-endian f64 values of every `param`
// record, concatenated in manifest order.
struct CheckpointRecord {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<CheckpointRecord> records;

  const std::string* find_meta(const std::string& key) const;
  const CheckpointRecord* find_record(const std::string& name) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

// Little-endian f64 serialization shared with the dataset format.
void append_f64_le(std::string& out, std::span<const double> values);
std::vector<double> read_f64_le(const std::string& bytes, size_t offset, size_t count);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);
// FNV-1a 64 over raw bytes.
uint64_t fnv1a64(const std::string& bytes);

}  // namespace retriever

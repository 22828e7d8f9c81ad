#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace retriever {

struct KeyValue {
  std::string key;
  std::string value;
  size_t line = 0;
};

// Parses `key = value` lines. Blank lines and lines starting with '#' are
// skipped; duplicate keys and lines without '=' fail with a kConfig error
// that names `source` and the line.
std::vector<KeyValue> parse_key_values(const std::string& text, const std::string& source);

double parse_real(const KeyValue& kv);
uint64_t parse_count(const KeyValue& kv);
bool parse_flag(const KeyValue& kv);

// Shortest text that reads back to the same double.
std::string format_real(double v);

}  // namespace retriever

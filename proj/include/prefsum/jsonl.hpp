#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace prefsum {

using Json = nlohmann::json;

// Bad input data (malformed files, missing fields, inconsistent records).
// The CLI maps this to exit code 2.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kFormatVersion = 1;

// Reads a JSONL file, calling fn(line_number, record) per non-empty line.
// Malformed lines raise DataError naming the file and 1-based line number.
void for_each_jsonl(const std::string& path,
                    const std::function<void(size_t, const Json&)>& fn);

std::vector<Json> read_jsonl(const std::string& path);

void write_jsonl(const std::string& path, const std::vector<Json>& records);

// Whole-file JSON. `allow_comments` strips // and /* */ comments (configs).
Json read_json_file(const std::string& path, bool allow_comments = false);

void write_json_file(const std::string& path, const Json& value);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace prefsum

#include "prefsum/jsonl.hpp"

#include <fstream>
#include <sstream>

namespace prefsum {

void for_each_jsonl(const std::string& path,
                    const std::function<void(size_t, const Json&)>& fn) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json record = Json::parse(line, nullptr, false);
    if (record.is_discarded()) {
      throw DataError(path + ": line " + std::to_string(lineno) + ": malformed JSON");
    }
    fn(lineno, record);
  }
}

std::vector<Json> read_jsonl(const std::string& path) {
  std::vector<Json> out;
  for_each_jsonl(path, [&](size_t, const Json& j) { out.push_back(j); });
  return out;
}

void write_jsonl(const std::string& path, const std::vector<Json>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open file for writing");
  for (const Json& r : records) out << r.dump() << '\n';
  if (!out) throw DataError(path + ": write failed");
}

Json read_json_file(const std::string& path, bool allow_comments) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  Json value = Json::parse(buf.str(), nullptr, false, allow_comments);
  if (value.is_discarded()) throw DataError(path + ": malformed JSON");
  return value;
}

void write_json_file(const std::string& path, const Json& value) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open file for writing");
  out << value.dump(2) << '\n';
  if (!out) throw DataError(path + ": write failed");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open file");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open file for writing");
  out << text;
  if (!out) throw DataError(path + ": write failed");
}

}  // namespace prefsum

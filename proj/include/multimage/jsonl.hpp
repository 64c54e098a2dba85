#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace multimage {

using json = nlohmann::json;

// Calls fn(record, line_number) for every non-blank line of a JSONL file.
// Throws IoError if the file cannot be opened and ParseError (with the line
// number) on the first line that is not a JSON object.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const json&, std::size_t)>& fn);

// Rewrites the bare NaN / Infinity / -Infinity tokens that Python's json module
// emits (outside string literals) as null, so such files parse and the
// offending component can be reported by the caller.
std::string null_nonfinite_literals(std::string_view line);

// Same as read_jsonl but over an in-memory stream.
void read_jsonl(std::istream& in, const std::function<void(const json&, std::size_t)>& fn);

// Compact single-line encoding. Doubles use the shortest representation that
// parses back to the identical bit pattern.
std::string dump_line(const json& record);

// Writes all records to path via a temporary sibling and a rename, so readers
// never observe a half-written file.
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records);

json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const json& value);

// Thread-safe append-only sink; each append is flushed so a crash loses at
// most the line being written.
class JsonlAppender {
 public:
  explicit JsonlAppender(const std::filesystem::path& path);

  void append(const json& record);

 private:
  std::mutex mu_;
  std::ofstream out_;
};

// Field accessors that raise ParseError naming the field.
const json& require_field(const json& record, std::string_view field, std::size_t line);
std::string require_string(const json& record, std::string_view field, std::size_t line);
std::vector<double> require_vector(const json& record, std::string_view field, std::size_t line);
std::vector<std::string> require_string_list(const json& record, std::string_view field,
                                             std::size_t line);

}  // namespace multimage

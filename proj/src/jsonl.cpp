#include "multimage/jsonl.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <optional>
#include <sstream>

#include "multimage/error.hpp"

namespace multimage {

namespace {

bool is_ident(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

// Embedding and vector files are flat objects that are almost entirely
// numbers, and the general parser spends most of its time on those. This
// reader takes flat objects (string, number, boolean and null values, and
// arrays of them) with plain ASCII strings. Anything else yields nullopt and
// goes to the general parser, which also owns the error messages.
class FlatReader {
 public:
  explicit FlatReader(std::string_view s) : s_(s) {}

  std::optional<json> object() {
    json out = json::object();
    skip_ws();
    if (!eat('{')) return std::nullopt;
    skip_ws();
    if (!eat('}')) {
      do {
        skip_ws();
        auto key = string();
        skip_ws();
        if (!key || !eat(':')) return std::nullopt;
        skip_ws();
        auto v = value(true);
        if (!v) return std::nullopt;
        out[*key] = std::move(*v);
        skip_ws();
      } while (eat(','));
      if (!eat('}')) return std::nullopt;
    }
    skip_ws();
    if (i_ != s_.size()) return std::nullopt;
    return out;
  }

 private:
  void skip_ws() {
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t' || s_[i_] == '\n' || s_[i_] == '\r')) ++i_;
  }
  bool eat(char c) {
    if (i_ < s_.size() && s_[i_] == c) {
      ++i_;
      return true;
    }
    return false;
  }
  bool word(std::string_view w) {
    if (s_.substr(i_, w.size()) != w) return false;
    i_ += w.size();
    return true;
  }

  std::optional<std::string> string() {
    if (!eat('"')) return std::nullopt;
    const std::size_t start = i_;
    for (; i_ < s_.size() && s_[i_] != '"'; ++i_) {
      const auto c = static_cast<unsigned char>(s_[i_]);
      if (c == '\\' || c < 0x20 || c >= 0x80) return std::nullopt;
    }
    if (i_ == s_.size()) return std::nullopt;
    return std::string(s_.substr(start, i_++ - start));
  }

  std::optional<json> number() {
    // JSON grammar first; from_chars alone would accept more.
    const std::size_t start = i_;
    eat('-');
    auto digits = [&] {
      const std::size_t from = i_;
      while (i_ < s_.size() && s_[i_] >= '0' && s_[i_] <= '9') ++i_;
      return i_ - from;
    };
    const std::size_t int_start = i_;
    const std::size_t int_digits = digits();
    if (int_digits == 0 || (int_digits > 1 && s_[int_start] == '0')) return std::nullopt;
    bool integral = true;
    if (eat('.')) {
      integral = false;
      if (digits() == 0) return std::nullopt;
    }
    if (eat('e') || eat('E')) {
      integral = false;
      if (!eat('+')) eat('-');
      if (digits() == 0) return std::nullopt;
    }
    const char* first = s_.data() + start;
    const char* last = s_.data() + i_;
    if (integral) {
      if (*first == '-') {
        std::int64_t v = 0;
        const auto r = std::from_chars(first, last, v);
        if (r.ec != std::errc() || r.ptr != last) return std::nullopt;
        return json(v);
      }
      std::uint64_t v = 0;
      const auto r = std::from_chars(first, last, v);
      if (r.ec != std::errc() || r.ptr != last) return std::nullopt;
      return json(v);
    }
    double v = 0;
    const auto r = std::from_chars(first, last, v);
    if (r.ec != std::errc() || r.ptr != last) return std::nullopt;
    return json(v);
  }

  std::optional<json> value(bool allow_array) {
    if (i_ >= s_.size()) return std::nullopt;
    const char c = s_[i_];
    if (c == '"') {
      auto v = string();
      if (!v) return std::nullopt;
      return json(std::move(*v));
    }
    if (c == '-' || (c >= '0' && c <= '9')) return number();
    if (word("true")) return json(true);
    if (word("false")) return json(false);
    if (word("null")) return json(nullptr);
    if (c != '[' || !allow_array) return std::nullopt;
    ++i_;
    json arr = json::array();
    skip_ws();
    if (eat(']')) return arr;
    do {
      skip_ws();
      auto v = value(false);
      if (!v) return std::nullopt;
      arr.push_back(std::move(*v));
      skip_ws();
    } while (eat(','));
    if (!eat(']')) return std::nullopt;
    return arr;
  }

  std::string_view s_;
  std::size_t i_ = 0;
};

}  // namespace

std::string null_nonfinite_literals(std::string_view line) {
  static constexpr std::string_view kTokens[] = {"-Infinity", "Infinity", "NaN"};
  if (line.find("NaN") == line.npos && line.find("Infinity") == line.npos) return std::string(line);
  std::string out;
  out.reserve(line.size());
  bool in_string = false;
  for (std::size_t i = 0; i < line.size();) {
    const char c = line[i];
    if (in_string) {
      out += c;
      if (c == '\\' && i + 1 < line.size()) {
        out += line[i + 1];
        i += 2;
        continue;
      }
      if (c == '"') in_string = false;
      ++i;
      continue;
    }
    if (c == '"') {
      in_string = true;
      out += c;
      ++i;
      continue;
    }
    bool replaced = false;
    for (auto tok : kTokens) {
      if (line.substr(i, tok.size()) == tok && (i == 0 || !is_ident(line[i - 1])) &&
          (i + tok.size() == line.size() || !is_ident(line[i + tok.size()]))) {
        out += "null";
        i += tok.size();
        replaced = true;
        break;
      }
    }
    if (!replaced) out += line[i++];
  }
  return out;
}

void read_jsonl(std::istream& in, const std::function<void(const json&, std::size_t)>& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json record;
    try {
      if (auto flat = FlatReader(line).object()) {
        record = std::move(*flat);
      } else {
        record = json::parse(null_nonfinite_literals(line));
      }
    } catch (const json::exception& e) {
      // parse_error, or out_of_range for a literal such as 1e400.
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!record.is_object()) throw ParseError("record is not a JSON object", line_no);
    fn(record, line_no);
  }
}

void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  read_jsonl(in, fn);
}

std::string dump_line(const json& record) {
  return record.dump(-1, ' ', false, json::error_handler_t::strict);
}

namespace {

void write_atomically(const std::filesystem::path& path, const std::string& body) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << body;
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  std::string body;
  for (const auto& r : records) {
    body += dump_line(r);
    body += '\n';
  }
  write_atomically(path, body);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& value) {
  write_atomically(path, value.dump(2) + "\n");
}

JsonlAppender::JsonlAppender(const std::filesystem::path& path)
    : out_(path, std::ios::binary | std::ios::app) {
  if (!out_) throw IoError("cannot append to " + path.string());
}

void JsonlAppender::append(const json& record) {
  const auto line = dump_line(record);
  std::lock_guard lock(mu_);
  out_ << line << '\n';
  out_.flush();
}

const json& require_field(const json& record, std::string_view field, std::size_t line) {
  auto it = record.find(field);
  if (it == record.end()) throw ParseError("missing field \"" + std::string(field) + "\"", line);
  return *it;
}

std::string require_string(const json& record, std::string_view field, std::size_t line) {
  const auto& v = require_field(record, field, line);
  if (!v.is_string()) throw ParseError("field \"" + std::string(field) + "\" must be a string", line);
  return v.get<std::string>();
}

std::vector<double> require_vector(const json& record, std::string_view field, std::size_t line) {
  const auto& v = require_field(record, field, line);
  if (!v.is_array()) throw ParseError("field \"" + std::string(field) + "\" must be an array", line);
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) {
      throw ParseError("field \"" + std::string(field) + "\" has a non-numeric component", line);
    }
    out.push_back(x.get<double>());
  }
  return out;
}

std::vector<std::string> require_string_list(const json& record, std::string_view field,
                                             std::size_t line) {
  const auto& v = require_field(record, field, line);
  if (!v.is_array()) throw ParseError("field \"" + std::string(field) + "\" must be an array", line);
  std::vector<std::string> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_string()) {
      throw ParseError("field \"" + std::string(field) + "\" must contain strings", line);
    }
    out.push_back(x.get<std::string>());
  }
  return out;
}

}  // namespace multimage

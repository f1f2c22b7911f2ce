#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "erratlas/error.hpp"

namespace erratlas::io {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

struct CsvRow {
  std::size_t line = 0;  // 1-based, for error messages
  std::vector<std::string> fields;
};

// RFC 4180 style: comma separated, double-quoted fields may contain commas,
// quotes ("") and newlines. Blank lines are skipped.
inline std::vector<CsvRow> parse_csv(std::string_view text, const std::string& source = "<csv>") {
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string field;
  std::size_t line = 1;
  row.line = line;
  bool in_quotes = false;
  bool row_has_content = false;

  auto end_field = [&] {
    row.fields.push_back(std::move(field));
    field.clear();
  };
  auto end_row = [&] {
    if (row_has_content) {
      end_field();
      rows.push_back(std::move(row));
    }
    row = CsvRow{};
    field.clear();
    row_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty()) fail(ErrorKind::Parse, source + ":" + std::to_string(line) + ": stray quote");
        in_quotes = true;
        row_has_content = true;
        break;
      case ',':
        end_field();
        row_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        row.line = ++line;
        break;
      default:
        field.push_back(c);
        row_has_content = true;
    }
  }
  if (in_quotes) fail(ErrorKind::Parse, source + ": unterminated quoted field");
  end_row();
  return rows;
}

// Reads a CSV with a fixed column count. A first row equal to `header` is dropped.
inline std::vector<CsvRow> read_csv(const std::filesystem::path& path, std::size_t columns,
                                    std::initializer_list<std::string_view> header = {}) {
  auto rows = parse_csv(read_file(path), path.string());
  if (!rows.empty() && header.size() == rows.front().fields.size() &&
      std::equal(header.begin(), header.end(), rows.front().fields.begin())) {
    rows.erase(rows.begin());
  }
  for (const auto& r : rows) {
    if (r.fields.size() != columns) {
      fail(ErrorKind::Parse, path.string() + ":" + std::to_string(r.line) + ": expected " +
                                 std::to_string(columns) + " columns, got " +
                                 std::to_string(r.fields.size()));
    }
  }
  return rows;
}

// One non-empty, whitespace-trimmed entry per line.
inline std::vector<std::string> read_list(const std::filesystem::path& path) {
  std::vector<std::string> out;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    out.push_back(line.substr(b, e - b + 1));
  }
  return out;
}

inline std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

class CsvWriter {
 public:
  template <typename... Fields>
  CsvWriter& row(const Fields&... fields) {
    bool first = true;
    ((append(fields, first)), ...);
    buf_.push_back('\n');
    return *this;
  }

  const std::string& str() const noexcept { return buf_; }

 private:
  void sep(bool& first) {
    if (!first) buf_.push_back(',');
    first = false;
  }
  void append(std::string_view s, bool& first) {
    sep(first);
    buf_ += csv_escape(s);
  }
  void append(const std::string& s, bool& first) { append(std::string_view(s), first); }
  void append(const char* s, bool& first) { append(std::string_view(s), first); }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void append(T v, bool& first) {
    sep(first);
    if constexpr (std::is_floating_point_v<T>) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      buf_ += os.str();
    } else {
      buf_ += std::to_string(v);
    }
  }

  std::string buf_;
};

}  // namespace erratlas::io

#pragma once

// Artifact writers. CSV: '.' decimals, LF endings, no quoting; every value
// is a number or a bare identifier.

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualadam/common.hpp"

namespace dualadam {

using CsvCell = std::variant<double, std::int64_t, std::string>;

class CsvWriter {
public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header)
      : out_(path, std::ios::binary), width_(header.size()) {
    require(static_cast<bool>(out_), "cannot open " + path.string() + " for writing");
    write_line(header);
  }

  void row(const std::vector<CsvCell>& cells) {
    require(cells.size() == width_, "csv row width does not match header");
    std::vector<std::string> text;
    text.reserve(cells.size());
    for (const auto& c : cells) {
      if (const auto* d = std::get_if<double>(&c))
        text.push_back(fmt_num(*d));
      else if (const auto* i = std::get_if<std::int64_t>(&c))
        text.push_back(std::to_string(*i));
      else
        text.push_back(std::get<std::string>(c));
    }
    write_line(text);
  }

private:
  void write_line(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::ofstream out_;
  std::size_t width_;
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline bool is_number(const std::string& s) {
  if (s == "nan" || s == "inf" || s == "-inf") return true;
  double v;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && p == s.data() + s.size();
}

inline bool is_identifier(const std::string& s) {
  if (s.empty()) return false;
  for (char ch : s)
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-' || ch == '.'))
      return false;
  return true;
}
}  // namespace detail

/// Checks that a CSV has exactly `header` and well-formed rows. Returns an
/// empty string on success, else a message naming the file, row and column.
inline std::string check_csv(const std::filesystem::path& path, const std::vector<std::string>& header) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return path.string() + ": missing";
  std::string line;
  if (!std::getline(in, line)) return path.string() + ": empty file";
  const auto got = detail::split_csv_line(line);
  if (got != header) {
    std::string want;
    for (const auto& h : header) want += (want.empty() ? "" : ",") + h;
    return path.string() + ": header '" + line + "' does not match '" + want + "'";
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      return path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
             " columns, expected " + std::to_string(header.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      if (!detail::is_number(cells[c]) && !detail::is_identifier(cells[c]))
        return path.string() + ": row " + std::to_string(row) + ", column '" + header[c] +
               "': malformed value '" + cells[c] + "'";
  }
  return {};
}

}  // namespace dualadam

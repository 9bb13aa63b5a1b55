#pragma once

// Exact text encoding of doubles (shortest round-trip form) for checkpoints
// and CSV files.

#include <charconv>
#include <cstddef>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "multimatch/error.hpp"

namespace multimatch::textio {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int precision) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, precision);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    fail(ErrorKind::InvalidInput, "not a number: '" + std::string(s) + "'");
  return v;
}

inline std::size_t parse_size(std::string_view s) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    fail(ErrorKind::InvalidInput, "not a count: '" + std::string(s) + "'");
  return v;
}

inline std::string read_token(std::istream& is) {
  std::string tok;
  if (!(is >> tok)) fail(ErrorKind::Io, "unexpected end of input");
  return tok;
}

inline void expect(std::istream& is, std::string_view keyword) {
  auto tok = read_token(is);
  if (tok != keyword)
    fail(ErrorKind::Io, "expected '" + std::string(keyword) + "', found '" + tok + "'");
}

inline double read_double(std::istream& is) { return parse_double(read_token(is)); }
inline std::size_t read_size(std::istream& is) { return parse_size(read_token(is)); }

inline void write_values(std::ostream& os, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ' ';
    os << format_double(values[i]);
  }
  os << '\n';
}

inline void read_values(std::istream& is, std::span<double> out) {
  for (double& v : out) v = read_double(is);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r'))
    s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace multimatch::textio

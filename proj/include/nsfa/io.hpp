#pragma once

// CSV matrices: one line per dimension (gene), comma-separated samples,
// optional header line, literal NA for a missing entry.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "nsfa/errors.hpp"
#include "nsfa/model.hpp"

namespace nsfa::io {

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline ObservationMatrix parse_matrix(std::istream& in, bool header = false) {
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<bool>> observed;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (header && line_no == 1) continue;
    if (detail::trim(line).empty()) continue;
    const auto tokens = detail::split(line);
    if (rows.empty()) {
      width = tokens.size();
    } else if (tokens.size() != width) {
      throw ParseError("ragged row: expected " + std::to_string(width) + " fields, found " +
                           std::to_string(tokens.size()),
                       line_no);
    }
    std::vector<double> values(tokens.size());
    std::vector<bool> mask(tokens.size(), true);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto tok = tokens[i];
      if (tok == "NA") {
        values[i] = 0.0;
        mask[i] = false;
        continue;
      }
      double v = 0.0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (tok.empty() || res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
        throw ParseError("non-numeric token '" + std::string(tok) + "'", line_no);
      }
      values[i] = v;
    }
    rows.push_back(std::move(values));
    observed.push_back(std::move(mask));
  }
  if (rows.empty()) throw ParseError("empty matrix file", line_no);

  ObservationMatrix obs;
  obs.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
  obs.mask.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t d = 0; d < rows.size(); ++d) {
    for (std::size_t n = 0; n < width; ++n) {
      obs.values(static_cast<Index>(d), static_cast<Index>(n)) = rows[d][n];
      obs.mask(static_cast<Index>(d), static_cast<Index>(n)) = observed[d][n];
    }
  }
  return obs;
}

inline ObservationMatrix load_matrix(const std::string& path, bool header = false) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open matrix file: " + path);
  try {
    return parse_matrix(in, header);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what(), e.line());
  }
}

// Writes values with shortest round-trip formatting; masked-false entries as NA.
inline void write_matrix(std::ostream& out, const Matrix& values, const Mask* mask = nullptr) {
  for (Index d = 0; d < values.rows(); ++d) {
    for (Index n = 0; n < values.cols(); ++n) {
      if (n > 0) out << ',';
      if (mask && !(*mask)(d, n)) {
        out << "NA";
      } else {
        out << detail::format_double(values(d, n));
      }
    }
    out << '\n';
  }
}

inline void save_matrix(const std::string& path, const Matrix& values, const Mask* mask = nullptr) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write matrix file: " + path);
  write_matrix(out, values, mask);
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline void save_observations(const std::string& path, const ObservationMatrix& obs) {
  save_matrix(path, obs.values, &obs.mask);
}

inline void save_binary(const std::string& path, const BinaryMatrix& z) {
  save_matrix(path, z.cast<double>());
}

// Mask files hold 1 (observed) or 0 (held out).
inline void save_mask(const std::string& path, const Mask& mask) {
  save_matrix(path, mask.cast<double>().matrix());
}

inline Mask load_mask(const std::string& path) {
  const ObservationMatrix raw = load_matrix(path);
  if (raw.missing_count() > 0) throw ParseError(path + ": mask files may not contain NA", 0);
  Mask mask(raw.values.rows(), raw.values.cols());
  for (Index i = 0; i < raw.values.size(); ++i) {
    const double v = raw.values(i);
    if (v != 0.0 && v != 1.0) throw ParseError(path + ": mask entries must be 0 or 1", 0);
    mask(i) = v == 1.0;
  }
  return mask;
}

inline BinaryMatrix load_binary(const std::string& path) {
  const Mask m = load_mask(path);
  return m.cast<std::uint8_t>().matrix();
}

}  // namespace nsfa::io

#pragma once

// Artifact output: atomic file writes, CSV tables, JSON helpers and the
// columnar binary container for path batches.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "qsmp/path_array.hpp"

namespace qsmp::io {

/// Writes to a sibling temporary file and renames it over path.
void write_atomic(const std::filesystem::path& path, std::string_view content);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Shortest round-trip decimal form; "nan", "inf" and "-inf" otherwise.
std::string format_double(double v);

/// Rectangular result table.
class Table {
 public:
  using Cell = std::variant<std::string, double, std::int64_t, std::uint64_t>;

  explicit Table(std::vector<std::string> header);
  /// Throws Error when the row width differs from the header.
  void add_row(std::vector<Cell> row);
  std::size_t rows() const { return rows_.size(); }
  const std::vector<std::string>& header() const { return header_; }

  /// RFC-4180 text with a header row and CRLF line ends.
  std::string csv() const;
  /// {"columns": [...], "rows": [[...], ...]}; non-finite numbers become null.
  nlohmann::json json() const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<Cell>> rows_;
};

/// Number or null when v is not finite.
nlohmann::json number(double v);
nlohmann::json numbers(const std::vector<double>& v);

/// Named dense arrays of doubles behind a header (M, N, n, d, dt).
///
///   "QSMPBIN1"  u64 M  u64 N  u64 n  u64 d  f64 dt  u64 sections
///   per section: u64 name length, name bytes, u64 rank, u64 dims[rank], f64 data
///
/// All integers and floats are little-endian; data is row-major.
struct BinarySection {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> data;
};

struct BinaryContainer {
  std::uint64_t M = 0, N = 0, n = 0, d = 0;
  double dt = 0.0;
  std::vector<BinarySection> sections;

  /// Adds a path array as a paths x steps x components section.
  void add(const std::string& name, const PathArray& a);
  const BinarySection* find(const std::string& name) const;

  std::string serialize() const;
  /// Throws Error on a malformed buffer.
  static BinaryContainer parse(std::string_view bytes);
};

}  // namespace qsmp::io

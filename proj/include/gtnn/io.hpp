#pragma once

// JSON files for networks, graph tuples, graphons and signals, and small
// helpers for CSV output and artifact hashing.
//
// Every file carries "format" and "version" fields plus explicit dimensions;
// matrices are row-major flat arrays. Readers throw DataError naming the
// offending field, e.g. "layers[1].polys[0].terms[2].word".

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gtnn/graphon.hpp"
#include "gtnn/linop.hpp"
#include "gtnn/network.hpp"

namespace gtnn {

using Json = nlohmann::json;

inline constexpr int kFileFormatVersion = 1;

Json network_to_json(const NetworkSpec& net);
NetworkSpec network_from_json(const Json& j);

Json matrix_to_json(const Matrix& m);
/// Reads {"rows", "cols", "data"}; `where` prefixes error messages.
Matrix matrix_from_json(const Json& j, const std::string& where);

Json graphs_to_json(std::span<const SymOperator> graphs);
/// Throws DataError for asymmetric or mismatched operators.
std::vector<SymOperator> graphs_from_json(const Json& j);

Json graphon_to_json(const PiecewiseGraphon& w);
PiecewiseGraphon graphon_from_json(const Json& j);

Json signal_to_json(const MultiSignal& x);
MultiSignal signal_from_json(const Json& j);

/// Parses a file; syntax errors become DataError with the line number.
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

/// Shortest round-trip decimal form.
std::string format_double(double x);

/// Comma-separated rows with a fixed header.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> header);

  CsvWriter& cell(double x);
  CsvWriter& cell(long long x);
  CsvWriter& cell(int x) { return cell(static_cast<long long>(x)); }
  CsvWriter& cell(const std::string& s);
  /// Throws ShapeError when the row does not match the header width.
  void end_row();

 private:
  std::ostream& out_;
  std::size_t width_;
  std::size_t filled_ = 0;
};

/// FNV-1a 64 of a file's bytes as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

}  // namespace gtnn

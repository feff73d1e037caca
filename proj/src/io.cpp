#include "gtnn/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <cstdio>
#include <limits>

#include "gtnn/error.hpp"
#include "gtnn/hash.hpp"

namespace gtnn {
namespace {

// A JSON value together with its path, for error messages.
class Node {
 public:
  Node(const Json& j, std::string path) : j_(j), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& msg) const {
    throw DataError((path_.empty() ? std::string("document") : path_) + ": " + msg);
  }

  Node operator[](const char* key) const {
    if (!j_.is_object()) fail("expected an object");
    auto it = j_.find(key);
    const std::string sub = path_.empty() ? key : path_ + "." + key;
    if (it == j_.end()) throw DataError(sub + ": missing field");
    return Node(*it, sub);
  }
  bool has(const char* key) const { return j_.is_object() && j_.contains(key); }

  std::size_t size() const {
    if (!j_.is_array()) fail("expected an array");
    return j_.size();
  }
  Node operator[](std::size_t i) const { return Node(j_.at(i), path_ + "[" + std::to_string(i) + "]"); }

  double number() const {
    if (!j_.is_number()) fail("expected a number");
    const double v = j_.get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }
  int integer(int lo = std::numeric_limits<int>::min()) const {
    if (!j_.is_number_integer()) fail("expected an integer");
    const auto v = j_.get<long long>();
    if (v < lo || v > std::numeric_limits<int>::max()) fail("integer out of range");
    return static_cast<int>(v);
  }
  std::string string() const {
    if (!j_.is_string()) fail("expected a string");
    return j_.get<std::string>();
  }

  void expect_format(const std::string& format) const {
    if ((*this)["format"].string() != format) (*this)["format"].fail("expected \"" + format + "\"");
    if ((*this)["version"].integer() != kFileFormatVersion)
      (*this)["version"].fail("unsupported version");
  }

 private:
  const Json& j_;
  std::string path_;
};

Json word_to_json(const Word& w) { return Json(w.letters()); }

Word word_from(const Node& n, int arity) {
  std::vector<int> letters;
  for (std::size_t i = 0; i < n.size(); ++i) {
    const int l = n[i].integer(1);
    if (l > arity) n[i].fail("letter exceeds arity " + std::to_string(arity));
    letters.push_back(l);
  }
  return Word(std::move(letters));
}

Json poly_to_json(const NCPoly& p) {
  Json terms = Json::array();
  for (const auto& [w, c] : p.terms()) terms.push_back({{"word", word_to_json(w)}, {"coef", c}});
  return {{"terms", terms}};
}

NCPoly poly_from(const Node& n, int arity) {
  NCPoly::Terms terms;
  const Node ts = n["terms"];
  for (std::size_t i = 0; i < ts.size(); ++i) {
    Word w = word_from(ts[i]["word"], arity);
    const double c = ts[i]["coef"].number();
    if (!terms.emplace(std::move(w), c).second) ts[i]["word"].fail("duplicate word");
  }
  return NCPoly(arity, std::move(terms));
}

Json header(const char* format) { return {{"format", format}, {"version", kFileFormatVersion}}; }

Matrix matrix_from(const Node& n) {
  const int rows = n["rows"].integer(0), cols = n["cols"].integer(0);
  const Node data = n["data"];
  if (data.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
    data.fail("expected " + std::to_string(rows) + " x " + std::to_string(cols) + " entries");
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r) * cols + c].number();
  return m;
}

}  // namespace

Json matrix_to_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const Json& j, const std::string& where) { return matrix_from(Node(j, where)); }

Json network_to_json(const NetworkSpec& net) {
  Json j = header("gtnn.network");
  j["arity"] = net.arity();
  j["degree"] = net.degree();
  if (!net.full_support()) {
    Json s = Json::array();
    for (const auto& w : net.support()) s.push_back(word_to_json(w));
    j["support"] = s;
  }
  Json layers = Json::array();
  for (const auto& l : net.layers()) {
    Json polys = Json::array();
    for (const auto& p : l.polys.entries()) polys.push_back(poly_to_json(p));
    layers.push_back({{"activation", to_string(l.activation)},
                      {"rows", l.polys.rows()},
                      {"cols", l.polys.cols()},
                      {"polys", polys}});
  }
  j["layers"] = layers;
  return j;
}

NetworkSpec network_from_json(const Json& json) {
  const Node root(json, "");
  root.expect_format("gtnn.network");
  const int arity = root["arity"].integer(1);
  const int degree = root["degree"].integer(0);
  std::vector<LayerSpec> layers;
  const Node ls = root["layers"];
  for (std::size_t i = 0; i < ls.size(); ++i) {
    const Node l = ls[i];
    const int rows = l["rows"].integer(1), cols = l["cols"].integer(1);
    const Node ps = l["polys"];
    if (ps.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
      ps.fail("expected rows * cols polynomials");
    std::vector<NCPoly> entries;
    for (std::size_t e = 0; e < ps.size(); ++e) {
      entries.push_back(poly_from(ps[e], arity));
      if (entries.back().degree() > degree) ps[e].fail("polynomial exceeds degree " + std::to_string(degree));
    }
    LayerSpec spec{PolyMatrix(rows, cols, std::move(entries)), Activation::relu};
    try {
      spec.activation = parse_activation(l["activation"].string());
    } catch (const ConfigError& e) {
      l["activation"].fail(e.what());
    }
    layers.push_back(std::move(spec));
  }
  try {
    if (root.has("support")) {
      const Node s = root["support"];
      std::vector<Word> support;
      for (std::size_t i = 0; i < s.size(); ++i) support.push_back(word_from(s[i], arity));
      return NetworkSpec(arity, degree, std::move(layers), std::move(support));
    }
    return NetworkSpec(arity, degree, std::move(layers));
  } catch (const DataError&) {
    throw;
  } catch (const Error& e) {
    throw DataError(std::string("layers: ") + e.what());
  }
}

Json graphs_to_json(std::span<const SymOperator> graphs) {
  Json j = header("gtnn.graphs");
  j["k"] = graphs.size();
  j["n"] = graphs.empty() ? 0 : graphs.front().dim();
  Json ops = Json::array();
  for (const auto& g : graphs) ops.push_back(matrix_to_json(g.matrix()));
  j["operators"] = ops;
  return j;
}

std::vector<SymOperator> graphs_from_json(const Json& json) {
  const Node root(json, "");
  root.expect_format("gtnn.graphs");
  const int k = root["k"].integer(1), n = root["n"].integer(1);
  const Node ops = root["operators"];
  if (ops.size() != static_cast<std::size_t>(k)) ops.fail("expected " + std::to_string(k) + " operators");
  std::vector<SymOperator> out;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    Matrix m = matrix_from(ops[i]);
    if (m.rows() != n || m.cols() != n) ops[i].fail("expected an n x n matrix");
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) ops[i].fail("matrix is not symmetric");
    out.emplace_back(m);
  }
  return out;
}

Json graphon_to_json(const PiecewiseGraphon& w) {
  Json j = header("gtnn.graphon");
  j["grid"] = w.grid();
  j["values"] = matrix_to_json(w.values());
  return j;
}

PiecewiseGraphon graphon_from_json(const Json& json) {
  const Node root(json, "");
  root.expect_format("gtnn.graphon");
  const int grid = root["grid"].integer(1);
  Matrix v = matrix_from(root["values"]);
  if (v.rows() != grid || v.cols() != grid) root["values"].fail("expected a grid x grid matrix");
  try {
    return PiecewiseGraphon(std::move(v));
  } catch (const Error& e) {
    root["values"].fail(e.what());
  }
}

Json signal_to_json(const MultiSignal& x) {
  Json j = header("gtnn.signal");
  j["measure_weight"] = x.measure_weight();
  j["values"] = matrix_to_json(x.values());
  return j;
}

MultiSignal signal_from_json(const Json& json) {
  const Node root(json, "");
  root.expect_format("gtnn.signal");
  const double w = root["measure_weight"].number();
  if (w <= 0.0) root["measure_weight"].fail("expected a positive weight");
  return MultiSignal(matrix_from(root["values"]), w);
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw DataError(path.string() + ": invalid JSON at byte " + std::to_string(e.byte));
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

CsvWriter::CsvWriter(std::ostream& out, std::vector<std::string> header) : out_(out), width_(header.size()) {
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

CsvWriter& CsvWriter::cell(double x) {
  out_ << (filled_++ ? "," : "") << format_double(x);
  return *this;
}

CsvWriter& CsvWriter::cell(long long x) {
  out_ << (filled_++ ? "," : "") << x;
  return *this;
}

CsvWriter& CsvWriter::cell(const std::string& s) {
  out_ << (filled_++ ? "," : "") << s;
  return *this;
}

void CsvWriter::end_row() {
  if (filled_ != width_)
    throw ShapeError("csv row has " + std::to_string(filled_) + " cells, header has " + std::to_string(width_));
  out_ << '\n';
  filled_ = 0;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    h = fnv1a(std::span(reinterpret_cast<const unsigned char*>(buf), static_cast<std::size_t>(in.gcount())), h);
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace gtnn

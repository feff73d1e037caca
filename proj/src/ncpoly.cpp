#include "gtnn/ncpoly.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "gtnn/error.hpp"

namespace gtnn {

int Word::max_letter() const noexcept {
  int m = 0;
  for (int l : letters_) m = std::max(m, l);
  return m;
}

int Word::count(int j) const noexcept {
  return static_cast<int>(std::count(letters_.begin(), letters_.end(), j));
}

Word Word::reversed() const { return Word(std::vector<int>(letters_.rbegin(), letters_.rend())); }

Word Word::tail() const {
  if (letters_.empty()) throw PreconditionError("tail of the empty word");
  return Word(std::vector<int>(letters_.begin() + 1, letters_.end()));
}

Word Word::concat(const Word& other) const {
  std::vector<int> out = letters_;
  out.insert(out.end(), other.letters_.begin(), other.letters_.end());
  return Word(std::move(out));
}

std::strong_ordering operator<=>(const Word& a, const Word& b) {
  if (auto c = a.length() <=> b.length(); c != 0) return c;
  return std::lexicographical_compare_three_way(a.letters_.begin(), a.letters_.end(),
                                                b.letters_.begin(), b.letters_.end());
}

std::string Word::to_string() const {
  if (letters_.empty()) return "1";
  std::ostringstream os;
  for (int l : letters_) os << 'X' << l;
  return os.str();
}

WordCount word_count(int k, int d) {
  if (k < 1 || d < 0) throw PreconditionError("word_count requires k >= 1 and d >= 0");
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  const auto kk = static_cast<std::uint64_t>(k);
  std::uint64_t power = 1;
  std::uint64_t total = 1;
  for (int i = 1; i <= d; ++i) {
    if (power > kMax / kk) throw std::overflow_error("word_count overflows 64 bits");
    power *= kk;
    if (total > kMax - power) throw std::overflow_error("word_count overflows 64 bits");
    total += power;
  }
  return {power, total};
}

std::vector<Word> enumerate_basis(int k, int d) {
  const auto count = word_count(k, d).up_to_d;
  std::vector<Word> out;
  out.reserve(count);
  out.emplace_back();
  std::vector<int> letters;
  for (int len = 1; len <= d; ++len) {
    letters.assign(len, 1);
    while (true) {
      out.emplace_back(letters);
      int pos = len - 1;
      while (pos >= 0 && letters[pos] == k) letters[pos--] = 1;
      if (pos < 0) break;
      ++letters[pos];
    }
  }
  return out;
}

std::size_t basis_index(const Word& w, int k) {
  const auto len = static_cast<int>(w.length());
  std::size_t offset = len == 0 ? 0 : word_count(k, len - 1).up_to_d;
  std::size_t rank = 0;
  for (int l : w.letters()) {
    if (l < 1 || l > k) throw ShapeError("letter out of range in basis_index");
    rank = rank * static_cast<std::size_t>(k) + static_cast<std::size_t>(l - 1);
  }
  return offset + rank;
}

namespace {

void check_arity(int arity) {
  if (arity < 1) throw PreconditionError("polynomial arity must be >= 1");
}

void check_word(const Word& w, int arity) {
  for (int l : w.letters())
    if (l < 1 || l > arity)
      throw ShapeError("word " + w.to_string() + " uses a letter outside 1.." +
                       std::to_string(arity));
}

void require_same_arity(const NCPoly& p, const NCPoly& q) {
  if (p.arity() != q.arity())
    throw ShapeError("arity mismatch: " + std::to_string(p.arity()) + " vs " +
                     std::to_string(q.arity()));
}

}  // namespace

NCPoly::NCPoly(int arity) : arity_(arity) { check_arity(arity); }

NCPoly::NCPoly(int arity, Terms terms) : arity_(arity) {
  check_arity(arity);
  for (auto& [w, c] : terms) {
    check_word(w, arity);
    if (c != 0.0) terms_.emplace(w, c);
  }
}

NCPoly::NCPoly(int arity, std::initializer_list<std::pair<Word, double>> terms)
    : arity_(arity) {
  check_arity(arity);
  for (const auto& [w, c] : terms) {
    check_word(w, arity);
    terms_[w] += c;
  }
  std::erase_if(terms_, [](const auto& kv) { return kv.second == 0.0; });
}

double NCPoly::coefficient(const Word& w) const {
  auto it = terms_.find(w);
  return it == terms_.end() ? 0.0 : it->second;
}

int NCPoly::degree() const noexcept {
  // The map is ordered by length first, so the last key is the longest.
  return terms_.empty() ? 0 : static_cast<int>(terms_.rbegin()->first.length());
}

NCPoly add(const NCPoly& p, const NCPoly& q) {
  require_same_arity(p, q);
  NCPoly::Terms out = p.terms();
  for (const auto& [w, c] : q.terms()) out[w] += c;
  return NCPoly(p.arity(), std::move(out));
}

NCPoly scale(const NCPoly& p, double r) {
  NCPoly::Terms out;
  for (const auto& [w, c] : p.terms()) out.emplace(w, c * r);
  return NCPoly(p.arity(), std::move(out));
}

NCPoly multiply(const NCPoly& p, const NCPoly& q) {
  require_same_arity(p, q);
  NCPoly::Terms out;
  for (const auto& [wp, cp] : p.terms())
    for (const auto& [wq, cq] : q.terms()) out[wp.concat(wq)] += cp * cq;
  return NCPoly(p.arity(), std::move(out));
}

NCPoly truncate(const NCPoly& p, int degree) {
  NCPoly::Terms out;
  for (const auto& [w, c] : p.terms())
    if (static_cast<int>(w.length()) <= degree) out.emplace(w, c);
  return NCPoly(p.arity(), std::move(out));
}

ExpansionConstants expansion_constants(const NCPoly& p) {
  ExpansionConstants ec;
  ec.c_per_var.assign(static_cast<std::size_t>(p.arity()), 0.0);
  for (const auto& [w, c] : p.terms()) {
    const double a = std::abs(c);
    ec.c_total += a;
    for (int l : w.letters()) ec.c_per_var[static_cast<std::size_t>(l - 1)] += a;
  }
  return ec;
}

PolyMatrix::PolyMatrix(int rows, int cols, int arity)
    : rows_(rows), cols_(cols), arity_(arity) {
  if (rows < 1 || cols < 1) throw ShapeError("polynomial matrix needs positive dimensions");
  entries_.assign(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), NCPoly(arity));
}

PolyMatrix::PolyMatrix(int rows, int cols, std::vector<NCPoly> entries)
    : rows_(rows), cols_(cols), arity_(0), entries_(std::move(entries)) {
  if (rows < 1 || cols < 1) throw ShapeError("polynomial matrix needs positive dimensions");
  if (entries_.size() != static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols))
    throw ShapeError("polynomial matrix entry count does not match its shape");
  arity_ = entries_.front().arity();
  for (const auto& p : entries_)
    if (p.arity() != arity_) throw ShapeError("polynomial matrix entries disagree on arity");
}

std::size_t PolyMatrix::index(int b, int a) const {
  if (b < 0 || b >= rows_ || a < 0 || a >= cols_) throw ShapeError("polynomial matrix index out of range");
  return static_cast<std::size_t>(b) * static_cast<std::size_t>(cols_) + static_cast<std::size_t>(a);
}

void PolyMatrix::set(int b, int a, NCPoly p) {
  if (p.arity() != arity_) throw ShapeError("polynomial arity does not match the matrix");
  entries_[index(b, a)] = std::move(p);
}

int PolyMatrix::degree() const noexcept {
  int d = 0;
  for (const auto& p : entries_) d = std::max(d, p.degree());
  return d;
}

}  // namespace gtnn

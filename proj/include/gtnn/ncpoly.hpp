#pragma once

// Non-commutative polynomials over k variables.
//
// A polynomial is a finite map from words (sequences of variable indices
// 1..k) to nonzero real coefficients. Multiplication is word concatenation
// extended bilinearly. Words are totally ordered by length, then
// lexicographically, which fixes the flattened coefficient order used by
// serialization and by gradient vectors.

#include <compare>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gtnn {

class Word {
 public:
  Word() = default;
  Word(std::initializer_list<int> letters) : letters_(letters) {}
  explicit Word(std::vector<int> letters) : letters_(std::move(letters)) {}

  std::size_t length() const noexcept { return letters_.size(); }
  bool empty() const noexcept { return letters_.empty(); }
  int operator[](std::size_t i) const { return letters_[i]; }
  const std::vector<int>& letters() const noexcept { return letters_; }

  int max_letter() const noexcept;
  /// Occurrences of variable `j` (1-based).
  int count(int j) const noexcept;
  Word reversed() const;
  /// The word with its first letter removed; requires a nonempty word.
  Word tail() const;
  Word concat(const Word& other) const;

  friend bool operator==(const Word&, const Word&) = default;
  friend std::strong_ordering operator<=>(const Word& a, const Word& b);

  std::string to_string() const;

 private:
  std::vector<int> letters_;
};

struct WordCount {
  std::uint64_t exact_d;
  std::uint64_t up_to_d;
};

/// Number of words of length exactly d and of length at most d over k
/// letters. Throws std::overflow_error past 64 bits.
WordCount word_count(int k, int d);

/// All words of length <= d over {1..k}, in canonical order.
std::vector<Word> enumerate_basis(int k, int d);

/// Position of `w` inside enumerate_basis(k, d) for any d >= w.length().
std::size_t basis_index(const Word& w, int k);

struct ExpansionConstants {
  double c_total = 0.0;
  std::vector<double> c_per_var;
};

class NCPoly {
 public:
  using Terms = std::map<Word, double>;

  explicit NCPoly(int arity);
  /// Zero coefficients are dropped; words must only use letters <= arity.
  NCPoly(int arity, Terms terms);
  NCPoly(int arity, std::initializer_list<std::pair<Word, double>> terms);

  static NCPoly unit(int arity) { return NCPoly(arity, {{Word{}, 1.0}}); }
  static NCPoly variable(int arity, int j) { return NCPoly(arity, {{Word{j}, 1.0}}); }

  int arity() const noexcept { return arity_; }
  const Terms& terms() const noexcept { return terms_; }
  bool is_zero() const noexcept { return terms_.empty(); }
  double coefficient(const Word& w) const;
  /// Length of the longest word with a nonzero coefficient (0 for zero poly).
  int degree() const noexcept;
  bool has_constant_term() const { return terms_.count(Word{}) != 0; }

  friend bool operator==(const NCPoly&, const NCPoly&) = default;

 private:
  int arity_;
  Terms terms_;
};

NCPoly add(const NCPoly& p, const NCPoly& q);
NCPoly scale(const NCPoly& p, double r);
NCPoly multiply(const NCPoly& p, const NCPoly& q);

inline NCPoly operator+(const NCPoly& p, const NCPoly& q) { return add(p, q); }
inline NCPoly operator*(const NCPoly& p, const NCPoly& q) { return multiply(p, q); }
inline NCPoly operator*(double r, const NCPoly& p) { return scale(p, r); }

/// Drops every term longer than `degree`.
NCPoly truncate(const NCPoly& p, int degree);

/// C(p) = sum |c_a| and C_j(p) = sum q_j(a) |c_a|.
ExpansionConstants expansion_constants(const NCPoly& p);

/// A rows x cols matrix of polynomials sharing one arity, row-major. Row b,
/// column a holds the polynomial mapping input feature a to output feature b.
class PolyMatrix {
 public:
  PolyMatrix(int rows, int cols, int arity);
  PolyMatrix(int rows, int cols, std::vector<NCPoly> entries);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  int arity() const noexcept { return arity_; }
  const NCPoly& at(int b, int a) const { return entries_[index(b, a)]; }
  void set(int b, int a, NCPoly p);
  const std::vector<NCPoly>& entries() const noexcept { return entries_; }
  int degree() const noexcept;

  friend bool operator==(const PolyMatrix&, const PolyMatrix&) = default;

 private:
  std::size_t index(int b, int a) const;

  int rows_;
  int cols_;
  int arity_;
  std::vector<NCPoly> entries_;
};

}  // namespace gtnn

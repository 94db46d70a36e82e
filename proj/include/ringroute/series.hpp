#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "ringroute/error.hpp"

namespace ringroute {

using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

// Power series in one variable truncated after degree k, exact
// coefficients a_0..a_k.
template <class Coeff>
struct TruncatedSeries {
  std::vector<Coeff> coeffs;

  TruncatedSeries() = default;
  explicit TruncatedSeries(int k) : coeffs(static_cast<std::size_t>(k + 1)) {}
  explicit TruncatedSeries(std::vector<Coeff> c) : coeffs(std::move(c)) {}

  int degree_bound() const noexcept { return static_cast<int>(coeffs.size()) - 1; }
  const Coeff& operator[](int d) const { return coeffs[static_cast<std::size_t>(d)]; }
  Coeff& operator[](int d) { return coeffs[static_cast<std::size_t>(d)]; }

  bool is_zero() const {
    for (const auto& c : coeffs)
      if (c != 0) return false;
    return true;
  }

  // Lowest degree with a nonzero coefficient, or -1 for the zero series.
  int valuation() const {
    for (std::size_t d = 0; d < coeffs.size(); ++d)
      if (coeffs[d] != 0) return static_cast<int>(d);
    return -1;
  }

  TruncatedSeries& operator+=(const TruncatedSeries& o) {
    require(o.coeffs.size() == coeffs.size(), "series degree bounds differ");
    for (std::size_t d = 0; d < coeffs.size(); ++d) coeffs[d] += o.coeffs[d];
    return *this;
  }

  TruncatedSeries operator*(const TruncatedSeries& o) const {
    require(o.coeffs.size() == coeffs.size(), "series degree bounds differ");
    TruncatedSeries out(degree_bound());
    for (std::size_t i = 0; i < coeffs.size(); ++i) {
      if (coeffs[i] == 0) continue;
      for (std::size_t j = 0; i + j < coeffs.size(); ++j) out.coeffs[i + j] += coeffs[i] * o.coeffs[j];
    }
    return out;
  }

  friend bool operator==(const TruncatedSeries& a, const TruncatedSeries& b) {
    return a.coeffs == b.coeffs;
  }
};

using IntSeries = TruncatedSeries<BigInt>;
using RationalSeries = TruncatedSeries<Rational>;

// Taylor coefficients of 1 / b(x) through degree k.
inline RationalSeries series_inverse(const std::vector<Rational>& b, int k) {
  require(!b.empty() && b[0] != 0, "series inverse needs a nonzero constant term");
  RationalSeries out(k);
  for (int d = 0; d <= k; ++d) {
    Rational acc = d == 0 ? Rational(1) : Rational(0);
    for (int j = 1; j <= d && j < static_cast<int>(b.size()); ++j)
      acc -= b[static_cast<std::size_t>(j)] * out[d - j];
    out[d] = acc / b[0];
  }
  return out;
}

// Taylor coefficients of a(x) / b(x) through degree k.
inline RationalSeries series_quotient(const std::vector<Rational>& a, const std::vector<Rational>& b,
                                      int k) {
  RationalSeries num(k);
  for (int d = 0; d <= k && d < static_cast<int>(a.size()); ++d) num[d] = a[static_cast<std::size_t>(d)];
  return num * series_inverse(b, k);
}

inline std::vector<std::string> to_strings(const IntSeries& s) {
  std::vector<std::string> out;
  for (const auto& c : s.coeffs) out.push_back(c.str());
  return out;
}

inline std::string to_string(const Rational& q) {
  if (denominator(q) == 1) return numerator(q).str();
  return numerator(q).str() + "/" + denominator(q).str();
}

// Decimal integer; leading zeros are not read as octal.
inline BigInt parse_bigint(const std::string& text) {
  std::size_t i = 0;
  bool negative = false;
  if (i < text.size() && (text[i] == '-' || text[i] == '+')) negative = text[i++] == '-';
  require(i < text.size(), "not an integer: " + text);
  BigInt v = 0;
  for (; i < text.size(); ++i) {
    require(text[i] >= '0' && text[i] <= '9', "not an integer: " + text);
    v = v * 10 + (text[i] - '0');
  }
  return negative ? BigInt(-v) : v;
}

// Parses "123", "-7", "3/4" or a plain decimal such as "0.25" exactly.
inline Rational parse_rational(const std::string& text) {
  require(!text.empty(), "empty number");
  const auto slash = text.find('/');
  if (slash != std::string::npos) {
    BigInt n = parse_bigint(text.substr(0, slash));
    BigInt d = parse_bigint(text.substr(slash + 1));
    require(d != 0, "zero denominator in " + text);
    return Rational(n, d);
  }
  const auto dot = text.find('.');
  if (dot == std::string::npos && text.find_first_of("eE") == std::string::npos)
    return Rational(parse_bigint(text));
  require(text.find_first_of("eE") == std::string::npos,
          "exponent notation not accepted for exact input: " + text);
  std::string digits = text.substr(0, dot) + text.substr(dot + 1);
  if (digits.empty() || digits == "-" || digits == "+") digits += "0";
  BigInt n = parse_bigint(digits);
  BigInt d = 1;
  for (std::size_t i = dot + 1; i < text.size(); ++i) d *= 10;
  return Rational(n, d);
}

inline IntSeries parse_int_series(const std::vector<std::string>& coeffs) {
  IntSeries s(static_cast<int>(coeffs.size()) - 1);
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    const Rational q = parse_rational(coeffs[i]);
    require(denominator(q) == 1, "coefficient is not an integer: " + coeffs[i]);
    s.coeffs[i] = numerator(q);
  }
  return s;
}

}  // namespace ringroute

#pragma once

// Light-traffic diagnostics on exact coefficient lists: rationality via
// the annihilator matrix, absolute monotonicity via coefficient signs or
// forward differences, and the leading light-traffic coefficient.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ringroute/error.hpp"
#include "ringroute/series.hpp"

namespace ringroute {

inline constexpr std::uint64_t kPrimeM61 = (1ULL << 61) - 1;
inline constexpr std::uint64_t kPrimeM31 = (1ULL << 31) - 1;

namespace analysis_detail {

inline std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t m) {
  return static_cast<std::uint64_t>(static_cast<unsigned __int128>(a) * b % m);
}

inline std::uint64_t powmod(std::uint64_t a, std::uint64_t e, std::uint64_t m) {
  std::uint64_t r = 1 % m;
  for (a %= m; e; e >>= 1, a = mulmod(a, a, m))
    if (e & 1) r = mulmod(r, a, m);
  return r;
}

inline std::uint64_t residue(const BigInt& x, std::uint64_t m) {
  BigInt r = x % m;
  if (r < 0) r += m;
  return r.convert_to<std::uint64_t>();
}

inline bool is_prime(std::uint64_t n) {
  if (n < 2) return false;
  for (std::uint64_t p : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
    if (n % p == 0) return n == p;
  }
  std::uint64_t d = n - 1;
  int s = 0;
  while (d % 2 == 0) {
    d /= 2;
    ++s;
  }
  for (std::uint64_t a : {2ULL, 3ULL, 5ULL, 7ULL, 11ULL, 13ULL, 17ULL, 19ULL, 23ULL, 29ULL, 31ULL, 37ULL}) {
    std::uint64_t x = powmod(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool composite = true;
    for (int i = 1; i < s && composite; ++i) {
      x = mulmod(x, x, n);
      if (x == n - 1) composite = false;
    }
    if (composite) return false;
  }
  return true;
}

inline int rank_mod(std::vector<std::vector<std::uint64_t>> a, std::uint64_t m) {
  const std::size_t rows = a.size();
  const std::size_t cols = rows ? a[0].size() : 0;
  int rank = 0;
  for (std::size_t c = 0; c < cols && static_cast<std::size_t>(rank) < rows; ++c) {
    std::size_t piv = static_cast<std::size_t>(rank);
    while (piv < rows && a[piv][c] == 0) ++piv;
    if (piv == rows) continue;
    std::swap(a[piv], a[static_cast<std::size_t>(rank)]);
    auto& pr = a[static_cast<std::size_t>(rank)];
    const std::uint64_t inv = powmod(pr[c], m - 2, m);
    for (auto& x : pr) x = mulmod(x, inv, m);
    for (std::size_t r = 0; r < rows; ++r) {
      if (r == static_cast<std::size_t>(rank) || a[r][c] == 0) continue;
      const std::uint64_t f = a[r][c];
      for (std::size_t k = 0; k < cols; ++k) a[r][k] = (a[r][k] + m - mulmod(f, pr[k], m)) % m;
    }
    ++rank;
  }
  return rank;
}

// One nonzero kernel vector of an integer matrix, or empty if the matrix
// is nonsingular over Q.
inline std::vector<Rational> kernel_vector(const std::vector<std::vector<BigInt>>& m) {
  const std::size_t rows = m.size();
  const std::size_t cols = rows ? m[0].size() : 0;
  std::vector<std::vector<Rational>> a(rows, std::vector<Rational>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) a[r][c] = Rational(m[r][c]);
  std::vector<int> pivot_col;
  std::size_t rank = 0;
  for (std::size_t c = 0; c < cols && rank < rows; ++c) {
    std::size_t piv = rank;
    while (piv < rows && a[piv][c] == 0) ++piv;
    if (piv == rows) continue;
    std::swap(a[piv], a[rank]);
    const Rational d = a[rank][c];
    for (auto& x : a[rank]) x /= d;
    for (std::size_t r = 0; r < rows; ++r) {
      if (r == rank || a[r][c] == 0) continue;
      const Rational f = a[r][c];
      for (std::size_t k = 0; k < cols; ++k) a[r][k] -= f * a[rank][k];
    }
    pivot_col.push_back(static_cast<int>(c));
    ++rank;
  }
  if (rank == cols) return {};
  std::vector<bool> is_pivot(cols, false);
  for (int c : pivot_col) is_pivot[static_cast<std::size_t>(c)] = true;
  std::size_t free = 0;
  while (is_pivot[free]) ++free;
  std::vector<Rational> v(cols, Rational(0));
  v[free] = 1;
  for (std::size_t r = 0; r < pivot_col.size(); ++r)
    v[static_cast<std::size_t>(pivot_col[r])] = -a[r][free];
  return v;
}

inline std::vector<BigInt> primitive_integer(const std::vector<Rational>& v) {
  BigInt l = 1;
  for (const auto& x : v) l = boost::multiprecision::lcm(l, BigInt(denominator(x)));
  std::vector<BigInt> out;
  BigInt g = 0;
  for (const auto& x : v) {
    out.push_back(BigInt(numerator(x) * (l / denominator(x))));
    g = boost::multiprecision::gcd(g, out.back());
  }
  if (g > 1)
    for (auto& x : out) x /= g;
  // Normalize the sign so the first nonzero entry is positive.
  for (const auto& x : out) {
    if (x == 0) continue;
    if (x < 0)
      for (auto& y : out) y = -y;
    break;
  }
  return out;
}

}  // namespace analysis_detail

// The (beta+1) x (beta+1) matrix with rows (c[a+i], c[a+i-1], ..., c[a+i-beta])
// for i = 1..beta+1; indices below 0 read as 0.
inline std::vector<std::vector<BigInt>> coefficient_matrix(const std::vector<BigInt>& c, int alpha,
                                                           int beta) {
  require(alpha >= 0 && beta >= 0, "alpha and beta must be nonnegative");
  require(static_cast<int>(c.size()) >= alpha + beta + 2,
          "need coefficients through degree alpha + beta + 1");
  std::vector<std::vector<BigInt>> m(static_cast<std::size_t>(beta + 1));
  for (int i = 1; i <= beta + 1; ++i)
    for (int j = 0; j <= beta; ++j) {
      const int idx = alpha + i - j;
      m[static_cast<std::size_t>(i - 1)].push_back(idx >= 0 ? c[static_cast<std::size_t>(idx)] : BigInt(0));
    }
  return m;
}

struct RationalityResult {
  int alpha = 0, beta = 0;
  std::uint64_t prime = 0;
  int rank_mod_p = 0;
  bool full_rank = false;  // over Q
  // Rank deficient mod p but nonsingular over Q: the prime divides the
  // determinant. Retry with another prime.
  bool unlucky_prime = false;
  // Denominator b_0 + b_1 s + ... + b_beta s^beta, primitive integers.
  std::vector<BigInt> annihilator;
  // b(s) c(s) has no terms of degree alpha+1 .. gamma.
  bool verified = false;
};

// Is c (through degree gamma) consistent with a(s) / b(s), deg a <= alpha,
// deg b <= beta? Full rank of the coefficient matrix rules it out.
inline RationalityResult rationality_test(const std::vector<BigInt>& c, int alpha, int beta,
                                          std::uint64_t prime = kPrimeM61) {
  require(analysis_detail::is_prime(prime), "modulus must be prime");
  const auto m = coefficient_matrix(c, alpha, beta);
  RationalityResult out;
  out.alpha = alpha;
  out.beta = beta;
  out.prime = prime;
  std::vector<std::vector<std::uint64_t>> mm(m.size());
  for (std::size_t r = 0; r < m.size(); ++r)
    for (const auto& x : m[r]) mm[r].push_back(analysis_detail::residue(x, prime));
  out.rank_mod_p = analysis_detail::rank_mod(mm, prime);
  if (out.rank_mod_p == beta + 1) {
    out.full_rank = true;
    return out;
  }
  const auto v = analysis_detail::kernel_vector(m);
  if (v.empty()) {
    out.full_rank = true;
    out.unlucky_prime = true;
    return out;
  }
  out.annihilator = analysis_detail::primitive_integer(v);
  const int gamma = static_cast<int>(c.size()) - 1;
  out.verified = true;
  for (int d = alpha + 1; d <= gamma && out.verified; ++d) {
    BigInt acc = 0;
    for (int j = 0; j <= beta && j <= d; ++j)
      acc += out.annihilator[static_cast<std::size_t>(j)] * c[static_cast<std::size_t>(d - j)];
    out.verified = acc == 0;
  }
  return out;
}

// ------------------------------------------------- absolute monotonicity

inline BigInt binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  BigInt r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// Forward difference Delta_h^n f(x) on samples f[i] = f(x0 + i g), with x
// and h given as grid indices.
template <class T>
T finite_difference(const std::vector<T>& f, std::size_t x, std::size_t h, int n) {
  require(n >= 0, "difference order must be nonnegative");
  require(x + static_cast<std::size_t>(n) * h < f.size(), "difference runs past the sample grid");
  T acc(0);
  for (int k = 0; k <= n; ++k) {
    const T term = f[x + static_cast<std::size_t>(k) * h] * T(binomial(n, k));
    if ((n - k) % 2 == 0)
      acc += term;
    else
      acc -= term;
  }
  return acc;
}

template <>
inline double finite_difference<double>(const std::vector<double>& f, std::size_t x, std::size_t h,
                                        int n) {
  require(n >= 0, "difference order must be nonnegative");
  require(x + static_cast<std::size_t>(n) * h < f.size(), "difference runs past the sample grid");
  double acc = 0;
  for (int k = 0; k <= n; ++k) {
    const double term = f[x + static_cast<std::size_t>(k) * h] * binomial(n, k).convert_to<double>();
    acc += (n - k) % 2 == 0 ? term : -term;
  }
  return acc;
}

// f_n(x + n h) by the recursive discrete-Taylor construction:
// f_0(x + k h) = f(x) and, for l > 0, f_l(x + k h) = 0 when k < l and
// (f(x + l h) - sum_{j<l} f_j(x + l h)) C(k, l) otherwise.
template <class T>
T f_n_recursion(const std::vector<T>& f, std::size_t x, std::size_t h, int n) {
  require(n >= 0, "order must be nonnegative");
  require(x + static_cast<std::size_t>(n) * h < f.size(), "recursion runs past the sample grid");
  // lead[l] = f(x + l h) - sum_{j<l} f_j(x + l h), so f_l(x + k h) = lead[l] C(k, l).
  std::vector<T> lead;
  lead.push_back(f[x]);
  for (int l = 1; l <= n; ++l) {
    T rest = f[x + static_cast<std::size_t>(l) * h];
    for (int j = 0; j < l; ++j) rest -= lead[static_cast<std::size_t>(j)] * T(binomial(l, j));
    lead.push_back(rest);
  }
  return lead[static_cast<std::size_t>(n)];  // C(n, n) = 1
}

struct MonotonicityWitness {
  int n = 0;          // order (series mode: degree)
  std::size_t x = 0;  // grid index (series mode: unused)
  std::size_t h = 0;
  std::string value;  // the negative difference or coefficient
};

struct MonotonicityVerdict {
  bool pass = true;
  std::optional<MonotonicityWitness> witness;
};

// Series mode: all Taylor coefficients at the expansion point nonnegative.
inline MonotonicityVerdict abso_mono_verdict(const IntSeries& s) {
  for (int d = 0; d <= s.degree_bound(); ++d)
    if (s[d] < 0) return {false, MonotonicityWitness{d, 0, 0, s[d].str()}};
  return {true, std::nullopt};
}

// Sample mode: Delta_h^n f(x) >= 0 for every grid x, h and n <= max_n that
// fit on the grid.
template <class T>
MonotonicityVerdict abso_mono_verdict(const std::vector<T>& f, int max_n, const T& tolerance = T(0)) {
  for (int n = 0; n <= max_n; ++n)
    for (std::size_t h = 1; h < f.size() && (n > 0 || h == 1); ++h)
      for (std::size_t x = 0; x + static_cast<std::size_t>(n) * h < f.size(); ++x) {
        const T v = finite_difference(f, x, h, n);
        if (v < -tolerance) {
          std::string text;
          if constexpr (std::is_same_v<T, Rational>) {
            text = to_string(v);
          } else {
            text = std::to_string(v);
          }
          return {false, MonotonicityWitness{n, x, h, text}};
        }
      }
  return {true, std::nullopt};
}

struct LeadingCheck {
  BigInt predicted;  // (N-2)/2 (N-1)^2
  BigInt actual;
  bool match = false;
};

// Light traffic: E[queue per node] = (N-2)/2 p^2 + O(p^3). With p = (N-1) s
// the s^2 coefficient is (N-2)(N-1)^2 / 2.
inline LeadingCheck light_traffic_leading(const IntSeries& s, int nodes) {
  require(nodes >= 2, "light-traffic check needs N >= 2");
  require(s.degree_bound() >= 2, "series must reach degree 2");
  LeadingCheck out;
  out.predicted = BigInt(nodes - 2) * (nodes - 1) * (nodes - 1) / 2;
  out.actual = s[2];
  out.match = out.predicted == out.actual && s[0] == 0 && s[1] == 0;
  return out;
}

}  // namespace ringroute

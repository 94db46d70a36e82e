#pragma once

// Closed forms for the L = 2 ring, the discrete-time single-server queue,
// tail bounds, the empty-slot bound and the traffic equations. Functions
// templated on T accept double or Rational; exact inputs give exact
// outputs.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "ringroute/error.hpp"
#include "ringroute/ring.hpp"
#include "ringroute/series.hpp"
#include "ringroute/taylor.hpp"

namespace ringroute {

template <class T>
T ipow(T base, int e) {
  T out(1);
  for (int i = 0; i < e; ++i) out *= base;
  return out;
}

inline double to_double(const Rational& q) { return q.convert_to<double>(); }
inline double to_double(double x) { return x; }

// ---------------------------------------------------------------- L = 2 ring

template <class T>
void check_l2_rate(const T& p) {
  require(p >= T(0), "arrival probability must be nonnegative");
  require(p * 3 < T(2), "L = 2 ring is unstable for p >= 2/3");
}

// Ratio of consecutive queue-length probabilities, p^2 / ((1-p)(2-p)).
template <class T>
T l2_tail_ratio(const T& p) {
  check_l2_rate(p);
  return p * p / ((T(1) - p) * (T(2) - p));
}

// Stationary probability that a node holds n packets (slot included).
template <class T>
T l2_marginal(const T& p, int n) {
  check_l2_rate(p);
  require(n >= 0, "packet count must be nonnegative");
  const T c = T(1) - p * 3 / 2;
  const T w = (T(1) - p) * (T(2) - p);
  if (n == 0) return c;
  if (n == 1) return c * (p * 3 - p * p) / w;
  return c * 2 * ipow(p, 2 * (n - 1)) / ipow(w, n);
}

// Probability that the queue (packets behind the slot) has length n. The
// queue length is geometric: a x^n with x = l2_tail_ratio(p).
template <class T>
T l2_queue_marginal(const T& p, int n) {
  check_l2_rate(p);
  require(n >= 0, "queue length must be nonnegative");
  const T w = (T(1) - p) * (T(2) - p);
  return (T(2) - p * 3) / w * ipow(l2_tail_ratio(p), n);
}

template <class T>
T l2_expected_queue(const T& p) {
  check_l2_rate(p);
  return p * p / (T(2) - p * 3);
}

template <class T>
T l2_queue_variance(const T& p) {
  const T e = l2_expected_queue(p);
  return e * e + e;
}

// Entropy (natural log) of the per-node queue length.
inline double l2_queue_entropy(double p) {
  check_l2_rate(p);
  if (p == 0.0) return 0.0;
  const double w = (1.0 - p) * (2.0 - p);
  return -std::log((2.0 - 3.0 * p) / w) - l2_expected_queue(p) * std::log(p * p / w);
}

struct L2Moments {
  double expected_queue = 0;
  double variance = 0;
  double entropy = 0;
};

inline L2Moments l2_moments(double p) {
  return {l2_expected_queue(p), l2_queue_variance(p), l2_queue_entropy(p)};
}

// Per-node factor of the product-form GHP law: node with n queued and a
// hot potato with t in {1, 2} steps left, or empty (t = 0).
template <class T>
T l2_node_prob(const T& p, int queued, int slot) {
  check_l2_rate(p);
  require(slot >= 0 && slot <= 2, "L = 2 slot must be 0 (empty), 1 or 2");
  require(queued >= 0, "queue length must be nonnegative");
  require(slot > 0 || queued == 0, "an empty slot implies an empty queue");
  const T c = T(1) - p * 3 / 2;
  if (slot == 0) return c;
  if (slot == 1 && queued == 0) return c * p / (T(1) - p);
  const T w = (T(1) - p) * (T(2) - p);
  const T base = c * ipow(p, 2 * queued) / ipow(w, queued + 1);
  return slot == 1 ? base * (T(2) - p) : base * p;
}

template <class T>
T l2_state_prob(const SymbolicState& state, const T& p) {
  T out(1);
  for (const auto& v : state.nodes) out *= l2_node_prob(p, v.queued, v.slot);
  return out;
}

// ------------------------------------------------------- single-node queues

enum class Measure { after_arrivals, after_departures };

template <class T>
struct BirthDeath {
  T A, D;            // net gain / net loss probabilities
  T expected_queue;  // queue = packets - 1 when nonempty
  Measure measure;
  std::function<T(int)> pr;  // Pr[n packets]
};

template <class T>
BirthDeath<T> birth_death(const T& a_hat, const T& d_hat, Measure m) {
  require(a_hat >= T(0) && d_hat <= T(1), "probabilities must lie in [0, 1]");
  require(a_hat < d_hat, "birth-death queue needs arrival < departure probability");
  const T A = a_hat * (T(1) - d_hat);
  const T D = d_hat * (T(1) - a_hat);
  BirthDeath<T> out{A, D, T(0), m, {}};
  if (m == Measure::after_arrivals) {
    out.expected_queue = a_hat * a_hat * (T(1) - d_hat) / (d_hat * (d_hat - a_hat));
    out.pr = [=](int n) -> T {
      require(n >= 0, "packet count must be nonnegative");
      if (n == 0) return (d_hat - a_hat) / d_hat;
      if (n == 1) return (d_hat - a_hat) / d_hat * a_hat / D;
      return ipow<T>(A / D, n - 1) * a_hat / d_hat * (D - A) / D;
    };
  } else {
    out.expected_queue = A * A / (D * (D - A));
    out.pr = [=](int n) -> T {
      require(n >= 0, "packet count must be nonnegative");
      return ipow<T>(A / D, n) * (D - A) / D;
    };
  }
  return out;
}

// Discrete-time Pollaczek-Khinchin mean queue length.
template <class T>
T pk_queue(const T& lambda, const T& ez, const T& ez2) {
  require(lambda >= T(0), "arrival rate must be nonnegative");
  require(ez >= T(1) && ez2 >= ez, "service moments need E[Z^2] >= E[Z] >= 1");
  require(lambda * ez < T(1), "queue saturated: lambda E[Z] >= 1");
  return lambda * lambda * (ez2 - ez) / ((T(1) - lambda * ez) * 2);
}

// Service moments of a uniform path length on 1..L.
template <class T>
std::pair<T, T> uniform_service_moments(int L) {
  require(L >= 1, "L must be at least 1");
  return {T(L + 1) / 2, T(2 * L + 1) * T(L + 1) / 6};
}

// One-node ring with max path L at load r, by the closed form
// (L-1)/(L+1) * 2 r^2 / (3 (1 - r)).
template <class T>
T one_node_queue(int L, const T& r) {
  require(L >= 1, "L must be at least 1");
  require(r >= T(0) && r < T(1), "load must lie in [0, 1)");
  return T(L - 1) / T(L + 1) * r * r * 2 / ((T(1) - r) * 3);
}

template <class T>
struct LittleRelations {
  T idle;
  T total;
};

template <class T>
LittleRelations<T> little_relations(const T& r, const T& expected_queue) {
  require(r >= T(0) && r < T(1), "Little relations need 0 <= r < 1");
  return {T(1) - r, expected_queue + r};
}

// ---------------------------------------------------------------- tail bounds

enum class Tail { upper, lower };

struct ChernoffBound {
  double exponent = 0;  // bound = exp(exponent)
  double bound = 0;
};

// Pr[X >= beta P] (beta > 1) and Pr[X <= beta P] (0 < beta < 1) for a sum
// of independent Bernoullis with mean P are both at most
// exp((1 - 1/beta - ln beta) beta P). For the lower tail this is the
// moment bound at lambda = -ln beta; the variant with + ln beta is not a
// bound (n = 100, p = 0.01, beta = 0.2 breaks it).
inline ChernoffBound chernoff_bound(double beta, double P, Tail side) {
  require(P > 0, "sum of means must be positive");
  if (side == Tail::upper) {
    require(beta > 1, "upper tail bound needs beta > 1");
  } else {
    require(beta > 0 && beta < 1, "lower tail bound needs 0 < beta < 1");
  }
  const double e = (1 - 1 / beta - std::log(beta)) * beta * P;
  return {e, std::exp(e)};
}

// ---------------------------------------------------------- empty-slot bound

inline double empty_slot_gain(double A, double B, double C, double D, double r) {
  return A * (A + B) * C * (C + D) * (1 - std::exp(-2 * r * B)) * (1 - std::exp(-2 * r * D));
}

// Lower bound on the probability that an empty cell reaches a node on a
// large standard ring: (1/N) [1 - delta + J (1/(A+B+C+D) - 1)].
inline double empty_slot_bound(double A, double B, double C, double D, double r, double N,
                               double delta) {
  const double s = A + B + C + D;
  for (double x : {A, B, C, D, s})
    require(x > 0 && x < 1, "A, B, C, D and their sum must lie in (0, 1)");
  require(N > 0, "node count must be positive");
  require(r > 0, "load must be positive");
  return (1 - delta + empty_slot_gain(A, B, C, D, r) * (1 / s - 1)) / N;
}

struct EmptySlotOptimum {
  double A = 0, B = 0, C = 0, D = 0;
  double value = 0;  // bound * N / 2 at delta = 0
};

// Maximizes the delta = 0 bound over (A, B, C, D): coarse grid, then a
// shrinking-step coordinate search.
inline EmptySlotOptimum optimize_empty_slot(double r, double grid = 0.02) {
  auto f = [&](const double* x) {
    const double s = x[0] + x[1] + x[2] + x[3];
    for (int i = 0; i < 4; ++i)
      if (x[i] <= 0 || x[i] >= 1) return -1.0;
    if (s >= 1) return -1.0;
    return empty_slot_bound(x[0], x[1], x[2], x[3], r, 2.0, 0.0);
  };
  double best[4] = {0.2, 0.2, 0.2, 0.2};
  double fb = f(best);
  for (double a = grid; a < 1; a += grid)
    for (double b = grid; a + b < 1; b += grid)
      for (double c = grid; a + b + c < 1; c += grid)
        for (double d = grid; a + b + c + d < 1; d += grid) {
          const double x[4] = {a, b, c, d};
          const double v = f(x);
          if (v > fb) {
            fb = v;
            for (int i = 0; i < 4; ++i) best[i] = x[i];
          }
        }
  for (double h = grid; h > 1e-12; h /= 2) {
    bool improved = true;
    while (improved) {
      improved = false;
      for (int i = 0; i < 4; ++i)
        for (double sgn : {1.0, -1.0}) {
          double x[4] = {best[0], best[1], best[2], best[3]};
          x[i] += sgn * h;
          const double v = f(x);
          if (v > fb) {
            fb = v;
            for (int j = 0; j < 4; ++j) best[j] = x[j];
            improved = true;
          }
        }
    }
  }
  return {best[0], best[1], best[2], best[3], fb};
}

// ----------------------------------------------------------- traffic algebra

template <class T>
using Matrix = std::vector<std::vector<T>>;

template <class T>
struct TrafficModel {
  std::vector<T> alpha;           // exogenous rate per class
  Matrix<T> P;                    // P[i][j]: class i moves to class j
  std::vector<T> mu;              // service rate per class
  std::vector<int> node_of;       // constituency: class -> node
  int nodes = 0;
};

template <class T>
struct TrafficSolution {
  std::vector<T> lambda;
  std::vector<T> rho;
};

namespace formulas_detail {

template <class T>
T abs_value(const T& x) {
  return x < T(0) ? T(-x) : x;
}

// Inverse by Gauss-Jordan elimination; exact for Rational. Throws if
// singular.
template <class T>
Matrix<T> inverse(Matrix<T> a) {
  const std::size_t n = a.size();
  Matrix<T> inv(n, std::vector<T>(n, T(0)));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = T(1);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col; r < n; ++r)
      if (abs_value(a[r][col]) > abs_value(a[piv][col])) piv = r;
    require(a[piv][col] != T(0), "I - P' is singular: routing is not transient");
    std::swap(a[piv], a[col]);
    std::swap(inv[piv], inv[col]);
    const T d = a[col][col];
    for (std::size_t c = 0; c < n; ++c) {
      a[col][c] /= d;
      inv[col][c] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col || a[r][col] == T(0)) continue;
      const T f = a[r][col];
      for (std::size_t c = 0; c < n; ++c) {
        a[r][c] -= f * a[col][c];
        inv[r][c] -= f * inv[col][c];
      }
    }
  }
  return inv;
}

}  // namespace formulas_detail

// lambda = (I - P')^{-1} alpha and rho_n = sum over classes at n of
// lambda_c / mu_c. A nonnegative P is transient exactly when I - P' is
// invertible with a nonnegative inverse (M-matrix criterion), which is what
// gets checked.
template <class T>
TrafficSolution<T> traffic_solve(const TrafficModel<T>& m) {
  const std::size_t n = m.alpha.size();
  require(m.P.size() == n && m.mu.size() == n && m.node_of.size() == n,
          "traffic model dimensions disagree");
  for (std::size_t i = 0; i < n; ++i) {
    require(m.alpha[i] >= T(0) && m.mu[i] > T(0), "rates must be nonnegative, mu positive");
    require(m.P[i].size() == n, "routing matrix must be square");
    for (const T& x : m.P[i]) require(x >= T(0), "routing probabilities must be nonnegative");
    require(m.node_of[i] >= 0 && m.node_of[i] < m.nodes, "class assigned to unknown node");
  }
  Matrix<T> a(n, std::vector<T>(n, T(0)));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i][j] = (i == j ? T(1) : T(0)) - m.P[j][i];
  const Matrix<T> inv = formulas_detail::inverse(a);
  for (const auto& row : inv)
    for (const T& x : row) {
      if constexpr (std::is_floating_point_v<T>) {
        require(x > -1e-9, "routing is not transient");
      } else {
        require(x >= T(0), "routing is not transient");
      }
    }
  TrafficSolution<T> out;
  out.lambda.assign(n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.lambda[i] += inv[i][j] * m.alpha[j];
  out.rho.assign(static_cast<std::size_t>(m.nodes), T(0));
  for (std::size_t i = 0; i < n; ++i)
    out.rho[static_cast<std::size_t>(m.node_of[i])] += out.lambda[i] / m.mu[i];
  return out;
}

// Class graph of a Bernoulli ring: class (node i, remaining d) moves to
// (i + 1, d - 1) and leaves after d = 1; arrivals at rate p / L per class
// with d in 1..L. Unit service rate.
template <class T>
TrafficModel<T> ring_traffic_model(int nodes, int L, const T& p) {
  require(nodes >= 1 && L >= 1, "ring needs N >= 1 and L >= 1");
  const std::size_t n = static_cast<std::size_t>(nodes) * static_cast<std::size_t>(L);
  auto id = [&](int node, int d) {
    return static_cast<std::size_t>(node) * static_cast<std::size_t>(L) + static_cast<std::size_t>(d - 1);
  };
  TrafficModel<T> m;
  m.nodes = nodes;
  m.alpha.assign(n, p / L);
  m.mu.assign(n, T(1));
  m.node_of.assign(n, 0);
  m.P.assign(n, std::vector<T>(n, T(0)));
  for (int i = 0; i < nodes; ++i)
    for (int d = 1; d <= L; ++d) {
      m.node_of[id(i, d)] = i;
      if (d > 1) m.P[id(i, d)][id((i + 1) % nodes, d - 1)] = T(1);
    }
  return m;
}

// ------------------------------------------------------------ balance check

template <class T>
struct BalanceReport {
  T max_residual;           // over states whose predecessors are all enumerated
  std::string worst_state;
  std::size_t states = 0;
  std::size_t interior_states = 0;
  T boundary_residual;      // largest residual on the truncation boundary
  double tail_bound = 0;    // geometric tail of the truncated mass
};

// Checks pi(x) = sum_y pi(y) P(y -> x) for a candidate law on the GHP ring.
// All states with every queue <= B are expanded forward. A queue moves by
// at most one per step, so every predecessor of a state whose queues are
// all <= B - 1 lies inside the enumerated set and its residual is exact.
template <class T>
BalanceReport<T> balance_check(const RingSpec& spec, const std::function<T(const SymbolicState&)>& pi,
                               int B, const T& p) {
  spec.validate();
  require(spec.protocol == Protocol::ghp && !spec.is_geometric(),
          "balance check covers the Bernoulli GHP ring");
  require(B >= 1, "queue cap must be at least 1");
  const int n = spec.nodes;
  const int L = spec.max_path;
  require(n <= 6, "balance check enumerates (1 + L(B+1))^N states; keep N small");

  std::vector<std::string> keys;
  {
    std::vector<std::pair<int, int>> per_node{{0, 0}};
    for (int t = 1; t <= L; ++t)
      for (int q = 0; q <= B; ++q) per_node.push_back({t, q});
    std::vector<std::size_t> idx(static_cast<std::size_t>(n), 0);
    while (true) {
      std::string k;
      for (int i = 0; i < n; ++i) {
        k.push_back(static_cast<char>(per_node[idx[static_cast<std::size_t>(i)]].first));
        k.push_back(static_cast<char>(per_node[idx[static_cast<std::size_t>(i)]].second));
      }
      keys.push_back(k);
      int i = 0;
      while (i < n && ++idx[static_cast<std::size_t>(i)] == per_node.size()) idx[static_cast<std::size_t>(i++)] = 0;
      if (i == n) break;
    }
  }

  std::unordered_map<std::string, T> inflow;
  std::unordered_map<std::string, T> value;
  for (const auto& key : keys) value[key] = pi(SymbolicState::from_key(key, n, true));

  const T none = T(1) - p;
  const T each = p / L;
  for (const auto& key : keys) {
    std::unordered_map<std::string, T> cur{{taylor_detail::route_key(key, n, true), value[key]}};
    for (int j = 0; j < n; ++j) {
      std::unordered_map<std::string, T> nxt;
      for (const auto& [k, w] : cur)
        taylor_detail::node_branches(k, j, L, true,
                                     [&](const std::string& s, bool arrival, std::int64_t factor) {
                                       // factor carries a common scale of L
                                       const T weight = (arrival ? each : none) * T(factor) / T(L);
                                       nxt[s] += w * weight;
                                     });
      cur = std::move(nxt);
    }
    for (const auto& [k, w] : cur) inflow[k] += w;
  }

  BalanceReport<T> rep{T(0), "", keys.size(), 0, T(0), 0.0};
  for (const auto& key : keys) {
    bool interior = true;
    for (int i = 0; i < n; ++i)
      if (static_cast<unsigned char>(key[static_cast<std::size_t>(2 * i + 1)]) >= B) interior = false;
    auto it = inflow.find(key);
    const T in = it == inflow.end() ? T(0) : it->second;
    const T res = formulas_detail::abs_value(T(value[key] - in));
    if (interior) {
      ++rep.interior_states;
      if (rep.worst_state.empty() || res > rep.max_residual) {
        rep.max_residual = res;
        rep.worst_state = SymbolicState::from_key(key, n, true).to_string();
      }
    } else if (res > rep.boundary_residual) {
      rep.boundary_residual = res;
    }
  }
  const double pd = to_double(p);
  const double ratio =
      L == 2 && 3 * pd < 2 ? pd * pd / ((1 - pd) * (2 - pd)) : to_double(T(p * (L + 1) / 2));
  rep.tail_bound = std::pow(ratio, B);
  return rep;
}

}  // namespace ringroute

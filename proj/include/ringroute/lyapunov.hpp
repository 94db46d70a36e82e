#pragma once

// Potential function on ring states: phi(i) is the expected congestion at
// node i if every packet had a uniform life span on 1..(1+delta)N, and
// Phi is its maximum over nodes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "ringroute/error.hpp"
#include "ringroute/ring.hpp"
#include "ringroute/rng.hpp"
#include "ringroute/simulate.hpp"

namespace ringroute {

struct PhiParams {
  int nodes = 1;
  double r = 0.0;
  double delta = 0.5;

  double horizon() const { return (1.0 + delta) * nodes; }  // (1+delta)N
  double r_hat() const { return r * (1.0 + delta / (1.0 + delta)); }
  double zeta() const { return 1.0 + 1.0 / (horizon() - 1.0); }

  void validate() const {
    require(nodes >= 2, "potential function needs at least two nodes");
    require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
    require(r >= 0.0 && r_hat() < 1.0, "need r (1 + delta/(1+delta)) < 1");
  }
};

// Midpoint of the feasible delta range.
inline double default_delta(double r) {
  require(r >= 0.0 && r < 1.0, "default delta needs 0 <= r < 1");
  if (r <= 0.5) return 0.5;
  return 0.5 * std::min(1.0, (1.0 - r) / (2.0 * r - 1.0));
}

inline PhiParams phi_params(const RingSpec& spec, std::optional<double> delta = std::nullopt) {
  require(!spec.is_geometric(), "the potential function is defined on the Bernoulli ring");
  PhiParams p;
  p.nodes = spec.nodes;
  p.r = nominal_load(spec);
  p.delta = delta ? *delta : default_delta(p.r);
  p.validate();
  return p;
}

// Weight of packet z at node i. Positions are unwrapped along the packet's
// forward arc from its origin k: the packet sits at offset traveled and node
// i at offset (i - k) mod N. It can reach i iff traveled <= offset <= L - 1.
inline double f_reach(int i, const Packet& z, int max_path, const PhiParams& prm) {
  const int n = prm.nodes;
  const int offset = ((i - z.origin) % n + n) % n;
  if (offset < z.traveled || offset > max_path - 1) return 0.0;
  const double h = prm.horizon();
  return (h - offset) / (h - z.traveled);
}

inline std::vector<double> phi_all(const RingState& state, const PhiParams& prm) {
  const int n = state.spec.nodes;
  require(prm.nodes == n, "parameters are for a different ring size");
  std::vector<double> phi(static_cast<std::size_t>(n), 0.0);
  for (const RingNode& node : state.nodes)
    for (const Resident& r : node.residents())
      for (int i = 0; i < n; ++i) phi[static_cast<std::size_t>(i)] += f_reach(i, r.packet, state.spec.max_path, prm);
  return phi;
}

inline double phi(int i, const RingState& state, const PhiParams& prm) {
  require(i >= 0 && i < state.spec.nodes, "node index out of range");
  double s = 0.0;
  for (const RingNode& node : state.nodes)
    for (const Resident& r : node.residents()) s += f_reach(i, r.packet, state.spec.max_path, prm);
  return s;
}

inline double Phi(const RingState& state, const PhiParams& prm) {
  const auto all = phi_all(state, prm);
  return *std::max_element(all.begin(), all.end());
}

struct TrickResult {
  bool ok = true;
  int node = -1;  // first failing node
  double queue = 0.0;
  double bound = 0.0;  // phi(i) - phi(i-1)/zeta - 1
};

// Q_i >= phi(i) - phi(i-1)/zeta - 1 at every node.
inline TrickResult trick_check(const RingState& state, const PhiParams& prm, double tol = 1e-9) {
  const int n = state.spec.nodes;
  const auto phi = phi_all(state, prm);
  const double zeta = prm.zeta();
  TrickResult out;
  for (int i = 0; i < n; ++i) {
    const double q = static_cast<double>(state.nodes[static_cast<std::size_t>(i)].queue_length());
    const double bound =
        phi[static_cast<std::size_t>(i)] - phi[static_cast<std::size_t>((i + n - 1) % n)] / zeta - 1.0;
    if (q < bound - tol * std::max(1.0, std::abs(bound))) return {false, i, q, bound};
  }
  return out;
}

// A state reached from the empty ring after `steps` steps of the dynamics.
inline RingState reachable_state(const RingSpec& spec, std::int64_t steps, const RngStream& rng) {
  RingState s = new_ring(spec);
  for (std::int64_t t = 0; t < steps; ++t) step(s, rng);
  return s;
}

// Puts `queue` waiting packets plus one hot potato at every node, with
// destinations drawn from the stream.
inline RingState queued_state(const RingSpec& spec, int queue, const RngStream& rng) {
  require(queue >= 0, "queue length must be nonnegative");
  RingState s = new_ring(spec);
  for (int i = 0; i < spec.nodes; ++i)
    for (int c = 0; c <= queue; ++c) {
      const int dist = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.max_path),
                                                      static_cast<std::uint64_t>(i),
                                                      static_cast<std::uint64_t>(c), kLaneDestination));
      s.place(i, dist);
    }
  return s;
}

struct DriftEstimate {
  double estimate = 0.0;  // mean of Phi(tau) - Phi(sigma), or phi(node) if node >= 0
  double se = 0.0;
  int replications = 0;
  std::int64_t horizon = 0;
  double start = 0.0;
  int node = -1;
  double ci_low() const { return estimate - 1.96 * se; }
  double ci_high() const { return estimate + 1.96 * se; }
};

// Monte Carlo estimate of E[Phi(tau)] - Phi(sigma) after `horizon` steps
// from `state`. Replication i uses stream (seed, i).
inline DriftEstimate drift_probe(const RingState& state, const PhiParams& prm, std::int64_t horizon, int reps,
                                 std::uint64_t seed, int node = -1, int workers = 0) {
  prm.validate();
  require(reps >= 2, "drift CI needs at least two replications");
  require(horizon >= 1, "drift horizon must be positive");
  require(node < state.spec.nodes, "node index out of range");
  auto measure = [&](const RingState& s) { return node >= 0 ? phi(node, s, prm) : Phi(s, prm); };
  DriftEstimate out;
  out.replications = reps;
  out.horizon = horizon;
  out.node = node;
  out.start = measure(state);
  std::vector<double> change(static_cast<std::size_t>(reps));
  detail::parallel_for(reps, workers, [&](int r) {
    RingState s = state;
    const RngStream rng{CounterRng(seed), static_cast<std::uint64_t>(r)};
    for (std::int64_t t = 0; t < horizon; ++t) step(s, rng);
    change[static_cast<std::size_t>(r)] = measure(s) - out.start;
  });
  detail::KahanSum sum;
  for (double c : change) sum.add(c);
  out.estimate = sum.value() / reps;
  double var = 0.0;
  for (double c : change) var += (c - out.estimate) * (c - out.estimate);
  out.se = std::sqrt(var / (reps - 1) / reps);
  return out;
}

}  // namespace ringroute

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "ringroute/error.hpp"
#include "ringroute/rng.hpp"

namespace ringroute {

enum class Protocol { ghp, fifo, epf, sis, cto, ftg, lis };

inline constexpr std::array<Protocol, 7> kAllProtocols = {
    Protocol::ghp, Protocol::fifo, Protocol::epf, Protocol::sis,
    Protocol::cto, Protocol::ftg,  Protocol::lis};

inline std::string_view to_string(Protocol p) {
  switch (p) {
    case Protocol::ghp: return "GHP";
    case Protocol::fifo: return "FIFO";
    case Protocol::epf: return "EPF";
    case Protocol::sis: return "SIS";
    case Protocol::cto: return "CTO";
    case Protocol::ftg: return "FTG";
    case Protocol::lis: return "LIS";
  }
  return "?";
}

inline Protocol parse_protocol(std::string_view name) {
  for (Protocol p : kAllProtocols) {
    std::string_view n = to_string(p);
    if (n.size() == name.size() &&
        std::equal(n.begin(), n.end(), name.begin(), [](char a, char b) {
          return a == (b >= 'a' && b <= 'z' ? static_cast<char>(b - 'a' + 'A') : b);
        }))
      return p;
  }
  throw DomainError("unknown protocol: " + std::string(name));
}

struct BernoulliArrivals {
  double p = 0.0;
};

// Arrivals with probability lambda/N per node; a travelling packet leaves
// with probability mu/N each time it crosses an edge.
struct GeometricArrivals {
  double lambda = 0.0;
  double mu = 0.0;
};

struct RingSpec {
  int nodes = 1;
  int max_path = 1;  // L
  std::variant<BernoulliArrivals, GeometricArrivals> arrivals = BernoulliArrivals{};
  Protocol protocol = Protocol::ghp;

  static RingSpec standard(int n, double p, Protocol proto = Protocol::ghp) {
    return RingSpec{n, std::max(1, n - 1), BernoulliArrivals{p}, proto};
  }
  static RingSpec nonstandard(int n, int l, double p, Protocol proto = Protocol::ghp) {
    return RingSpec{n, l, BernoulliArrivals{p}, proto};
  }
  static RingSpec geometric(int n, double lambda, double mu, Protocol proto = Protocol::ghp) {
    return RingSpec{n, n, GeometricArrivals{lambda, mu}, proto};
  }

  bool is_geometric() const noexcept {
    return std::holds_alternative<GeometricArrivals>(arrivals);
  }

  // Per-node per-step arrival probability.
  double arrival_probability() const {
    if (const auto* g = std::get_if<GeometricArrivals>(&arrivals)) return g->lambda / nodes;
    return std::get<BernoulliArrivals>(arrivals).p;
  }

  double departure_probability() const {
    if (const auto* g = std::get_if<GeometricArrivals>(&arrivals)) return g->mu / nodes;
    return 0.0;
  }

  void validate() const {
    require(nodes >= 1, "ring needs at least one node");
    require(max_path >= 1, "maximum path length must be at least 1");
    if (const auto* b = std::get_if<BernoulliArrivals>(&arrivals)) {
      require(b->p >= 0.0 && b->p <= 1.0, "arrival probability must lie in [0, 1]");
    } else {
      const auto& g = std::get<GeometricArrivals>(arrivals);
      const double a = g.lambda / nodes;
      const double d = g.mu / nodes;
      require(a > 0.0 && a <= 1.0, "geometric ring needs 0 < lambda/N <= 1");
      require(d > 0.0 && d <= 1.0, "geometric ring needs 0 < mu/N <= 1");
      require(protocol != Protocol::ftg,
              "FTG needs known destinations; not defined on the geometric ring");
    }
  }
};

// Remaining-distance marker for packets on the geometric ring.
inline constexpr int kGeometricRemaining = -1;

struct Packet {
  int origin = 0;
  int remaining = 0;  // steps left, or kGeometricRemaining
  int traveled = 0;
  std::int64_t inserted_at = 0;
  std::int64_t seq = 0;

  bool exogenous() const noexcept { return traveled == 0; }
  int position(int nodes) const noexcept { return (origin + traveled) % nodes; }
};

using PriorityKey = std::array<std::int64_t, 3>;

// Smaller key = served first. Ties inside a protocol class fall back on
// the global insertion sequence number.
inline PriorityKey priority_key(Protocol proto, const Packet& z, std::int64_t arrived_at) {
  const std::int64_t internal_first = z.traveled > 0 ? 0 : 1;
  const std::int64_t exogenous_first = z.traveled > 0 ? 1 : 0;
  switch (proto) {
    case Protocol::ghp: return {internal_first, z.seq, 0};
    // Internal packets reach a node during routing, before that step's
    // exogenous arrivals.
    case Protocol::fifo: return {arrived_at, internal_first, z.seq};
    case Protocol::epf: return {exogenous_first, z.seq, 0};
    case Protocol::sis: return {-z.inserted_at, z.seq, 0};
    case Protocol::cto: return {z.traveled, z.seq, 0};
    case Protocol::ftg: return {-static_cast<std::int64_t>(z.remaining), exogenous_first, z.seq};
    case Protocol::lis: return {z.inserted_at, z.seq, 0};
  }
  return {0, z.seq, 0};
}

struct Resident {
  PriorityKey key;
  Packet packet;
};

// Packets present at one node, kept as a min-heap on priority key. The
// front of the heap is the packet that moves on the next step (the hot
// potato); everything else is in queue.
class RingNode {
 public:
  bool empty() const noexcept { return heap_.empty(); }
  std::size_t size() const noexcept { return heap_.size(); }
  std::size_t queue_length() const noexcept { return heap_.empty() ? 0 : heap_.size() - 1; }

  const Packet* slot() const noexcept { return heap_.empty() ? nullptr : &heap_.front().packet; }

  std::span<const Resident> residents() const noexcept { return heap_; }

  void push(Resident r) {
    heap_.push_back(std::move(r));
    std::push_heap(heap_.begin(), heap_.end(), later);
  }

  Packet pop() {
    std::pop_heap(heap_.begin(), heap_.end(), later);
    Packet z = heap_.back().packet;
    heap_.pop_back();
    return z;
  }

 private:
  static bool later(const Resident& a, const Resident& b) noexcept { return a.key > b.key; }
  std::vector<Resident> heap_;
};

struct RingState {
  RingSpec spec;
  std::vector<RingNode> nodes;
  std::int64_t time = 0;
  std::int64_t total_arrivals = 0;
  std::int64_t total_departures = 0;
  std::int64_t next_seq = 0;

  std::int64_t in_system() const noexcept { return total_arrivals - total_departures; }

  std::int64_t total_queued() const noexcept {
    std::int64_t q = 0;
    for (const auto& n : nodes) q += static_cast<std::int64_t>(n.queue_length());
    return q;
  }

  std::int64_t total_present() const noexcept {
    std::int64_t q = 0;
    for (const auto& n : nodes) q += static_cast<std::int64_t>(n.size());
    return q;
  }

  // Places a packet at `node` directly, bypassing the arrival process.
  // Used to build test and probe states. `traveled` > 0 marks a packet
  // already moving through the ring.
  void place(int node, int remaining, int traveled = 0) {
    require(node >= 0 && node < spec.nodes, "node index out of range");
    Packet z;
    z.origin = ((node - traveled) % spec.nodes + spec.nodes) % spec.nodes;
    z.remaining = remaining;
    z.traveled = traveled;
    z.inserted_at = time - traveled;
    z.seq = next_seq++;
    nodes[node].push(Resident{priority_key(spec.protocol, z, time - 1), z});
    ++total_arrivals;
  }
};

inline RingState new_ring(const RingSpec& spec) {
  spec.validate();
  RingState s;
  s.spec = spec;
  s.nodes.resize(static_cast<std::size_t>(spec.nodes));
  return s;
}

struct StepReport {
  int departures = 0;
  std::int64_t delay_sum = 0;
};

// Advances one step with an explicit arrival vector: arrivals[i] == 0 means
// no arrival at node i, otherwise the new packet's remaining distance (any
// positive value on the geometric ring). geometric_departs[i] says whether
// the packet leaving node i departs after its hop (geometric ring only).
// Order: route, depart, then insert.
inline StepReport advance(RingState& state, std::span<const int> arrivals,
                          std::span<const std::uint8_t> geometric_departs = {}) {
  const int n = state.spec.nodes;
  const bool geometric = state.spec.is_geometric();
  const Protocol proto = state.spec.protocol;
  const std::int64_t t = state.time;
  ensure(static_cast<int>(arrivals.size()) == n, "arrival vector size mismatch");
  ensure(!geometric || static_cast<int>(geometric_departs.size()) == n,
         "geometric ring needs a departure vector");

  StepReport report;
  std::vector<std::optional<Packet>> moving(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    RingNode& node = state.nodes[static_cast<std::size_t>(i)];
    if (node.empty()) continue;
    Packet z = node.pop();
    ++z.traveled;
    bool gone = false;
    if (geometric) {
      gone = geometric_departs[static_cast<std::size_t>(i)] != 0;
    } else {
      --z.remaining;
      gone = z.remaining == 0;
    }
    if (gone) {
      ++report.departures;
      report.delay_sum += t - z.inserted_at;
    } else {
      moving[static_cast<std::size_t>((i + 1) % n)] = z;
    }
  }
  for (int j = 0; j < n; ++j) {
    auto& z = moving[static_cast<std::size_t>(j)];
    if (z) state.nodes[static_cast<std::size_t>(j)].push(Resident{priority_key(proto, *z, t), *z});
  }
  for (int j = 0; j < n; ++j) {
    const int a = arrivals[static_cast<std::size_t>(j)];
    if (a == 0) continue;
    Packet z;
    z.origin = j;
    z.remaining = geometric ? kGeometricRemaining : a;
    z.traveled = 0;
    z.inserted_at = t;
    z.seq = state.next_seq++;
    ensure(geometric || (a >= 1 && a <= state.spec.max_path), "arrival distance out of range");
    state.nodes[static_cast<std::size_t>(j)].push(Resident{priority_key(proto, z, t), z});
    ++state.total_arrivals;
  }
  state.total_departures += report.departures;
  state.time = t + 1;
  return report;
}

// Lanes used when drawing from the counter-based stream.
enum RngLane : std::uint64_t { kLaneArrival = 0, kLaneDestination = 1, kLaneDeparture = 2 };

// Draws this step's arrivals (and geometric departures) from the stream
// and advances the state.
inline StepReport step(RingState& state, const RngStream& rng) {
  const int n = state.spec.nodes;
  const auto t = static_cast<std::uint64_t>(state.time);
  const double p = state.spec.arrival_probability();
  std::vector<int> arrivals(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    const auto node = static_cast<std::uint64_t>(i);
    if (rng.uniform(node, t, kLaneArrival) < p) {
      arrivals[static_cast<std::size_t>(i)] =
          state.spec.is_geometric()
              ? 1
              : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(state.spec.max_path),
                                               node, t, kLaneDestination));
    }
  }
  if (!state.spec.is_geometric()) return ringroute::advance(state, arrivals);
  const double d = state.spec.departure_probability();
  std::vector<std::uint8_t> departs(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i)
    departs[static_cast<std::size_t>(i)] =
        rng.uniform(static_cast<std::uint64_t>(i), t, kLaneDeparture) < d ? 1 : 0;
  return ringroute::advance(state, arrivals, departs);
}

// Expected work per node per step: N p / 2 on the standard ring,
// (L + 1) p / 2 in general, lambda / mu on the geometric ring.
inline double nominal_load(const RingSpec& spec) {
  spec.validate();
  if (const auto* g = std::get_if<GeometricArrivals>(&spec.arrivals)) return g->lambda / g->mu;
  return (spec.max_path + 1) * std::get<BernoulliArrivals>(spec.arrivals).p / 2.0;
}

// Arrival probability above which the standard N-node ring is unstable.
inline double critical_rate(int nodes) {
  require(nodes >= 2, "critical rate needs at least two nodes");
  return 2.0 / nodes;
}

// A bidirectional odd ring taking shortest paths splits into two
// nonstandard rings (clockwise and counterclockwise), each with
// L = (N - 1) / 2 and arrival rate p / 2.
inline std::pair<RingSpec, RingSpec> decompose_bidirectional(int nodes, double p,
                                                             Protocol proto = Protocol::ghp) {
  require(nodes >= 3 && nodes % 2 == 1,
          "bidirectional decomposition needs an odd node count >= 3");
  require(p >= 0.0 && p <= 1.0, "arrival probability must lie in [0, 1]");
  RingSpec half = RingSpec::nonstandard(nodes, (nodes - 1) / 2, p / 2.0, proto);
  return {half, half};
}

}  // namespace ringroute

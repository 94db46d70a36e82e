#pragma once

// Exact Taylor expansion of GHP ring stationary probabilities around p = 0.
//
// Series variable s = p / L: each (arrival, destination) outcome at a node
// carries weight s and "no arrival" carries 1 - L s, so every transition
// weight is an integer polynomial in s. Coefficients above degree k are
// discarded; since each packet present cost one factor of s, states with
// more than k packets vanish from the truncated chain, leaving a finite
// state space.
//
// One step is applied as routing (deterministic) followed by N node-local
// sub-steps, one per node, each branching over promotion and arrival
// outcomes at that node only. That keeps the work per step proportional to
// the number of states times a small per-node fan-out.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ringroute/error.hpp"
#include "ringroute/ring.hpp"
#include "ringroute/series.hpp"

namespace ringroute {

class CoefficientOverflow : public std::overflow_error {
 public:
  CoefficientOverflow() : std::overflow_error("128-bit coefficient overflow") {}
};

struct TaylorOptions {
  // Queued packets keep no destination; promotion picks one uniformly.
  bool compressed = false;
  // Store one representative per rotation class (probability mass of the
  // whole class).
  bool symmetry = false;
  std::size_t state_cap = 20'000'000;
  // 0 = 4 W where W = (k + 1)(L + N) is the stability window.
  std::int64_t max_steps = 0;
  // Keep stepping to max_steps after convergence is declared and fail if
  // anything still moves.
  bool verify_to_cap = true;
  bool force_bigint = false;
};

// A ring state in node notation: per node an optional hot
// potato with `slot` steps left (0 = none) and `queued` packets waiting.
// Uncompressed states also list the queued destinations, oldest first.
struct SymbolicState {
  struct Node {
    int slot = 0;
    int queued = 0;
    std::vector<int> dests;
  };
  std::vector<Node> nodes;
  bool compressed = true;

  int packets() const {
    int n = 0;
    for (const auto& v : nodes) n += (v.slot > 0 ? 1 : 0) + v.queued;
    return n;
  }

  int total_queued() const {
    int n = 0;
    for (const auto& v : nodes) n += v.queued;
    return n;
  }

  std::string key() const {
    std::string k;
    for (const auto& v : nodes) {
      k.push_back(static_cast<char>(v.slot));
      k.push_back(static_cast<char>(v.queued));
      if (!compressed)
        for (int d : v.dests) k.push_back(static_cast<char>(d));
    }
    return k;
  }

  static SymbolicState from_key(const std::string& key, int n, bool compressed) {
    SymbolicState s;
    s.compressed = compressed;
    std::size_t o = 0;
    for (int i = 0; i < n; ++i) {
      ensure(o + 2 <= key.size(), "malformed state key");
      Node v;
      v.slot = static_cast<unsigned char>(key[o]);
      v.queued = static_cast<unsigned char>(key[o + 1]);
      o += 2;
      if (!compressed) {
        for (int q = 0; q < v.queued; ++q) v.dests.push_back(static_cast<unsigned char>(key[o++]));
      }
      s.nodes.push_back(std::move(v));
    }
    ensure(o == key.size(), "malformed state key");
    return s;
  }

  // Same nodes listed against the direction of travel.
  SymbolicState reversed() const {
    SymbolicState r = *this;
    std::reverse(r.nodes.begin(), r.nodes.end());
    return r;
  }

  SymbolicState lumped() const {
    SymbolicState r = *this;
    r.compressed = true;
    for (auto& v : r.nodes) v.dests.clear();
    return r;
  }

  // "X" for an empty node, "n|t" for n queued behind a hot potato with t
  // steps left; uncompressed queues append their destinations.
  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (i) out += '-';
      const Node& v = nodes[i];
      if (v.slot == 0 && v.queued == 0) {
        out += 'X';
        continue;
      }
      out += std::to_string(v.queued) + "|" + std::to_string(v.slot);
      if (!compressed && !v.dests.empty()) {
        out += '(';
        for (std::size_t d = 0; d < v.dests.size(); ++d)
          out += (d ? "," : "") + std::to_string(v.dests[d]);
        out += ')';
      }
    }
    return out;
  }

  // Inverse of to_string. Destinations in parentheses make the state
  // uncompressed; they must then be given for every queued packet.
  static SymbolicState parse(const std::string& text) {
    SymbolicState s;
    bool any_dests = false;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = std::min(text.find('-', start), text.size());
      const std::string tok = text.substr(start, end - start);
      Node v;
      if (tok != "X") {
        const std::size_t bar = tok.find('|');
        require(bar != std::string::npos, "node must be X or queued|slot: " + tok);
        const std::size_t paren = tok.find('(');
        try {
          v.queued = std::stoi(tok.substr(0, bar));
          v.slot = std::stoi(tok.substr(bar + 1, paren == std::string::npos ? std::string::npos : paren - bar - 1));
        } catch (const std::exception&) {
          throw DomainError("bad node in state: " + tok);
        }
        if (paren != std::string::npos) {
          require(tok.back() == ')', "unclosed destination list: " + tok);
          any_dests = true;
          std::string list = tok.substr(paren + 1, tok.size() - paren - 2);
          std::size_t p = 0;
          while (p < list.size()) {
            const std::size_t c = std::min(list.find(',', p), list.size());
            v.dests.push_back(std::stoi(list.substr(p, c - p)));
            p = c + 1;
          }
        }
        require(v.slot >= 1 && v.slot < 127 && v.queued >= 0 && v.queued < 127, "node values out of range: " + tok);
      }
      s.nodes.push_back(std::move(v));
      start = end + 1;
    }
    s.compressed = !any_dests;
    if (!s.compressed)
      for (const auto& v : s.nodes)
        require(static_cast<int>(v.dests.size()) == v.queued, "every queued packet needs a destination");
    return s;
  }

  friend bool operator==(const SymbolicState& a, const SymbolicState& b) {
    return a.compressed == b.compressed && a.key() == b.key();
  }
};

inline SymbolicState ground_state(int nodes, bool compressed = true) {
  SymbolicState s;
  s.compressed = compressed;
  s.nodes.resize(static_cast<std::size_t>(nodes));
  return s;
}

// Converged (or propagated) distribution: series per state, sorted by key.
struct StateDist {
  RingSpec spec;
  int k = 0;
  bool compressed = false;
  bool symmetry = false;
  std::int64_t steps = 0;
  bool converged = false;
  std::int64_t converged_at = -1;  // last step at which any coefficient changed
  std::vector<std::pair<std::string, IntSeries>> states;  // class mass under symmetry

  std::size_t size() const noexcept { return states.size(); }

  // Probability series of one concrete state. A compressed query on an
  // uncompressed distribution sums over all destination assignments.
  IntSeries probability(const SymbolicState& query) const;
};

namespace taylor_detail {

struct Wide {
  __int128 v = 0;
  friend bool operator==(const Wide& a, const Wide& b) { return a.v == b.v; }
};

inline void add_mul(Wide& dst, const Wide& x, std::int64_t m) {
  __int128 t;
  if (__builtin_mul_overflow(x.v, static_cast<__int128>(m), &t) ||
      __builtin_add_overflow(dst.v, t, &dst.v))
    throw CoefficientOverflow();
}
inline void add_mul(BigInt& dst, const BigInt& x, std::int64_t m) { dst += x * m; }

inline bool div_exact(Wide& x, std::int64_t m) {
  if (x.v % m != 0) return false;
  x.v /= m;
  return true;
}
inline bool div_exact(BigInt& x, std::int64_t m) {
  BigInt q, r;
  boost::multiprecision::divide_qr(x, BigInt(m), q, r);
  if (r != 0) return false;
  x = std::move(q);
  return true;
}

inline bool is_zero(const Wide& x) { return x.v == 0; }
inline bool is_zero(const BigInt& x) { return x == 0; }

inline BigInt to_big(const Wide& x) {
  const bool neg = x.v < 0;
  const unsigned __int128 u = neg ? -static_cast<unsigned __int128>(x.v)
                                  : static_cast<unsigned __int128>(x.v);
  BigInt b = BigInt(static_cast<std::uint64_t>(u >> 64));
  b <<= 64;
  b += static_cast<std::uint64_t>(u);
  return neg ? BigInt(-b) : b;
}
inline BigInt to_big(const BigInt& x) { return x; }

inline std::size_t bits(const Wide& x) {
  const unsigned __int128 u = x.v < 0 ? -static_cast<unsigned __int128>(x.v)
                                      : static_cast<unsigned __int128>(x.v);
  std::size_t b = 0;
  for (unsigned __int128 t = u; t; t >>= 1) ++b;
  return b;
}
inline std::size_t bits(const BigInt& x) {
  return x == 0 ? 0 : boost::multiprecision::msb(abs(x)) + 1;
}

template <class C>
struct Table {
  int width = 1;
  std::unordered_map<std::string, std::uint32_t> index;
  std::vector<std::string> keys;
  std::vector<C> coef;

  explicit Table(int w = 1) : width(w) {}
  std::size_t size() const noexcept { return keys.size(); }

  // Pointer into the row; invalidated by the next insertion.
  C* row(const std::string& key) {
    auto [it, inserted] = index.try_emplace(key, static_cast<std::uint32_t>(keys.size()));
    if (inserted) {
      keys.push_back(key);
      coef.resize(coef.size() + static_cast<std::size_t>(width));
    }
    return coef.data() + static_cast<std::size_t>(it->second) * width;
  }
  const C* row_at(std::size_t i) const { return coef.data() + i * width; }
  C* row_at(std::size_t i) { return coef.data() + i * width; }

  const C* find(const std::string& key) const {
    auto it = index.find(key);
    return it == index.end() ? nullptr : row_at(it->second);
  }
};

template <class C>
bool same_table(const Table<C>& a, const Table<C>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const C* other = b.find(a.keys[i]);
    if (!other) return false;
    const C* mine = a.row_at(i);
    for (int d = 0; d < a.width; ++d)
      if (!(mine[d] == other[d])) return false;
  }
  return true;
}

// Byte offset of node j's segment within a key.
inline std::size_t node_offset(const std::string& key, int j, bool compressed) {
  std::size_t o = 0;
  for (int i = 0; i < j; ++i)
    o += 2 + (compressed ? 0 : static_cast<unsigned char>(key[o + 1]));
  return o;
}

inline int packet_count(const std::string& key, bool compressed) {
  int n = 0;
  std::size_t o = 0;
  while (o < key.size()) {
    const int q = static_cast<unsigned char>(key[o + 1]);
    n += (key[o] != 0 ? 1 : 0) + q;
    o += 2 + (compressed ? 0 : static_cast<std::size_t>(q));
  }
  return n;
}

inline int queued_count(const std::string& key, bool compressed) {
  int n = 0;
  std::size_t o = 0;
  while (o < key.size()) {
    const int q = static_cast<unsigned char>(key[o + 1]);
    n += q;
    o += 2 + (compressed ? 0 : static_cast<std::size_t>(q));
  }
  return n;
}

// Routing phase: every hot potato advances one node and leaves the ring on
// reaching remaining distance 0. In the routed key the slot byte holds the
// packet that has just arrived at the node (the new hot potato), if any.
inline std::string route_key(const std::string& key, int n, bool compressed) {
  std::vector<std::size_t> off(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 0; i < n; ++i)
    off[static_cast<std::size_t>(i) + 1] =
        off[static_cast<std::size_t>(i)] + 2 +
        (compressed ? 0 : static_cast<unsigned char>(key[off[static_cast<std::size_t>(i)] + 1]));
  std::string out = key;
  for (int j = 0; j < n; ++j) {
    const int prev = (j + n - 1) % n;
    const int t = static_cast<unsigned char>(key[off[static_cast<std::size_t>(prev)]]);
    out[off[static_cast<std::size_t>(j)]] = static_cast<char>(t > 1 ? t - 1 : 0);
  }
  return out;
}

// Branches of node j's sub-step on a routed key. emit(new_key, arrival,
// factor): arrival selects weight s (else 1 - L s); factor is the integer
// multiplier after scaling every branch by L in compressed mode (so the
// 1/L promotion weight becomes 1, undone by an exact division).
template <class Emit>
void node_branches(const std::string& key, int j, int L, bool compressed, Emit&& emit) {
  const std::size_t o = node_offset(key, j, compressed);
  const int c = static_cast<unsigned char>(key[o]);
  const int q = static_cast<unsigned char>(key[o + 1]);
  const std::size_t seg = 2 + (compressed ? 0 : static_cast<std::size_t>(q));
  const std::string head = key.substr(0, o);
  const std::string tail = key.substr(o + seg);
  const std::string dests = compressed ? std::string() : key.substr(o + 2, static_cast<std::size_t>(q));
  const std::int64_t S = compressed ? L : 1;
  auto make = [&](int slot, int queued, const std::string& ds) {
    std::string k = head;
    k.push_back(static_cast<char>(slot));
    k.push_back(static_cast<char>(queued));
    if (!compressed) k += ds;
    k += tail;
    return k;
  };
  if (c > 0) {
    // The internal packet keeps the slot; an arrival joins the queue.
    emit(make(c, q, dests), false, S);
    if (compressed) {
      emit(make(c, q + 1, dests), true, static_cast<std::int64_t>(L) * S);
    } else {
      for (int d = 1; d <= L; ++d) emit(make(c, q + 1, dests + static_cast<char>(d)), true, 1);
    }
  } else if (q > 0) {
    // The oldest queued packet is promoted; an arrival queues behind.
    if (compressed) {
      for (int d = 1; d <= L; ++d) {
        emit(make(d, q - 1, ""), false, 1);
        emit(make(d, q, ""), true, L);
      }
    } else {
      const int h = static_cast<unsigned char>(dests[0]);
      const std::string rest = dests.substr(1);
      emit(make(h, q - 1, rest), false, 1);
      for (int d = 1; d <= L; ++d) emit(make(h, q, rest + static_cast<char>(d)), true, 1);
    }
  } else {
    emit(make(0, 0, ""), false, S);
    for (int d = 1; d <= L; ++d) emit(make(d, 0, ""), true, S);
  }
}

inline std::vector<std::string> node_segments(const std::string& key, int n, bool compressed) {
  std::vector<std::string> segs;
  std::size_t o = 0;
  for (int i = 0; i < n; ++i) {
    const std::size_t len = 2 + (compressed ? 0 : static_cast<unsigned char>(key[o + 1]));
    segs.push_back(key.substr(o, len));
    o += len;
  }
  return segs;
}

// Node i of the result is node (i + r) mod n of the input.
inline std::string rotate_key(const std::string& key, int n, bool compressed, int r) {
  const auto segs = node_segments(key, n, compressed);
  std::string out;
  for (int i = 0; i < n; ++i) out += segs[static_cast<std::size_t>((i + r) % n)];
  return out;
}

// Smallest rotation of the node sequence (as whole node segments) and the
// size of the rotation orbit.
inline std::pair<std::string, int> canonical_rotation(const std::string& key, int n,
                                                      bool compressed) {
  const auto segs = node_segments(key, n, compressed);
  std::string best;
  int period = n;
  for (int r = 0; r < n; ++r) {
    std::string cand;
    for (int i = 0; i < n; ++i) cand += segs[static_cast<std::size_t>((i + r) % n)];
    if (r > 0 && cand == key && period == n) period = r;
    if (r == 0 || cand < best) best = std::move(cand);
  }
  return {best, period};
}

template <class C>
class Engine {
 public:
  Engine(const RingSpec& spec, int k, const TaylorOptions& opt)
      : spec_(spec), k_(k), opt_(opt), table_(k + 1) {
    C* r = table_.row(ground_state(spec.nodes, opt.compressed).key());
    r[0] = one();
  }

  const Table<C>& table() const noexcept { return table_; }
  std::int64_t time() const noexcept { return t_; }

  void step() {
    const int n = spec_.nodes;
    const int L = spec_.max_path;
    const int w = k_ + 1;
    const bool comp = opt_.compressed;

    Table<C> cur(w);
    cur.index.reserve(table_.size() * 2);
    for (std::size_t i = 0; i < table_.size(); ++i) {
      C* dst = cur.row(route_key(table_.keys[i], n, comp));
      const C* src = table_.row_at(i);
      for (int d = 0; d < w; ++d) add_mul(dst[d], src[d], 1);
    }

    std::vector<C> none(static_cast<std::size_t>(w)), arr(static_cast<std::size_t>(w));
    for (int j = 0; j < n; ++j) {
      Table<C> next(w);
      next.index.reserve(cur.size() * 2);
      for (std::size_t i = 0; i < cur.size(); ++i) {
        const C* src = cur.row_at(i);
        bool arr_zero = true, none_zero = true;
        for (int d = 0; d < w; ++d) {
          none[static_cast<std::size_t>(d)] = src[d];
          if (d > 0) add_mul(none[static_cast<std::size_t>(d)], src[d - 1], -L);
          arr[static_cast<std::size_t>(d)] = d > 0 ? src[d - 1] : C{};
          none_zero = none_zero && is_zero(none[static_cast<std::size_t>(d)]);
          arr_zero = arr_zero && is_zero(arr[static_cast<std::size_t>(d)]);
        }
        node_branches(cur.keys[i], j, L, comp,
                      [&](const std::string& key, bool arrival, std::int64_t factor) {
                        if (arrival ? arr_zero : none_zero) return;
                        const auto& srcrow = arrival ? arr : none;
                        C* dst = next.row(key);
                        for (int d = 0; d < w; ++d)
                          add_mul(dst[d], srcrow[static_cast<std::size_t>(d)], factor);
                      });
        check_cap(next);
      }
      if (comp && L > 1) {
        for (auto& c : next.coef)
          ensure(div_exact(c, L), "compressed sub-step left a non-integral coefficient");
      }
      cur = std::move(next);
    }

    Table<C> out(w);
    out.index.reserve(cur.size());
    for (std::size_t i = 0; i < cur.size(); ++i) {
      const C* src = cur.row_at(i);
      bool zero = true;
      for (int d = 0; d < w && zero; ++d) zero = is_zero(src[d]);
      if (zero) continue;
      const std::string key =
          opt_.symmetry ? canonical_rotation(cur.keys[i], n, comp).first : cur.keys[i];
      C* dst = out.row(key);
      for (int d = 0; d < w; ++d) add_mul(dst[d], src[d], 1);
    }
    table_ = std::move(out);
    ++t_;
  }

  // Sum of all state series; equals 1 (mod s^(k+1)) when mass is conserved.
  IntSeries total() const {
    IntSeries s(k_);
    for (std::size_t i = 0; i < table_.size(); ++i) {
      const C* r = table_.row_at(i);
      for (int d = 0; d <= k_; ++d) s[d] += to_big(r[d]);
    }
    return s;
  }

  std::size_t max_bits() const {
    std::size_t b = 0;
    for (const auto& c : table_.coef) b = std::max(b, bits(c));
    return b;
  }

  StateDist snapshot() const {
    StateDist dist;
    dist.spec = spec_;
    dist.k = k_;
    dist.compressed = opt_.compressed;
    dist.symmetry = opt_.symmetry;
    dist.steps = t_;
    std::vector<std::size_t> order(table_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return table_.keys[a] < table_.keys[b]; });
    for (std::size_t i : order) {
      IntSeries s(k_);
      const C* r = table_.row_at(i);
      for (int d = 0; d <= k_; ++d) s[d] = to_big(r[d]);
      dist.states.emplace_back(table_.keys[i], std::move(s));
    }
    return dist;
  }

 private:
  static C one() {
    if constexpr (std::is_same_v<C, Wide>) {
      return Wide{1};
    } else {
      return C(1);
    }
  }

  void check_cap(const Table<C>& t) const {
    if (t.size() > opt_.state_cap) {
      std::size_t b = 0;
      for (const auto& c : t.coef) b = std::max(b, bits(c));
      throw StateCapExceeded(t.size(), opt_.state_cap, b);
    }
  }

  RingSpec spec_;
  int k_;
  TaylorOptions opt_;
  Table<C> table_;
  std::int64_t t_ = 0;
};

inline void check_taylor_args(const RingSpec& spec, int k) {
  spec.validate();
  require(k >= 0, "degree bound k must be nonnegative");
  require(k < 120, "degree bound k too large for the state encoding");
  require(!spec.is_geometric(), "exact expansion needs Bernoulli arrivals");
  require(spec.protocol == Protocol::ghp, "exact expansion is defined for GHP only");
  require(spec.max_path < 127, "maximum path length too large for the state encoding");
}

template <class C, class OnStep>
StateDist run_fixed(const RingSpec& spec, int k, std::int64_t steps, const TaylorOptions& opt,
                    OnStep&& on_step) {
  Engine<C> e(spec, k, opt);
  IntSeries unit_series(k);
  unit_series[0] = 1;
  for (std::int64_t t = 1; t <= steps; ++t) {
    e.step();
    IntSeries tot = e.total();
    ensure(tot == unit_series, "probability mass not conserved at step " + std::to_string(t));
    on_step(t, tot);
  }
  return e.snapshot();
}

template <class C>
StateDist run_to_convergence(const RingSpec& spec, int k, const TaylorOptions& opt) {
  const std::int64_t window = static_cast<std::int64_t>(k + 1) * (spec.max_path + spec.nodes);
  const std::int64_t cap = opt.max_steps > 0 ? opt.max_steps : 4 * window;
  Engine<C> e(spec, k, opt);
  IntSeries unit_series(k);
  unit_series[0] = 1;
  std::int64_t last_change = 0;
  std::int64_t declared = -1;
  for (std::int64_t t = 1; t <= cap; ++t) {
    Table<C> prev = e.table();
    e.step();
    ensure(e.total() == unit_series, "probability mass not conserved at step " + std::to_string(t));
    if (!same_table(prev, e.table())) {
      ensure(declared < 0, "coefficients changed at step " + std::to_string(t) +
                               " after convergence was declared at step " +
                               std::to_string(declared));
      last_change = t;
    }
    if (declared < 0 && t - last_change >= window) {
      declared = t;
      if (!opt.verify_to_cap) break;
    }
  }
  ensure(declared >= 0, "no convergence within " + std::to_string(cap) + " steps");
  StateDist dist = e.snapshot();
  dist.converged = true;
  dist.converged_at = last_change;
  return dist;
}

}  // namespace taylor_detail

inline IntSeries StateDist::probability(const SymbolicState& query) const {
  require(static_cast<int>(query.nodes.size()) == spec.nodes, "state has the wrong node count");
  require(query.compressed || !compressed, "uncompressed query on a compressed distribution");
  const int n = spec.nodes;
  const std::string want = query.key();
  auto as_query = [&](const std::string& key) {
    return query.compressed && !compressed
               ? SymbolicState::from_key(key, n, false).lumped().key()
               : key;
  };
  IntSeries out(k);
  for (const auto& [key, series] : states) {
    if (!symmetry) {
      if (as_query(key) == want) out += series;
      continue;
    }
    // A class of mass M is spread evenly over its members, so each of the
    // N rotations of the representative accounts for M / N.
    int hits = 0;
    for (int r = 0; r < n; ++r)
      if (as_query(taylor_detail::rotate_key(key, n, compressed, r)) == want) ++hits;
    for (int d = 0; d <= k && hits > 0; ++d) out[d] += series[d] * hits;
  }
  if (symmetry) {
    for (int d = 0; d <= k; ++d) {
      BigInt q = out[d] / n;
      ensure(q * n == out[d], "class mass not divisible by the node count");
      out[d] = q;
    }
  }
  return out;
}

// States reachable from the ground state with at most k packets present,
// as measured after arrivals. Breadth-first over the same branch rules the
// propagation uses, ignoring weights.
inline std::vector<SymbolicState> enumerate_states(const RingSpec& spec, int k,
                                                   bool compressed = true,
                                                   std::size_t state_cap = 20'000'000) {
  taylor_detail::check_taylor_args(spec, k);
  const int n = spec.nodes;
  const int L = spec.max_path;
  std::unordered_set<std::string> seen;
  std::vector<std::string> frontier{ground_state(n, compressed).key()};
  seen.insert(frontier.front());
  while (!frontier.empty()) {
    std::vector<std::string> next_frontier;
    for (const std::string& key : frontier) {
      std::vector<std::string> cur{taylor_detail::route_key(key, n, compressed)};
      for (int j = 0; j < n; ++j) {
        std::unordered_set<std::string> nxt;
        for (const auto& c : cur)
          taylor_detail::node_branches(c, j, L, compressed,
                                       [&](const std::string& s, bool, std::int64_t) {
                                         if (taylor_detail::packet_count(s, compressed) <= k)
                                           nxt.insert(s);
                                       });
        cur.assign(nxt.begin(), nxt.end());
      }
      for (auto& s : cur) {
        if (seen.insert(s).second) {
          if (seen.size() > state_cap) throw StateCapExceeded(seen.size(), state_cap, 0);
          next_frontier.push_back(s);
        }
      }
    }
    frontier = std::move(next_frontier);
  }
  std::vector<std::string> keys(seen.begin(), seen.end());
  std::sort(keys.begin(), keys.end());
  std::vector<SymbolicState> out;
  for (const auto& key : keys) out.push_back(SymbolicState::from_key(key, n, compressed));
  return out;
}

// Exact distribution after `steps` steps from the ground state. Mass
// conservation is asserted at every step; on_step(t, total) sees the
// per-step sum of all state series.
inline StateDist propagate(
    const RingSpec& spec, int k, std::int64_t steps, const TaylorOptions& opt = {},
    const std::function<void(std::int64_t, const IntSeries&)>& on_step = {}) {
  taylor_detail::check_taylor_args(spec, k);
  require(steps >= 0, "step count must be nonnegative");
  auto cb = [&](std::int64_t t, const IntSeries& s) {
    if (on_step) on_step(t, s);
  };
  if (!opt.force_bigint) {
    try {
      return taylor_detail::run_fixed<taylor_detail::Wide>(spec, k, steps, opt, cb);
    } catch (const CoefficientOverflow&) {
    }
  }
  return taylor_detail::run_fixed<BigInt>(spec, k, steps, opt, cb);
}

// Stationary probabilities mod s^(k+1). Runs until no coefficient has
// changed for W = (k + 1)(L + N) steps, then keeps going to 4 W and fails
// if anything moves again.
inline StateDist stationary_series(const RingSpec& spec, int k, const TaylorOptions& opt = {}) {
  taylor_detail::check_taylor_args(spec, k);
  if (!opt.force_bigint) {
    try {
      return taylor_detail::run_to_convergence<taylor_detail::Wide>(spec, k, opt);
    } catch (const CoefficientOverflow&) {
    }
  }
  return taylor_detail::run_to_convergence<BigInt>(spec, k, opt);
}

// Sum over states of (total queued packets) * Pr(state).
inline IntSeries expected_queue_total(const StateDist& dist) {
  IntSeries out(dist.k);
  for (const auto& [key, series] : dist.states) {
    const int q = taylor_detail::queued_count(key, dist.compressed);
    if (q == 0) continue;
    for (int d = 0; d <= dist.k; ++d) out[d] += series[d] * q;
  }
  return out;
}

// Expected queue length at one node. Rotational symmetry makes this the
// total divided by N, exactly.
inline IntSeries expected_queue_series(const StateDist& dist) {
  IntSeries total = expected_queue_total(dist);
  const int n = dist.spec.nodes;
  for (int d = 0; d <= dist.k; ++d) {
    BigInt q = total[d] / n;
    ensure(q * n == total[d], "expected queue total not divisible by N");
    total[d] = q;
  }
  return total;
}

struct ProductFormProbe {
  SymbolicState state;
  SymbolicState reversal;
  IntSeries state_series;
  IntSeries reversal_series;
  bool differ() const { return !(state_series == reversal_series); }
};

// Series of a state and of its mirror image. Equal series for all states
// are necessary for a product-form stationary law on the ring.
inline ProductFormProbe product_form_probe(const StateDist& dist, const SymbolicState& state) {
  require(static_cast<int>(state.nodes.size()) == dist.spec.nodes, "state has the wrong node count");
  require(state.packets() <= dist.k, "state has more packets than the expansion degree");
  ProductFormProbe out{state, state.reversed(), dist.probability(state),
                       dist.probability(state.reversed())};
  return out;
}

inline ProductFormProbe product_form_probe(const RingSpec& spec, int k, const SymbolicState& state,
                                           const TaylorOptions& opt = {}) {
  const auto states = enumerate_states(spec, k, state.compressed);
  require(std::find(states.begin(), states.end(), state) != states.end(),
          "state is not reachable with at most k packets");
  return product_form_probe(stationary_series(spec, k, opt), state);
}

}  // namespace ringroute

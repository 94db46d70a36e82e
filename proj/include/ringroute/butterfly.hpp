#pragma once

// Node-disjoint routing on a concatenated pair of layer-permuted
// butterflies. Layers run 0..2d; the edge stage l (layer l -> l+1) rewrites
// bit pi_left[l] for l < d and bit pi_right[l - d] otherwise. Node labels
// are d-bit integers and layer d is shared by both halves.

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "ringroute/error.hpp"

namespace ringroute {

using Label = std::uint32_t;

struct ButterflyPair {
  int d = 0;
  std::vector<int> pi_left;   // stage l < d rewrites bit pi_left[l]
  std::vector<int> pi_right;  // stage d + l rewrites bit pi_right[l]

  static ButterflyPair standard(int d) {
    ButterflyPair p;
    p.d = d;
    p.pi_left.resize(static_cast<std::size_t>(d));
    std::iota(p.pi_left.begin(), p.pi_left.end(), 0);
    p.pi_right = p.pi_left;
    return p;
  }

  // Forward butterfly followed by a reversed one.
  static ButterflyPair benes(int d) {
    ButterflyPair p = standard(d);
    std::reverse(p.pi_right.begin(), p.pi_right.end());
    return p;
  }

  template <class Rng>
  static ButterflyPair random(int d, Rng& rng) {
    ButterflyPair p = standard(d);
    std::shuffle(p.pi_left.begin(), p.pi_left.end(), rng);
    std::shuffle(p.pi_right.begin(), p.pi_right.end(), rng);
    return p;
  }

  Label size() const { return Label{1} << d; }
  int layers() const { return 2 * d + 1; }
  int stage_bit(int l) const {
    return l < d ? pi_left[static_cast<std::size_t>(l)] : pi_right[static_cast<std::size_t>(l - d)];
  }

  // Bits fixed on a left sub-butterfly at level m (first m stages).
  Label left_mask(int m) const {
    Label mask = 0;
    for (int i = 0; i < m; ++i) mask |= Label{1} << pi_left[static_cast<std::size_t>(i)];
    return mask;
  }
  // Bits fixed on a right sub-butterfly at level m (last m stages).
  Label right_mask(int m) const {
    Label mask = 0;
    for (int i = 0; i < m; ++i) mask |= Label{1} << pi_right[static_cast<std::size_t>(d - 1 - i)];
    return mask;
  }

  void validate() const {
    require(d >= 0 && d <= 20, "butterfly dimension must be in [0, 20]");
    auto is_perm = [this](const std::vector<int>& v) {
      if (static_cast<int>(v.size()) != d) return false;
      std::vector<int> s = v;
      std::sort(s.begin(), s.end());
      for (int i = 0; i < d; ++i)
        if (s[static_cast<std::size_t>(i)] != i) return false;
      return true;
    };
    require(is_perm(pi_left), "left layer order is not a permutation of 0..d-1");
    require(is_perm(pi_right), "right layer order is not a permutation of 0..d-1");
  }

  bool is_edge(int layer, Label from, Label to) const {
    if (layer < 0 || layer >= 2 * d || from >= size() || to >= size()) return false;
    return ((from ^ to) & ~(Label{1} << stage_bit(layer))) == 0;
  }
};

enum class Side { left, right };

inline const char* to_string(Side s) { return s == Side::left ? "left" : "right"; }

// A sub-butterfly is identified by its fixed bits. Right ones are keyed by
// (mask, value, layer), so an all-zero value never aliases another level.
struct SubButterfly {
  Side side = Side::left;
  int level = 0;  // m = number of fixed bits
  int layer = 0;  // m on the left, 2d - m on the right
  Label mask = 0;
  Label value = 0;

  bool contains_mid(Label x) const { return (x & mask) == value; }
  friend bool operator==(const SubButterfly&, const SubButterfly&) = default;
};

struct ConnectivityGraph {
  int q = 0;
  int level = 0;  // m = d - q
  std::vector<SubButterfly> left, right;
  // multiplicity[i][j] = number of shared layer-d nodes; 0 means no edge.
  std::vector<std::vector<std::uint64_t>> multiplicity;
  std::vector<int> left_component, right_component;
  int components = 0;

  bool edge(std::size_t i, std::size_t j) const { return multiplicity[i][j] > 0; }
};

namespace butterfly_detail {

inline int popcount(Label x) { return __builtin_popcount(x); }

inline std::vector<SubButterfly> subs(const ButterflyPair& pair, Side side, int m) {
  const Label mask = side == Side::left ? pair.left_mask(m) : pair.right_mask(m);
  std::vector<SubButterfly> out;
  // enumerate all values on the mask bits in increasing order
  Label v = 0;
  while (true) {
    out.push_back({side, m, side == Side::left ? m : 2 * pair.d - m, mask, v});
    if (v == mask) break;
    v = ((v | ~mask) + 1) & mask;
  }
  return out;
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

// Kuhn's augmenting paths. adj[i] lists right vertices of left vertex i.
inline std::vector<int> max_matching(const std::vector<std::vector<int>>& adj, int right_count) {
  std::vector<int> match_right(static_cast<std::size_t>(right_count), -1);
  std::vector<char> seen;
  auto augment = [&](auto&& self, int u) -> bool {
    for (int v : adj[static_cast<std::size_t>(u)]) {
      if (seen[static_cast<std::size_t>(v)]) continue;
      seen[static_cast<std::size_t>(v)] = 1;
      if (match_right[static_cast<std::size_t>(v)] < 0 || self(self, match_right[static_cast<std::size_t>(v)])) {
        match_right[static_cast<std::size_t>(v)] = u;
        return true;
      }
    }
    return false;
  };
  for (std::size_t u = 0; u < adj.size(); ++u) {
    seen.assign(static_cast<std::size_t>(right_count), 0);
    augment(augment, static_cast<int>(u));
  }
  std::vector<int> match_left(adj.size(), -1);
  for (int v = 0; v < right_count; ++v)
    if (match_right[static_cast<std::size_t>(v)] >= 0) match_left[static_cast<std::size_t>(match_right[static_cast<std::size_t>(v)])] = v;
  return match_left;
}

// Dense Edmonds-Karp; the graphs here have a few hundred vertices at most.
class MaxFlow {
 public:
  explicit MaxFlow(int n) : cap_(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n), 0)) {}
  void add(int u, int v, int c) { cap_[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)] += c; }
  int flow(int u, int v) const { return flow_[static_cast<std::size_t>(u)][static_cast<std::size_t>(v)]; }

  int run(int s, int t) {
    const std::size_t n = cap_.size();
    flow_.assign(n, std::vector<int>(n, 0));
    int total = 0;
    while (true) {
      std::vector<int> prev(n, -1);
      prev[static_cast<std::size_t>(s)] = s;
      std::vector<int> queue{s};
      for (std::size_t h = 0; h < queue.size() && prev[static_cast<std::size_t>(t)] < 0; ++h) {
        const auto u = static_cast<std::size_t>(queue[h]);
        for (std::size_t v = 0; v < n; ++v)
          if (prev[v] < 0 && cap_[u][v] - flow_[u][v] > 0) {
            prev[v] = static_cast<int>(u);
            queue.push_back(static_cast<int>(v));
          }
      }
      if (prev[static_cast<std::size_t>(t)] < 0) return total;
      int push = 1 << 30;
      for (int v = t; v != s; v = prev[static_cast<std::size_t>(v)]) {
        const auto u = static_cast<std::size_t>(prev[static_cast<std::size_t>(v)]);
        push = std::min(push, cap_[u][static_cast<std::size_t>(v)] - flow_[u][static_cast<std::size_t>(v)]);
      }
      for (int v = t; v != s; v = prev[static_cast<std::size_t>(v)]) {
        const auto u = static_cast<std::size_t>(prev[static_cast<std::size_t>(v)]);
        flow_[u][static_cast<std::size_t>(v)] += push;
        flow_[static_cast<std::size_t>(v)][u] -= push;
      }
      total += push;
    }
  }

 private:
  std::vector<std::vector<int>> cap_, flow_;
};

}  // namespace butterfly_detail

// q-dimensional sub-butterfly connectivity graph. An edge joins a left and
// a right sub-butterfly iff their fixed bits agree wherever both constrain
// the same position; the shared layer-d nodes number 2^(d - |union|).
inline ConnectivityGraph connectivity_graph(const ButterflyPair& pair, int q) {
  pair.validate();
  require(q >= 0 && q <= pair.d, "connectivity dimension out of range");
  using namespace butterfly_detail;
  ConnectivityGraph g;
  g.q = q;
  g.level = pair.d - q;
  g.left = subs(pair, Side::left, g.level);
  g.right = subs(pair, Side::right, g.level);
  const std::size_t n = g.left.size();
  g.multiplicity.assign(n, std::vector<std::uint64_t>(n, 0));
  UnionFind uf(2 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const SubButterfly& a = g.left[i];
      const SubButterfly& b = g.right[j];
      const Label common = a.mask & b.mask;
      if ((a.value & common) != (b.value & common)) continue;
      g.multiplicity[i][j] = std::uint64_t{1} << (pair.d - popcount(a.mask | b.mask));
      uf.unite(i, n + j);
    }
  std::map<std::size_t, int> ids;
  auto id = [&](std::size_t x) {
    auto [it, fresh] = ids.try_emplace(uf.find(x), static_cast<int>(ids.size()));
    return it->second;
  };
  for (std::size_t i = 0; i < n; ++i) g.left_component.push_back(id(i));
  for (std::size_t j = 0; j < n; ++j) g.right_component.push_back(id(n + j));
  g.components = static_cast<int>(ids.size());
  return g;
}

struct ConnectivityCheck {
  bool regular = true;           // enriched degree 2^q everywhere
  bool complete_components = true;
  bool equal_sides = true;
  bool ok() const { return regular && complete_components && equal_sides; }
};

inline ConnectivityCheck check_connectivity(const ConnectivityGraph& g) {
  ConnectivityCheck c;
  const std::size_t n = g.left.size();
  const std::uint64_t degree = std::uint64_t{1} << g.q;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row += g.multiplicity[i][j];
      col += g.multiplicity[j][i];
      if ((g.left_component[i] == g.right_component[j]) != g.edge(i, j)) c.complete_components = false;
    }
    if (row != degree || col != degree) c.regular = false;
  }
  std::vector<int> l(static_cast<std::size_t>(g.components), 0), r(l);
  for (std::size_t i = 0; i < n; ++i) {
    ++l[static_cast<std::size_t>(g.left_component[i])];
    ++r[static_cast<std::size_t>(g.right_component[i])];
  }
  c.equal_sides = l == r;
  return c;
}

// How each q-dimensional component refines at q - 1: 1 (no reused
// dimension), 2 (one) or 4 (two). Returns the child count per component.
inline std::vector<int> refinement_case(const ButterflyPair& pair, int q) {
  require(q >= 1 && q <= pair.d, "refinement needs 1 <= q <= d");
  const ConnectivityGraph coarse = connectivity_graph(pair, q);
  const ConnectivityGraph fine = connectivity_graph(pair, q - 1);
  const Label stage = Label{1} << pair.pi_left[static_cast<std::size_t>(coarse.level)];
  std::vector<std::set<int>> children(static_cast<std::size_t>(coarse.components));
  for (std::size_t i = 0; i < fine.left.size(); ++i) {
    const Label parent_value = fine.left[i].value & ~stage;
    for (std::size_t k = 0; k < coarse.left.size(); ++k)
      if (coarse.left[k].value == parent_value)
        children[static_cast<std::size_t>(coarse.left_component[k])].insert(fine.left_component[i]);
  }
  std::vector<int> out;
  for (const auto& c : children) out.push_back(static_cast<int>(c.size()));
  return out;
}

// One directed path per routed pair, 2d + 1 labels, layer l at index l.
struct PathSet {
  int d = 0;
  std::vector<std::vector<Label>> paths;

  std::map<Label, Label> endpoints() const {
    std::map<Label, Label> out;
    for (const auto& p : paths) out[p.front()] = p.back();
    return out;
  }
};

struct SwitchSetting {
  int stage = 0;
  Label base = 0;  // switch label with the stage bit cleared
  bool crossed = false;
};

struct SplitResult {
  std::vector<Label> next;  // successor label per input, same order
  std::vector<SwitchSetting> settings;
  std::map<Label, std::pair<int, int>> child_counts;  // per sub value: (child 0, child 1)
};

// Rounding rule: given a sub-butterfly value and its odd packet count,
// the child (0 or 1) that receives the extra packet.
using Rounding = std::function<int(Label sub_value, int count)>;

inline int round_to_zero(Label, int) { return 0; }

// One level of recursive splitting. On the left, packets at layer m move
// forward to layer m + 1; on the right, packets at layer 2d - m move
// backward to layer 2d - m - 1. Every switch is set straight or crossed,
// so distinct inputs give distinct outputs.
inline SplitResult split_layer(const ButterflyPair& pair, Side side, int m,
                               const std::vector<Label>& labels, const Rounding& rounding = round_to_zero) {
  require(m >= 0 && m < pair.d, "split level out of range");
  const int stage = side == Side::left ? m : 2 * pair.d - m - 1;
  const Label bit = Label{1} << pair.stage_bit(stage);
  const Label mask = side == Side::left ? pair.left_mask(m) : pair.right_mask(m);
  {
    std::set<Label> seen;
    for (Label x : labels) {
      require(x < pair.size(), "label out of range");
      require(seen.insert(x).second, "split input has a repeated node");
    }
  }
  // sub value -> switch base -> indices of packets on that switch
  std::map<Label, std::map<Label, std::vector<std::size_t>>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i] & mask][labels[i] & ~bit].push_back(i);

  SplitResult out;
  out.next.assign(labels.size(), 0);
  for (const auto& [sub, switches] : groups) {
    int count = 0;
    for (const auto& [base, idx] : switches) count += static_cast<int>(idx.size());
    const int extra = count % 2 == 1 ? rounding(sub, count) : 0;
    ensure(extra == 0 || extra == 1, "rounding decision must be 0 or 1");
    int want0 = count / 2 + (count % 2 == 1 && extra == 0 ? 1 : 0);
    for (const auto& [base, idx] : switches)
      if (idx.size() == 2) --want0;
    for (const auto& [base, idx] : switches) {
      bool crossed = false;
      if (idx.size() == 2) {
        for (std::size_t i : idx) out.next[i] = labels[i];
      } else {
        const std::size_t i = idx[0];
        const Label child = want0 > 0 ? 0 : bit;
        if (want0 > 0) --want0;
        out.next[i] = (labels[i] & ~bit) | child;
        crossed = out.next[i] != labels[i];
      }
      out.settings.push_back({stage, base, crossed});
    }
    ensure(want0 == 0, "splitting could not meet the ceil/floor target");
    auto& cc = out.child_counts[sub];
    for (const auto& [base, idx] : switches)
      for (std::size_t i : idx) ++((out.next[i] & bit) ? cc.second : cc.first);
  }
  return out;
}

struct Violation {
  std::string kind;
  int path = -1;
  int layer = -1;
  Label label = 0;
  std::string detail;
};

struct VerifyReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

// Checks layer count, edge validity, endpoint sets, optional endpoint map
// and node-disjointness.
inline VerifyReport verify_node_disjoint(const ButterflyPair& pair, const PathSet& ps,
                                         const std::vector<Label>& A, const std::vector<Label>& B,
                                         const std::map<Label, Label>* rho = nullptr) {
  VerifyReport rep;
  auto bad = [&](std::string kind, int path, int layer, Label label, std::string detail = {}) {
    rep.violations.push_back({std::move(kind), path, layer, label, std::move(detail)});
  };
  std::map<std::pair<int, Label>, int> owner;
  std::multiset<Label> starts, ends;
  for (std::size_t p = 0; p < ps.paths.size(); ++p) {
    const auto& path = ps.paths[p];
    const int pi = static_cast<int>(p);
    if (static_cast<int>(path.size()) != pair.layers()) {
      bad("length", pi, -1, 0, std::to_string(path.size()) + " nodes");
      continue;
    }
    for (int l = 0; l < pair.layers(); ++l) {
      const Label x = path[static_cast<std::size_t>(l)];
      if (x >= pair.size()) bad("label", pi, l, x);
      if (l + 1 < pair.layers() && !pair.is_edge(l, x, path[static_cast<std::size_t>(l + 1)]))
        bad("edge", pi, l, x, "no edge to " + std::to_string(path[static_cast<std::size_t>(l + 1)]));
      auto [it, fresh] = owner.try_emplace({l, x}, pi);
      if (!fresh) bad("shared node", pi, l, x, "also on path " + std::to_string(it->second));
    }
    starts.insert(path.front());
    ends.insert(path.back());
    if (rho) {
      auto it = rho->find(path.front());
      if (it == rho->end() || it->second != path.back())
        bad("endpoint map", pi, 2 * pair.d, path.back());
    }
  }
  if (starts != std::multiset<Label>(A.begin(), A.end())) bad("input set", -1, 0, 0);
  if (ends != std::multiset<Label>(B.begin(), B.end())) bad("output set", -1, 2 * pair.d, 0);
  return rep;
}

namespace butterfly_detail {

inline void check_sets(const ButterflyPair& pair, const std::vector<Label>& A, const std::vector<Label>& B) {
  pair.validate();
  require(A.size() == B.size(), "input and output sets differ in size");
  for (const auto* s : {&A, &B}) {
    std::set<Label> u(s->begin(), s->end());
    require(u.size() == s->size(), "node sets must not repeat nodes");
    for (Label x : *s) require(x < pair.size(), "node label out of range");
  }
}

// Per-level rounding rules for one side.
using RoundingPlan = std::vector<Rounding>;

struct Half {
  std::vector<std::vector<Label>> trace;  // trace[i] = labels of packet i at levels 0..m
};

inline Half split_to(const ButterflyPair& pair, Side side, const std::vector<Label>& start, int levels,
                     const RoundingPlan& plan) {
  Half h;
  h.trace.assign(start.size(), {});
  for (std::size_t i = 0; i < start.size(); ++i) h.trace[i].push_back(start[i]);
  std::vector<Label> cur = start;
  for (int m = 0; m < levels; ++m) {
    const Rounding& r = m < static_cast<int>(plan.size()) && plan[static_cast<std::size_t>(m)]
                            ? plan[static_cast<std::size_t>(m)]
                            : Rounding(round_to_zero);
    cur = split_layer(pair, side, m, cur, r).next;
    for (std::size_t i = 0; i < cur.size(); ++i) h.trace[i].push_back(cur[i]);
  }
  return h;
}

// Full path through mid node x from a left packet at layer m (trace gives
// layers 0..m) and a right packet at layer 2d - m (trace gives 2d..2d-m).
inline std::vector<Label> join(const ButterflyPair& pair, const std::vector<Label>& left,
                               const std::vector<Label>& right, Label x) {
  const int d = pair.d;
  std::vector<Label> path(left.begin(), left.end());
  Label cur = left.back();
  for (int l = static_cast<int>(left.size()) - 1; l < d; ++l) {
    const Label bit = Label{1} << pair.stage_bit(l);
    cur = (cur & ~bit) | (x & bit);
    path.push_back(cur);
  }
  ensure(cur == x, "left half does not reach its mid node");
  const int mr = static_cast<int>(right.size()) - 1;
  for (int l = d; l < 2 * d - mr; ++l) {
    const Label bit = Label{1} << pair.stage_bit(l);
    cur = (cur & ~bit) | (right.back() & bit);
    path.push_back(cur);
  }
  ensure(cur == right.back(), "right half does not reach its layer");
  for (int i = mr - 1; i >= 0; --i) path.push_back(right[static_cast<std::size_t>(i)]);
  return path;
}

inline PathSet finish(const ButterflyPair& pair, const std::vector<Label>& A, const std::vector<Label>& B,
                      PathSet ps, const std::map<Label, Label>* rho = nullptr) {
  const VerifyReport rep = verify_node_disjoint(pair, ps, A, B, rho);
  ensure(rep.ok(), "routing failed verification: " + (rep.ok() ? std::string() : rep.violations[0].kind));
  return ps;
}

// Matches occupied left and right sub-butterflies at level m through the
// connectivity graph and joins the halves.
inline PathSet match_and_join(const ButterflyPair& pair, const Half& left, const Half& right, int m) {
  const Label lm = pair.left_mask(m), rm = pair.right_mask(m), common = lm & rm;
  const std::size_t n = left.trace.size();
  std::vector<std::vector<int>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Label a = left.trace[i].back() & lm;
    for (std::size_t j = 0; j < n; ++j) {
      const Label b = right.trace[j].back() & rm;
      if ((a & common) == (b & common)) adj[i].push_back(static_cast<int>(j));
    }
  }
  const std::vector<int> match = max_matching(adj, static_cast<int>(n));
  PathSet ps;
  ps.d = pair.d;
  for (std::size_t i = 0; i < n; ++i) {
    ensure(match[i] >= 0, "connectivity graph has no perfect matching on the occupied sub-butterflies");
    const auto& r = right.trace[static_cast<std::size_t>(match[i])];
    const Label x = (left.trace[i].back() & lm) | (r.back() & rm);
    ps.paths.push_back(join(pair, left.trace[i], r, x));
  }
  return ps;
}

inline int floor_log2(std::size_t n) {
  int m = 0;
  while ((std::size_t{2} << m) <= n) ++m;
  return m;
}

}  // namespace butterfly_detail

// |A| = |B| = 2^m: split evenly for m levels on both sides, one packet per
// sub-butterfly, then a perfect matching in the connectivity graph.
inline PathSet route_power_of_two(const ButterflyPair& pair, const std::vector<Label>& A,
                                  const std::vector<Label>& B) {
  using namespace butterfly_detail;
  check_sets(pair, A, B);
  PathSet empty;
  empty.d = pair.d;
  if (A.empty()) return empty;
  const int m = floor_log2(A.size());
  require((std::size_t{1} << m) == A.size(), "route_power_of_two needs |A| a power of two");
  const Half left = split_to(pair, Side::left, A, m, {});
  const Half right = split_to(pair, Side::right, B, m, {});
  return finish(pair, A, B, match_and_join(pair, left, right, m));
}

namespace butterfly_detail {

// Rounding decisions observed in a routed instance: at level j, which child
// of each sub-butterfly received more of its packets.
inline RoundingPlan observed_plan(const ButterflyPair& pair, Side side, const PathSet& ps, int levels) {
  RoundingPlan plan;
  const int d = pair.d;
  for (int j = 0; j < levels; ++j) {
    const int layer = side == Side::left ? j + 1 : 2 * d - j - 1;
    const Label parent = side == Side::left ? pair.left_mask(j) : pair.right_mask(j);
    const Label bit = Label{1} << pair.stage_bit(side == Side::left ? j : 2 * d - j - 1);
    std::map<Label, std::pair<int, int>> counts;
    for (const auto& p : ps.paths) {
      const Label x = p[static_cast<std::size_t>(layer)];
      auto& c = counts[x & parent];
      ++((x & bit) ? c.second : c.first);
    }
    for (const auto& [sub, c] : counts) ensure(std::abs(c.first - c.second) <= 1, "sub-instance split is not ceil/floor");
    plan.push_back([counts](Label sub, int) {
      auto it = counts.find(sub);
      ensure(it != counts.end() && it->second.first != it->second.second,
             "odd sub-butterfly without a recorded rounding decision");
      return it->second.first > it->second.second ? 0 : 1;
    });
  }
  return plan;
}

// Balancing step of the matching lemma. Every level-M sub-butterfly holds one
// or two packets; choose a child for each single packet so every level-(M+1)
// component has as many packets on the left as on the right. Solved as a
// transportation problem with max-flow.
inline std::pair<Rounding, Rounding> balance(const ButterflyPair& pair, int M, const std::vector<Label>& left_at,
                                             const std::vector<Label>& right_at) {
  const Label lm = pair.left_mask(M), rm = pair.right_mask(M);
  const Label lm1 = pair.left_mask(M + 1), rm1 = pair.right_mask(M + 1);
  const Label common = lm1 & rm1;
  const Label lbit = Label{1} << pair.pi_left[static_cast<std::size_t>(M)];
  const Label rbit = Label{1} << pair.pi_right[static_cast<std::size_t>(pair.d - 1 - M)];

  std::map<Label, int> lcount, rcount;
  for (Label x : left_at) ++lcount[x & lm];
  for (Label x : right_at) ++rcount[x & rm];
  for (const auto* c : {&lcount, &rcount})
    for (const auto& [sub, k] : *c) ensure(k == 1 || k == 2, "level sub-butterfly does not hold 1 or 2 packets");

  // Components at level M+1 are the values on the common fixed bits.
  std::map<Label, int> comp;
  auto comp_id = [&](Label v) { return comp.try_emplace(v & common, static_cast<int>(comp.size())).first->second; };
  std::map<int, int> fixed_l, fixed_r;
  std::vector<std::pair<Label, std::pair<int, int>>> free_l, free_r;  // sub, candidate components
  for (const auto& [sub, k] : lcount) {
    const int c0 = comp_id(sub), c1 = comp_id(sub | lbit);
    if (k == 2) {
      ++fixed_l[c0];
      ++fixed_l[c1];
    } else {
      free_l.push_back({sub, {c0, c1}});
    }
  }
  for (const auto& [sub, k] : rcount) {
    const int c0 = comp_id(sub), c1 = comp_id(sub | rbit);
    if (k == 2) {
      ++fixed_r[c0];
      ++fixed_r[c1];
    } else {
      free_r.push_back({sub, {c0, c1}});
    }
  }
  const int C = static_cast<int>(comp.size());
  const int nl = static_cast<int>(free_l.size()), nr = static_cast<int>(free_r.size());
  // vertices: source, free left, components, free right, sink
  const int S = 0, L0 = 1, K0 = L0 + nl, R0 = K0 + C, T = R0 + nr;
  MaxFlow f(T + 1);
  int supply = 0;
  for (int i = 0; i < nl; ++i) {
    f.add(S, L0 + i, 1);
    f.add(L0 + i, K0 + free_l[static_cast<std::size_t>(i)].second.first, 1);
    f.add(L0 + i, K0 + free_l[static_cast<std::size_t>(i)].second.second, 1);
    ++supply;
  }
  for (int j = 0; j < nr; ++j) {
    f.add(K0 + free_r[static_cast<std::size_t>(j)].second.first, R0 + j, 1);
    f.add(K0 + free_r[static_cast<std::size_t>(j)].second.second, R0 + j, 1);
    f.add(R0 + j, T, 1);
  }
  for (const auto& [c, k] : fixed_l) {
    f.add(S, K0 + c, k);
    supply += k;
  }
  for (const auto& [c, k] : fixed_r) f.add(K0 + c, T, k);
  ensure(f.run(S, T) == supply && supply == static_cast<int>(left_at.size()),
         "matching lemma balance has no solution");

  auto decisions = [&](const auto& frees, bool left_side) {
    std::map<Label, int> child;
    for (std::size_t i = 0; i < frees.size(); ++i) {
      const auto& [sub, cands] = frees[i];
      int chosen;
      if (left_side) {
        chosen = f.flow(L0 + static_cast<int>(i), K0 + cands.first) > 0 ? 0 : 1;
      } else {
        chosen = f.flow(K0 + cands.first, R0 + static_cast<int>(i)) > 0 ? 0 : 1;
      }
      child[sub] = chosen;
    }
    return Rounding([child](Label sub, int) {
      auto it = child.find(sub);
      ensure(it != child.end(), "no balancing decision for sub-butterfly");
      return it->second;
    });
  };
  return {decisions(free_l, true), decisions(free_r, false)};
}

}  // namespace butterfly_detail

// Arbitrary |A| = |B| on a layer-permuted pair. With 2^M <= |A| < 2^(M+1),
// route a sub-instance of size |A| - 2^M, replay its rounding decisions on
// levels below M (parities agree there), balance level M -> M+1 components,
// and match inside the complete bipartite components.
inline PathSet route_subset(const ButterflyPair& pair, const std::vector<Label>& A, const std::vector<Label>& B) {
  using namespace butterfly_detail;
  check_sets(pair, A, B);
  const std::size_t n = A.size();
  if (n == 0 || (n & (n - 1)) == 0) return route_power_of_two(pair, A, B);
  const int M = floor_log2(n);
  std::vector<Label> a(A), b(B);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const std::size_t rest = n - (std::size_t{1} << M);
  const std::vector<Label> a_sub(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(rest));
  const std::vector<Label> b_sub(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(rest));
  const PathSet sub = route_subset(pair, a_sub, b_sub);

  const RoundingPlan lplan = observed_plan(pair, Side::left, sub, M);
  const RoundingPlan rplan = observed_plan(pair, Side::right, sub, M);
  Half left = split_to(pair, Side::left, A, M, lplan);
  Half right = split_to(pair, Side::right, B, M, rplan);
  std::vector<Label> lat, rat;
  for (const auto& t : left.trace) lat.push_back(t.back());
  for (const auto& t : right.trace) rat.push_back(t.back());
  const auto [lr, rr] = balance(pair, M, lat, rat);
  lat = split_layer(pair, Side::left, M, lat, lr).next;
  rat = split_layer(pair, Side::right, M, rat, rr).next;
  for (std::size_t i = 0; i < n; ++i) {
    left.trace[i].push_back(lat[i]);
    right.trace[i].push_back(rat[i]);
  }
  return finish(pair, A, B, match_and_join(pair, left, right, M + 1));
}

// Paths from the complements: read switch settings off the routed paths,
// leave unused switches straight, and trace every other input.
inline PathSet set_complement(const ButterflyPair& pair, const PathSet& routed, const std::vector<Label>& A,
                              const std::vector<Label>& B) {
  const VerifyReport rep = verify_node_disjoint(pair, routed, A, B);
  require(rep.ok(), "set_complement needs a verified routing");
  std::map<std::pair<int, Label>, Label> forced;  // (layer, node) -> next node
  for (const auto& p : routed.paths)
    for (int l = 0; l < 2 * pair.d; ++l) {
      const Label x = p[static_cast<std::size_t>(l)], y = p[static_cast<std::size_t>(l + 1)];
      const Label bit = Label{1} << pair.stage_bit(l);
      const bool crossed = x != y;
      forced[{l, x}] = y;
      forced[{l, x ^ bit}] = crossed ? x : x ^ bit;
    }
  std::set<Label> used(A.begin(), A.end());
  std::set<Label> outs(B.begin(), B.end());
  std::vector<Label> Ac, Bc;
  for (Label x = 0; x < pair.size(); ++x) {
    if (!used.count(x)) Ac.push_back(x);
    if (!outs.count(x)) Bc.push_back(x);
  }
  PathSet ps;
  ps.d = pair.d;
  for (Label a : Ac) {
    std::vector<Label> path{a};
    Label cur = a;
    for (int l = 0; l < 2 * pair.d; ++l) {
      auto it = forced.find({l, cur});
      if (it != forced.end()) cur = it->second;
      path.push_back(cur);
    }
    ps.paths.push_back(std::move(path));
  }
  return butterfly_detail::finish(pair, Ac, Bc, std::move(ps));
}

struct MidLayerWitness {
  int bit = 0;
  Label from = 0;  // layer floor(d/2)
  Label to = 0;    // layer 2d - floor(d/2), unreachable from `from`
};

// Every layer-h node reaches every layer-(2d-h) node (h = floor(d/2)) iff
// no bit is fixed both by the first h left stages and the last h right
// stages. Returns a witness when that fails.
inline std::optional<MidLayerWitness> mid_layer_obstruction(const ButterflyPair& pair) {
  pair.validate();
  const int h = pair.d / 2;
  const Label both = pair.left_mask(h) & pair.right_mask(h);
  if (both == 0) return std::nullopt;
  const int bit = __builtin_ctz(both);
  return MidLayerWitness{bit, 0, Label{1} << bit};
}

class HypothesisFailed : public DomainError {
 public:
  HypothesisFailed(const std::string& what, MidLayerWitness w) : DomainError(what), witness(w) {}
  MidLayerWitness witness;
};

// Routes a bijection rho: A -> B endpoint-wise when |A| <= 2^floor(d/2) and
// the mid layers are fully connected. Pads with dummy packets up to 2^h.
inline PathSet route_permutation_small(const ButterflyPair& pair, const std::map<Label, Label>& rho) {
  using namespace butterfly_detail;
  std::vector<Label> A, B;
  for (const auto& [a, b] : rho) {
    A.push_back(a);
    B.push_back(b);
  }
  check_sets(pair, A, B);
  if (auto w = mid_layer_obstruction(pair))
    throw HypothesisFailed("layer " + std::to_string(pair.d / 2) + " node " + std::to_string(w->from) +
                               " cannot reach layer " + std::to_string(2 * pair.d - pair.d / 2) + " node " +
                               std::to_string(w->to) + " (bit " + std::to_string(w->bit) + " fixed on both sides)",
                           *w);
  const int h = pair.d / 2;
  const std::size_t full = std::size_t{1} << h;
  require(A.size() <= full, "permutation routing needs |A| <= 2^floor(d/2)");
  PathSet ps;
  ps.d = pair.d;
  if (A.empty()) return ps;
  std::vector<Label> a = A, b = B;
  std::set<Label> ua(A.begin(), A.end()), ub(B.begin(), B.end());
  for (Label x = 0; a.size() < full; ++x)
    if (!ua.count(x)) a.push_back(x);
  for (Label x = 0; b.size() < full; ++x)
    if (!ub.count(x)) b.push_back(x);
  const Half left = split_to(pair, Side::left, a, h, {});
  const Half right = split_to(pair, Side::right, b, h, {});
  const Label lm = pair.left_mask(h), rm = pair.right_mask(h);
  // b[i] is rho(a[i]) for the real packets; dummies pair by index.
  for (std::size_t i = 0; i < A.size(); ++i) {
    const Label x = (left.trace[i].back() & lm) | (right.trace[i].back() & rm);
    ps.paths.push_back(join(pair, left.trace[i], right.trace[i], x));
  }
  return finish(pair, A, B, std::move(ps), &rho);
}

}  // namespace ringroute

#include <map>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "reference.hpp"
#include "ringroute/ring.hpp"
#include "ringroute/series.hpp"
#include "ringroute/taylor.hpp"

using namespace ringroute;

namespace {

// Brute-force oracle: exact distribution over concrete ring states, pushed
// through the ring simulator's own step rule with every arrival vector
// enumerated. An arrival with a given destination has weight s, no arrival
// at a node has weight 1 - L s.
class BruteForce {
 public:
  BruteForce(RingSpec spec, int k) : spec_(spec), k_(k) {
    RingState g = new_ring(spec_);
    IntSeries one(k_);
    one[0] = 1;
    dist_[signature(g)] = {g, one};
  }

  void run(int steps) {
    const int n = spec_.nodes, L = spec_.max_path;
    std::vector<IntSeries> w(2, IntSeries(k_));
    w[0][0] = 1;
    if (k_ >= 1) w[0][1] = -L;
    if (k_ >= 1) w[1][1] = 1;
    for (int t = 0; t < steps; ++t) {
      std::map<std::string, Entry> next;
      for (const auto& [key, e] : dist_) {
        std::vector<int> a(n, 0);
        while (true) {
          IntSeries weight = e.series;
          int arrivals = 0;
          for (int i = 0; i < n; ++i) arrivals += a[i] > 0;
          if (e.series.valuation() + arrivals <= k_ && e.series.valuation() >= 0) {
            for (int i = 0; i < n; ++i) weight = weight * w[a[i] > 0 ? 1 : 0];
            RingState s = e.state;
            ringroute::advance(s, a);
            auto [it, fresh] = next.try_emplace(signature(s), Entry{s, IntSeries(k_)});
            it->second.series += weight;
          }
          int i = 0;
          while (i < n && ++a[i] > L) a[i++] = 0;
          if (i == n) break;
        }
      }
      dist_.clear();
      for (auto& [key, e] : next)
        if (!e.series.is_zero()) dist_.emplace(key, std::move(e));
    }
  }

  IntSeries expected_queue() const {
    IntSeries out(k_);
    for (const auto& [key, e] : dist_) {
      const auto q = e.state.total_queued();
      for (int d = 0; d <= k_; ++d) out[d] += e.series[d] * q;
    }
    for (int d = 0; d <= k_; ++d) out[d] /= spec_.nodes;
    return out;
  }

  // Series per compressed symbolic state.
  std::map<std::string, IntSeries> lumped() const {
    std::map<std::string, IntSeries> out;
    for (const auto& [key, e] : dist_) {
      SymbolicState s = ground_state(spec_.nodes);
      for (int i = 0; i < spec_.nodes; ++i) {
        const RingNode& v = e.state.nodes[i];
        if (v.empty()) continue;
        s.nodes[i].slot = v.slot()->remaining;
        s.nodes[i].queued = static_cast<int>(v.queue_length());
      }
      auto [it, fresh] = out.try_emplace(s.to_string(), IntSeries(k_));
      it->second += e.series;
    }
    return out;
  }

  IntSeries total() const {
    IntSeries out(k_);
    for (const auto& [key, e] : dist_) out += e.series;
    return out;
  }

 private:
  struct Entry {
    RingState state;
    IntSeries series;
  };

  // Remaining distances in service order, with a mark for packets already
  // moving. This determines the future under GHP.
  static std::string signature(const RingState& s) {
    std::string out;
    for (RingNode v : s.nodes) {
      while (!v.empty()) {
        const Packet z = v.pop();
        out += std::to_string(z.remaining) + (z.traveled > 0 ? "i" : "e") + ",";
      }
      out += "|";
    }
    return out;
  }

  RingSpec spec_;
  int k_;
  std::map<std::string, Entry> dist_;
};

IntSeries unit(int k) {
  IntSeries s(k);
  s[0] = 1;
  return s;
}

IntSeries from_strings(const std::vector<std::string>& v, int k) {
  auto all = ref::big(v);
  all.resize(static_cast<std::size_t>(k + 1));
  return IntSeries(all);
}

struct Mode {
  bool compressed, symmetry;
};

const Mode kModes[] = {{false, false}, {true, false}, {false, true}, {true, true}};

}  // namespace

TEST(TaylorOracle, BruteForceAgreesSmallRings) {
  for (int n = 1; n <= 3; ++n)
    for (int L = 1; L <= 3; ++L)
      for (int k = 0; k <= 3; ++k) {
        const RingSpec spec = RingSpec::nonstandard(n, L, 0.0);
        const int steps = 4 * (k + 1) * (L + n);
        BruteForce bf(spec, k);
        bf.run(steps);
        ASSERT_EQ(bf.total(), unit(k));
        const auto want = bf.lumped();
        for (const Mode m : kModes) {
          TaylorOptions opt;
          opt.compressed = m.compressed;
          opt.symmetry = m.symmetry;
          const StateDist got = stationary_series(spec, k, opt);
          SCOPED_TRACE("N=" + std::to_string(n) + " L=" + std::to_string(L) + " k=" + std::to_string(k) +
                       " compressed=" + std::to_string(m.compressed) + " symmetry=" + std::to_string(m.symmetry));
          EXPECT_EQ(expected_queue_series(got), bf.expected_queue());
          for (const auto& [text, series] : want) EXPECT_EQ(got.probability(SymbolicState::parse(text)), series) << text;
          // The enumeration also keeps states that need more than k arrivals
          // to reach; their series vanish mod s^(k+1).
          std::set<std::string> listed;
          for (const auto& s : enumerate_states(spec, k)) listed.insert(s.to_string());
          for (const auto& [text, series] : want) EXPECT_TRUE(listed.count(text)) << text;
        }
      }
}

TEST(TaylorOracle, BruteForceAgreesAtFixedStep) {
  const RingSpec spec = RingSpec::standard(4, 0.0);
  BruteForce bf(spec, 3);
  bf.run(5);
  const StateDist got = propagate(spec, 3, 5);
  EXPECT_EQ(expected_queue_series(got), bf.expected_queue());
  for (const auto& [text, series] : bf.lumped()) EXPECT_EQ(got.probability(SymbolicState::parse(text)), series);
}

TEST(Taylor, ThreeNodeRingIsRational) {
  // p^2 / (2 - 3p) with p = 2s
  const RationalSeries closed = series_quotient({0, 0, 2}, {1, -3}, 8);
  TaylorOptions opt;
  opt.compressed = true;
  const IntSeries got = expected_queue_series(stationary_series(RingSpec::standard(3, 0.0), 8, opt));
  for (int d = 0; d <= 8; ++d) EXPECT_EQ(Rational(got[d]), closed[d]) << d;
}

TEST(Taylor, FourNodePublishedCoefficients) {
  TaylorOptions opt;
  opt.compressed = true;
  opt.symmetry = true;
  const StateDist dist = stationary_series(RingSpec::standard(4, 0.0), 6, opt);
  EXPECT_EQ(expected_queue_series(dist), from_strings(ref::kN4ExpectedQueue, 6));
  EXPECT_EQ(dist.probability(ground_state(4)), from_strings(ref::kN4AllEmpty, 6));
}

TEST(Taylor, ModesAgreeOnFourNodes) {
  const RingSpec spec = RingSpec::standard(4, 0.0);
  TaylorOptions plain;
  const StateDist base = stationary_series(spec, 4, plain);
  for (const Mode m : kModes) {
    TaylorOptions opt;
    opt.compressed = m.compressed;
    opt.symmetry = m.symmetry;
    const StateDist d = stationary_series(spec, 4, opt);
    EXPECT_EQ(expected_queue_series(d), expected_queue_series(base));
    for (const auto& s : enumerate_states(spec, 4)) EXPECT_EQ(d.probability(s), base.probability(s)) << s.to_string();
  }
}

TEST(Taylor, UncompressedQueryOnUncompressedDistribution) {
  const RingSpec spec = RingSpec::standard(3, 0.0);
  const StateDist d = stationary_series(spec, 4);
  // lumping over destinations of the single queued packet
  IntSeries sum(4);
  for (int dest = 1; dest <= 2; ++dest)
    sum += d.probability(SymbolicState::parse("1|1(" + std::to_string(dest) + ")-X-X"));
  EXPECT_EQ(sum, d.probability(SymbolicState::parse("1|1-X-X")));
  TaylorOptions opt;
  opt.compressed = true;
  EXPECT_THROW(stationary_series(spec, 2, opt).probability(SymbolicState::parse("1|1(2)-X-X")), DomainError);
}

TEST(Taylor, BigIntFallbackAgrees) {
  TaylorOptions opt;
  opt.compressed = true;
  opt.force_bigint = true;
  const StateDist a = stationary_series(RingSpec::standard(4, 0.0), 5, opt);
  opt.force_bigint = false;
  const StateDist b = stationary_series(RingSpec::standard(4, 0.0), 5, opt);
  EXPECT_EQ(a.states, b.states);
}

TEST(Taylor, ConservationAtEveryStep) {
  for (const Mode m : kModes) {
    TaylorOptions opt;
    opt.compressed = m.compressed;
    opt.symmetry = m.symmetry;
    int seen = 0;
    propagate(RingSpec::nonstandard(5, 3, 0.0), 4, 60, opt, [&](std::int64_t, const IntSeries& total) {
      ++seen;
      EXPECT_EQ(total, unit(4));
    });
    EXPECT_EQ(seen, 60);
  }
}

TEST(Taylor, ConvergenceIsReported) {
  const StateDist d = stationary_series(RingSpec::standard(3, 0.0), 4);
  EXPECT_TRUE(d.converged);
  EXPECT_GT(d.converged_at, 0);
  EXPECT_LT(d.converged_at, d.steps);
}

TEST(Taylor, ProductFormOnL2ButNotOnFourNodes) {
  const StateDist l2 = stationary_series(RingSpec::nonstandard(3, 2, 0.0), 5);
  for (const auto& s : enumerate_states(RingSpec::nonstandard(3, 2, 0.0), 5))
    EXPECT_FALSE(product_form_probe(l2, s).differ()) << s.to_string();
  TaylorOptions opt;
  opt.compressed = true;
  const StateDist n4 = stationary_series(RingSpec::standard(4, 0.0), 4, opt);
  int differ = 0;
  for (const auto& s : enumerate_states(RingSpec::standard(4, 0.0), 4)) differ += product_form_probe(n4, s).differ();
  EXPECT_GT(differ, 0);
}

TEST(Taylor, StateCapRefuses) {
  TaylorOptions opt;
  opt.state_cap = 50;
  EXPECT_THROW(stationary_series(RingSpec::standard(4, 0.0), 6, opt), StateCapExceeded);
  EXPECT_THROW(enumerate_states(RingSpec::standard(4, 0.0), 6, true, 50), StateCapExceeded);
}

TEST(Taylor, RejectsUnsupportedSpecs) {
  EXPECT_THROW(stationary_series(RingSpec::geometric(3, 0.1, 0.5), 2), DomainError);
  EXPECT_THROW(stationary_series(RingSpec::standard(3, 0.0, Protocol::fifo), 2), DomainError);
  EXPECT_THROW(stationary_series(RingSpec::standard(3, 0.0), -1), DomainError);
}

TEST(SymbolicState, ParseRoundTrip) {
  for (const std::string text : {"X-0|1-2|1", "X", "3|2-X-X-1|1", "1|2(1)-2|1(2,1)"}) {
    const auto s = SymbolicState::parse(text);
    EXPECT_EQ(s.to_string(), text);
    EXPECT_EQ(SymbolicState::from_key(s.key(), static_cast<int>(s.nodes.size()), s.compressed), s);
  }
  const auto s = SymbolicState::parse("1|2(1)-2|1(2,1)");
  EXPECT_FALSE(s.compressed);
  EXPECT_EQ(s.packets(), 5);
  EXPECT_EQ(s.total_queued(), 3);
  EXPECT_EQ(s.reversed().to_string(), "2|1(2,1)-1|2(1)");
  EXPECT_EQ(s.lumped().to_string(), "1|2-2|1");
}

TEST(SymbolicState, ParseErrors) {
  for (const std::string bad : {"", "Y", "1-2", "1|0", "a|b", "1|2(1", "2|1(1)-1|1"})
    EXPECT_THROW(SymbolicState::parse(bad), DomainError) << bad;
}

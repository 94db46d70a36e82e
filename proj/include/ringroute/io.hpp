#pragma once

// JSON and CSV views of library results.

#include <cstdint>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ringroute/analysis.hpp"
#include "ringroute/butterfly.hpp"
#include "ringroute/lyapunov.hpp"
#include "ringroute/series.hpp"
#include "ringroute/simulate.hpp"
#include "ringroute/taylor.hpp"

namespace ringroute {

using Json = nlohmann::ordered_json;

// Integers that fit in 64 bits become JSON numbers, larger ones strings.
inline Json big_to_json(const BigInt& x) {
  if (x >= std::numeric_limits<std::int64_t>::min() && x <= std::numeric_limits<std::int64_t>::max())
    return x.convert_to<std::int64_t>();
  return x.str();
}

// Series are arrays of decimal strings whatever their size.
inline Json series_to_json(const IntSeries& s) {
  Json a = Json::array();
  for (const auto& c : s.coeffs) a.push_back(c.str());
  return a;
}

// Accepts decimal strings or plain JSON integers.
inline IntSeries series_from_json(const Json& j) {
  require(j.is_array() && !j.empty(), "series must be a nonempty JSON array");
  std::vector<std::string> text;
  for (const auto& c : j) {
    require(c.is_string() || c.is_number_integer(), "series coefficients must be integers");
    text.push_back(c.is_string() ? c.get<std::string>() : c.dump());
  }
  return parse_int_series(text);
}

inline Json rational_to_json(const Rational& q) {
  if (denominator(q) == 1) return big_to_json(numerator(q));
  return to_string(q);
}

inline Json sim_to_json(const SimStats& s) {
  Json j;
  j["steps"] = s.steps;
  j["replications"] = s.replications;
  j["mean_queue"] = s.mean_queue;
  j["mean_queue_se"] = s.mean_queue_se;
  j["mean_packets"] = s.mean_packets;
  j["mean_packets_se"] = s.mean_packets_se;
  j["idle_fraction"] = s.idle_fraction;
  j["idle_fraction_se"] = s.idle_fraction_se;
  j["mean_delay"] = s.mean_delay;
  j["mean_delay_se"] = s.mean_delay_se;
  j["max_queue"] = s.max_queue;
  j["packets_histogram"] = s.histogram;
  j["warnings"] = s.warnings;
  return j;
}

inline Json pair_to_json(const ButterflyPair& p) {
  return Json{{"d", p.d}, {"pi_left", p.pi_left}, {"pi_right", p.pi_right}};
}

inline ButterflyPair pair_from_json(const Json& j) {
  ButterflyPair p;
  p.d = j.at("d").get<int>();
  p.pi_left = j.at("pi_left").get<std::vector<int>>();
  p.pi_right = j.at("pi_right").get<std::vector<int>>();
  p.validate();
  return p;
}

inline Json paths_to_json(const PathSet& ps) {
  Json a = Json::array();
  for (const auto& p : ps.paths) a.push_back(p);
  return a;
}

inline PathSet paths_from_json(const Json& j, int d) {
  PathSet ps;
  ps.d = d;
  for (const auto& p : j) ps.paths.push_back(p.get<std::vector<Label>>());
  return ps;
}

inline Json verify_to_json(const VerifyReport& r) {
  Json v = Json::array();
  for (const auto& x : r.violations)
    v.push_back({{"kind", x.kind}, {"path", x.path}, {"layer", x.layer}, {"label", x.label}, {"detail", x.detail}});
  return Json{{"ok", r.ok()}, {"violations", v}};
}

inline Json connectivity_to_json(const ConnectivityGraph& g) {
  Json edges = Json::array();
  for (std::size_t i = 0; i < g.left.size(); ++i)
    for (std::size_t j = 0; j < g.right.size(); ++j)
      if (g.edge(i, j)) edges.push_back({i, j, g.multiplicity[i][j]});
  const ConnectivityCheck c = check_connectivity(g);
  return Json{{"q", g.q},
              {"vertices_per_side", g.left.size()},
              {"components", g.components},
              {"edges", edges},
              {"regular", c.regular},
              {"complete_components", c.complete_components},
              {"equal_sides", c.equal_sides}};
}

inline Json drift_to_json(const DriftEstimate& d, const PhiParams& prm) {
  return Json{{"estimate", d.estimate},
              {"stderr", d.se},
              {"ci95", {d.ci_low(), d.ci_high()}},
              {"reps", d.replications},
              {"horizon", d.horizon},
              {"start", d.start},
              {"node", d.node},
              {"params", {{"N", prm.nodes}, {"r", prm.r}, {"delta", prm.delta}, {"r_hat", prm.r_hat()},
                          {"zeta", prm.zeta()}}}};
}

inline Json rationality_to_json(const RationalityResult& r) {
  Json a = Json::array();
  for (const auto& c : r.annihilator) a.push_back(big_to_json(c));
  return Json{{"alpha", r.alpha},       {"beta", r.beta},
              {"prime", r.prime},       {"rank_mod_p", r.rank_mod_p},
              {"full_rank", r.full_rank}, {"unlucky_prime", r.unlucky_prime},
              {"annihilator", a},       {"verified", r.verified}};
}

// StateDist dump:
//   {"format": "ringroute-statedist/1", "N", "L", "k", "compressed",
//    "symmetry", "steps", "converged", "converged_at",
//    "states": [{"state": "X-1|2-X", "series": ["0", "3", ...]}, ...]}
// States appear in the distribution's canonical order.
inline Json dist_to_json(const StateDist& d) {
  Json states = Json::array();
  for (const auto& [key, series] : d.states)
    states.push_back({{"state", SymbolicState::from_key(key, d.spec.nodes, d.compressed).to_string()},
                      {"series", series_to_json(series)}});
  return Json{{"format", "ringroute-statedist/1"},
              {"N", d.spec.nodes},
              {"L", d.spec.max_path},
              {"k", d.k},
              {"compressed", d.compressed},
              {"symmetry", d.symmetry},
              {"steps", d.steps},
              {"converged", d.converged},
              {"converged_at", d.converged_at},
              {"states", std::move(states)}};
}

inline StateDist dist_from_json(const Json& j) {
  require(j.value("format", std::string()) == "ringroute-statedist/1", "not a state distribution dump");
  StateDist d;
  d.spec = RingSpec::nonstandard(j.at("N").get<int>(), j.at("L").get<int>(), 0.0);
  d.k = j.at("k").get<int>();
  d.compressed = j.at("compressed").get<bool>();
  d.symmetry = j.at("symmetry").get<bool>();
  d.steps = j.at("steps").get<std::int64_t>();
  d.converged = j.at("converged").get<bool>();
  d.converged_at = j.at("converged_at").get<std::int64_t>();
  for (const auto& row : j.at("states")) {
    SymbolicState s = SymbolicState::parse(row.at("state").get<std::string>());
    require(static_cast<int>(s.nodes.size()) == d.spec.nodes, "state has the wrong node count");
    s.compressed = d.compressed;
    IntSeries series = series_from_json(row.at("series"));
    require(series.degree_bound() == d.k, "series length does not match k");
    d.states.emplace_back(s.key(), std::move(series));
  }
  return d;
}

struct Check {
  std::string name;
  bool pass = true;
  std::string detail;
};

inline Json checks_to_json(const std::vector<Check>& checks) {
  Json a = Json::array();
  for (const auto& c : checks) a.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  return a;
}

inline Json envelope(Json config, std::uint64_t seed, Json results, const std::vector<Check>& checks) {
  Json j;
  j["config"] = std::move(config);
  j["seed"] = seed;
  j["results"] = std::move(results);
  j["checks"] = checks_to_json(checks);
  return j;
}

inline std::string csv_field(const Json& v) {
  std::string s = v.is_string() ? v.get<std::string>() : v.dump();
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

// rows: array of arrays, header: column names.
inline void write_csv(std::ostream& os, const std::vector<std::string>& header, const Json& rows) {
  for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
  os << '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_field(row[i]);
    os << '\n';
  }
}

}  // namespace ringroute

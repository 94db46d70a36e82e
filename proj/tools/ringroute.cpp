// ringroute: command-line front end. Every subcommand prints a JSON envelope
// {config, seed, results, checks}; tabular results can be written as CSV.
// Exit codes: 0 all checks pass, 1 a check failed, 2 usage error.

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ringroute/analysis.hpp"
#include "ringroute/butterfly.hpp"
#include "ringroute/formulas.hpp"
#include "ringroute/io.hpp"
#include "ringroute/lyapunov.hpp"
#include "ringroute/ring.hpp"
#include "ringroute/simulate.hpp"
#include "ringroute/stats.hpp"
#include "ringroute/taylor.hpp"

using namespace ringroute;

namespace {

// JSON config files: nested objects name subcommands, leaves are option
// values. Only options not given on the command line are filled in.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConversionError("config is not valid JSON: " + std::string(e.what()));
    }
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void flatten(const nlohmann::json& j, std::vector<std::string> parents,
                      std::vector<CLI::ConfigItem>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it->is_object()) {
        auto p = parents;
        p.push_back(it.key());
        flatten(*it, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = it.key();
      if (it->is_array()) {
        for (const auto& v : *it) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(*it));
      }
      out.push_back(std::move(item));
    }
  }
};

struct Table {
  std::vector<std::string> header;
  Json rows = Json::array();
};

struct Output {
  Json results = Json::object();
  std::vector<Check> checks;
  std::optional<Table> table;
};

struct Globals {
  std::uint64_t seed = 1;
  std::string format = "json";
  std::string out;
  int workers = 0;
  bool verbose = false;
};

Json typed(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  return s;
}

// Echo of every option in the active subcommand chain with its final value.
void echo_options(const CLI::App* app, Json& into) {
  for (const CLI::Option* opt : app->get_options()) {
    const std::string name = opt->get_single_name();
    if (name == "help" || name == "config" || name == "h") continue;
    if (opt->get_expected_min() == 0) {
      into[name] = opt->count() > 0;
      continue;
    }
    std::vector<std::string> vals = opt->count() > 0 ? opt->results() : std::vector<std::string>{};
    const std::string def = opt->get_default_str();
    if (vals.empty() && !def.empty() && def != "{}" && def != "[]") vals.push_back(def);
    if (opt->get_expected_max() > 1) {
      Json a = Json::array();
      for (const auto& v : vals) a.push_back(typed(v));
      into[name] = a;
    } else if (!vals.empty()) {
      into[name] = typed(vals.back());
    } else {
      into[name] = nullptr;
    }
  }
}

Json echo_config(const CLI::App* leaf) {
  std::vector<const CLI::App*> chain;
  for (const CLI::App* a = leaf; a != nullptr; a = a->get_parent()) chain.push_back(a);
  Json cfg;
  std::string path;
  for (auto it = chain.rbegin(); it != chain.rend(); ++it) {
    if ((*it)->get_parent() != nullptr) path += (path.empty() ? "" : " ") + (*it)->get_name();
    echo_options(*it, cfg);
  }
  Json out;
  out["command"] = path;
  for (auto& [k, v] : cfg.items()) out[k] = v;
  return out;
}

std::int64_t count_arg(double v, const char* what) {
  require(v >= 0 && std::floor(v) == v && v < 9.0e18, std::string(what) + " must be a nonnegative integer");
  return static_cast<std::int64_t>(v);
}

Check check(std::string name, bool pass, std::string detail = {}) { return {std::move(name), pass, std::move(detail)}; }

std::string fmt(double x) {
  std::ostringstream os;
  os.precision(12);
  os << x;
  return os.str();
}

// ------------------------------------------------------------- ring specs

struct RingArgs {
  int N = 5;
  int L = 0;  // 0: N - 1
  double p = 0.1;
  double lambda = 0.0;
  double mu = 0.0;
  std::string protocol = "ghp";

  void add(CLI::App* app, bool geometric_ok = true) {
    app->add_option("--N", N, "number of nodes")->check(CLI::PositiveNumber);
    app->add_option("--L", L, "maximum path length (0 = N-1, the standard ring)")->check(CLI::NonNegativeNumber);
    app->add_option("--p", p, "arrival probability per node per step");
    app->add_option("--protocol", protocol, "ghp, fifo, epf, sis, cto, ftg or lis");
    if (geometric_ok) {
      app->add_option("--lambda", lambda, "geometric ring: arrival rate (selects the geometric ring)");
      app->add_option("--mu", mu, "geometric ring: departure rate");
    }
  }

  RingSpec spec() const {
    const Protocol proto = parse_protocol(protocol);
    RingSpec s = lambda > 0 ? RingSpec::geometric(N, lambda, mu, proto)
                            : RingSpec::nonstandard(N, L == 0 ? std::max(1, N - 1) : L, p, proto);
    s.validate();
    return s;
  }
};

Json spec_json(const RingSpec& s) {
  Json j{{"N", s.nodes}, {"L", s.max_path}, {"protocol", std::string(to_string(s.protocol))}};
  if (s.is_geometric()) {
    const auto& g = std::get<GeometricArrivals>(s.arrivals);
    j["lambda"] = g.lambda;
    j["mu"] = g.mu;
  } else {
    j["p"] = s.arrival_probability();
  }
  j["nominal_load"] = nominal_load(s);
  return j;
}

// --------------------------------------------------------------- simulate

struct SimulateCmd {
  RingArgs ring;
  double steps = 1e5;
  int reps = 10;
  double warmup = 1000;
  double stride = 64;
  int bins = 32;

  void add(CLI::App* app) {
    ring.add(app);
    app->add_option("--steps", steps, "measured steps per replication");
    app->add_option("--reps", reps, "replications")->check(CLI::PositiveNumber);
    app->add_option("--warmup", warmup, "steps discarded before measuring");
    app->add_option("--stride", stride, "histogram sampling stride in steps");
    app->add_option("--bins", bins, "histogram bins (last bin is open-ended)");
  }

  Output run(const Globals& g) const {
    const RingSpec spec = ring.spec();
    SimOptions opt;
    opt.steps = count_arg(steps, "steps");
    opt.replications = reps;
    opt.seed = g.seed;
    opt.warmup = count_arg(warmup, "warmup");
    opt.hist_stride = count_arg(stride, "stride");
    opt.hist_bins = bins;
    opt.workers = g.workers;
    const SimStats st = simulate(spec, opt);
    Output out;
    out.results["spec"] = spec_json(spec);
    out.results["stats"] = sim_to_json(st);
    Table t;
    t.header = {"packets", "count", "fraction"};
    std::int64_t total = 0;
    for (auto c : st.histogram) total += c;
    for (std::size_t i = 0; i < st.histogram.size(); ++i)
      t.rows.push_back({i, st.histogram[i], total ? static_cast<double>(st.histogram[i]) / total : 0.0});
    out.table = t;
    return out;
  }
};

// ----------------------------------------------------------------- taylor

struct TaylorCmd {
  int N = 4;
  int L = 0;
  int k = 6;
  bool compressed = false;
  bool symmetry = false;
  bool all_empty = false;
  std::vector<std::string> states;
  double steps = 0;
  double state_cap = 2e7;
  std::string dump;

  void add(CLI::App* app) {
    app->add_option("--N", N, "number of nodes")->check(CLI::PositiveNumber);
    app->add_option("--L", L, "maximum path length (0 = N-1)")->check(CLI::NonNegativeNumber);
    app->add_option("--k", k, "expansion degree")->check(CLI::NonNegativeNumber);
    app->add_flag("--compressed", compressed, "drop queued destinations (exact lumping)");
    app->add_flag("--symmetry", symmetry, "store one state per rotation class");
    app->add_flag("--all-empty", all_empty, "also report the series of the all-empty state");
    app->add_option("--state", states, "state to report, e.g. X-0|1-1|2 (repeatable)");
    app->add_option("--steps", steps, "propagate exactly this many steps instead of running to convergence");
    app->add_option("--state-cap", state_cap, "refuse to hold more states than this");
    app->add_option("--dump", dump, "write the full state distribution to this JSON file");
  }

  Output run(const Globals& g) const {
    const RingSpec spec = RingSpec::nonstandard(N, L == 0 ? std::max(1, N - 1) : L, 0.0);
    TaylorOptions opt;
    opt.compressed = compressed;
    opt.symmetry = symmetry;
    opt.state_cap = static_cast<std::size_t>(count_arg(state_cap, "state-cap"));
    IntSeries conservation_worst;
    bool conserved = true;
    auto start = std::chrono::steady_clock::now();
    StateDist dist;
    if (steps > 0) {
      dist = propagate(spec, k, count_arg(steps, "steps"), opt, [&](std::int64_t, const IntSeries& total) {
        for (int d = 0; d <= total.degree_bound(); ++d)
          if (total[d] != (d == 0 ? 1 : 0)) conserved = false;
      });
    } else {
      dist = stationary_series(spec, k, opt);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (g.verbose) std::cerr << "taylor: " << dist.size() << " states, " << secs << " s\n";

    IntSeries mass(k);
    for (const auto& [key, s] : dist.states) mass += s;
    IntSeries one(k);
    one[0] = 1;

    Output out;
    out.results["spec"] = {{"N", spec.nodes}, {"L", spec.max_path}, {"variable", "s = p/L"}};
    out.results["k"] = k;
    out.results["states"] = dist.size();
    out.results["steps"] = dist.steps;
    out.results["converged"] = dist.converged;
    out.results["converged_at"] = dist.converged_at;
    const IntSeries eq = expected_queue_series(dist);
    out.results["expected_queue"] = series_to_json(eq);
    out.results["expected_queue_total"] = series_to_json(expected_queue_total(dist));
    std::optional<IntSeries> ground;
    if (all_empty) {
      ground = dist.probability(ground_state(N, true));
      out.results["all_empty"] = series_to_json(*ground);
    }
    Json probs = Json::object();
    for (const auto& text : states) probs[text] = series_to_json(dist.probability(SymbolicState::parse(text)));
    if (!states.empty()) out.results["state_probabilities"] = probs;

    out.checks.push_back(check("mass conservation", mass == one && conserved,
                               conserved ? "sum of state series is 1" : "a propagation step lost mass"));
    if (steps <= 0) out.checks.push_back(check("converged", dist.converged));
    if (!dump.empty()) {
      std::ofstream f(dump);
      if (!f) throw std::runtime_error("cannot write " + dump);
      f << dist_to_json(dist).dump(1) << '\n';
      out.results["dump"] = dump;
    }

    Table t;
    t.header = {"degree", "expected_queue"};
    if (ground) t.header.push_back("all_empty");
    for (int d = 0; d <= k; ++d) {
      Json row{d, big_to_json(eq[d])};
      if (ground) row.push_back(big_to_json((*ground)[d]));
      t.rows.push_back(row);
    }
    out.table = t;
    return out;
  }
};

// --------------------------------------------------------------- formulas

struct FormulasCmd {
  std::string formula = "l2";
  bool exact = false;
  std::string p = "0.3";
  std::string a_hat = "0.2", d_hat = "0.5";
  std::string measure = "arrivals";
  int n = 10;
  int N = 3;
  int L = 2;
  std::string r = "0.5";
  std::string lambda;
  std::string ez, ez2;
  double beta = 2.0, P = 10.0;
  std::string tail = "upper";
  double A = 0.2173, B = 0.19664, C = 0.2173, D = 0.19664, delta = 0.0;
  double nodes_real = 2.0;
  int cap = 8;
  std::string eq = "0";

  void add(CLI::App* app) {
    app->add_option("--formula", formula,
                    "l2, birth-death, pk, one-node, little, chernoff, empty-slot, optimize-empty-slot, "
                    "traffic or balance");
    app->add_flag("--exact", exact, "evaluate with exact rationals where supported");
    app->add_option("--p", p, "arrival probability");
    app->add_option("--a-hat", a_hat, "birth-death arrival probability");
    app->add_option("--d-hat", d_hat, "birth-death departure probability");
    app->add_option("--measure", measure, "birth-death: arrivals or departures");
    app->add_option("--n", n, "list distributions up to this count");
    app->add_option("--N", N, "ring size (traffic, balance)");
    app->add_option("--L", L, "maximum path length");
    app->add_option("--r", r, "nominal load");
    app->add_option("--lambda", lambda, "P-K arrival rate");
    app->add_option("--ez", ez, "P-K mean service time (default uniform on 1..L)");
    app->add_option("--ez2", ez2, "P-K second moment of service time");
    app->add_option("--beta", beta, "Chernoff deviation ratio");
    app->add_option("--P", P, "Chernoff sum of means");
    app->add_option("--tail", tail, "Chernoff tail: upper or lower");
    app->add_option("--A", A, "empty-slot parameter A");
    app->add_option("--B", B, "empty-slot parameter B");
    app->add_option("--C", C, "empty-slot parameter C");
    app->add_option("--D", D, "empty-slot parameter D");
    app->add_option("--delta", delta, "empty-slot slack");
    app->add_option("--nodes", nodes_real, "empty-slot ring size");
    app->add_option("--cap", cap, "balance check queue cap");
    app->add_option("--eq", eq, "Little: expected queue length");
  }

  template <class T>
  static T num(const std::string& s);

  template <class T>
  static Json val(const T& x) {
    if constexpr (std::is_same_v<T, Rational>) {
      return Json{{"exact", to_string(x)}, {"value", to_double(x)}};
    } else {
      return x;
    }
  }

  template <class T>
  Output eval() const {
    Output out;
    auto& res = out.results;
    res["formula"] = formula;
    if (formula == "l2") {
      const T pp = num<T>(p);
      res["expected_queue"] = val(l2_expected_queue(pp));
      res["queue_variance"] = val(l2_queue_variance(pp));
      res["tail_ratio"] = val(l2_tail_ratio(pp));
      res["idle"] = val(l2_marginal(pp, 0));
      if constexpr (std::is_same_v<T, double>) res["queue_entropy"] = l2_queue_entropy(pp);
      Table t;
      t.header = {"n", "packets_prob", "queue_prob"};
      T sum(0);
      for (int i = 0; i <= n; ++i) {
        sum += l2_marginal(pp, i);
        t.rows.push_back({i, val(l2_marginal(pp, i)), val(l2_queue_marginal(pp, i))});
      }
      res["distribution"] = t.rows;
      out.table = t;
    } else if (formula == "birth-death") {
      const Measure m = measure == "departures" ? Measure::after_departures : Measure::after_arrivals;
      require(measure == "arrivals" || measure == "departures", "measure must be arrivals or departures");
      const auto bd = birth_death(num<T>(a_hat), num<T>(d_hat), m);
      res["A"] = val(bd.A);
      res["D"] = val(bd.D);
      res["expected_queue"] = val(bd.expected_queue);
      Table t;
      t.header = {"packets", "prob"};
      for (int i = 0; i <= n; ++i) t.rows.push_back({i, val(bd.pr(i))});
      res["distribution"] = t.rows;
      out.table = t;
    } else if (formula == "pk") {
      T a, b;
      if (!ez.empty()) {
        a = num<T>(ez);
        b = num<T>(ez2);
      } else {
        std::tie(a, b) = uniform_service_moments<T>(L);
      }
      const T lam = num<T>(lambda.empty() ? p : lambda);
      res["expected_queue"] = val(pk_queue(lam, a, b));
      res["ez"] = val(a);
      res["ez2"] = val(b);
    } else if (formula == "one-node") {
      const T rr = num<T>(r);
      const auto [a, b] = uniform_service_moments<T>(L);
      const T closed = one_node_queue(L, rr);
      const T pk = pk_queue(T(rr / a), a, b);
      res["closed_form"] = val(closed);
      res["pk"] = val(pk);
      const double diff = std::abs(to_double(T(closed - pk)));
      out.checks.push_back(check("P-K equals closed form", diff <= 1e-12, "difference " + fmt(diff)));
    } else if (formula == "little") {
      const auto lr = little_relations(num<T>(r), num<T>(eq));
      res["idle"] = val(lr.idle);
      res["packets"] = val(lr.total);
    } else if (formula == "traffic") {
      const auto sol = traffic_solve(ring_traffic_model<T>(N, L, num<T>(p)));
      Json rho = Json::array();
      for (const auto& x : sol.rho) rho.push_back(val(x));
      res["rho"] = rho;
      Json lam = Json::array();
      for (const auto& x : sol.lambda) lam.push_back(val(x));
      res["lambda"] = lam;
    } else if (formula == "balance") {
      require(L == 2, "the closed-form candidate law is for L = 2");
      const RingSpec spec = RingSpec::nonstandard(N, 2, to_double(num<T>(p)));
      const T pp = num<T>(p);
      const auto rep = balance_check<T>(
          spec, [&](const SymbolicState& s) { return l2_state_prob<T>(s, pp); }, cap, pp);
      res["states"] = rep.states;
      res["interior_states"] = rep.interior_states;
      res["max_residual"] = to_double(rep.max_residual);
      res["worst_state"] = rep.worst_state;
      res["boundary_residual"] = to_double(rep.boundary_residual);
      res["tail_bound"] = rep.tail_bound;
      out.checks.push_back(check("interior residual below tail bound", to_double(rep.max_residual) <= rep.tail_bound,
                                 fmt(to_double(rep.max_residual)) + " vs " + fmt(rep.tail_bound)));
    } else {
      throw DomainError("formula '" + formula + "' has no exact form; drop --exact");
    }
    return out;
  }

  Output run(const Globals&) const {
    if (formula == "chernoff") {
      require(tail == "upper" || tail == "lower", "tail must be upper or lower");
      const auto cb = chernoff_bound(beta, P, tail == "upper" ? Tail::upper : Tail::lower);
      Output out;
      out.results = {{"formula", formula}, {"exponent", cb.exponent}, {"bound", cb.bound}};
      return out;
    }
    if (formula == "empty-slot") {
      const double rr = std::stod(r);
      const double b = empty_slot_bound(A, B, C, D, rr, nodes_real, delta);
      Output out;
      out.results = {{"formula", formula},
                     {"gain", empty_slot_gain(A, B, C, D, rr)},
                     {"bound", b},
                     {"bound_times_N_over_2", b * nodes_real / 2}};
      return out;
    }
    if (formula == "optimize-empty-slot") {
      const auto o = optimize_empty_slot(std::stod(r));
      Output out;
      out.results = {{"formula", formula}, {"A", o.A}, {"B", o.B}, {"C", o.C}, {"D", o.D}, {"value", o.value}};
      return out;
    }
    return exact ? eval<Rational>() : eval<double>();
  }
};

template <>
double FormulasCmd::num<double>(const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos == s.size()) return v;
  } catch (const std::exception&) {
  }
  return to_double(parse_rational(s));
}

template <>
Rational FormulasCmd::num<Rational>(const std::string& s) {
  return parse_rational(s);
}

// ----------------------------------------------------------------- series

struct SeriesCmd {
  std::vector<std::string> coeffs;
  std::string coeffs_file;
  std::string series_key = "expected_queue";
  int taylor_N = 0;
  int k = 8;
  int alpha = -1, beta = -1, sum = -1;
  std::string prime = "m61";
  bool mono = false;
  int leading = 0;

  void add(CLI::App* app) {
    app->add_option("--coeffs", coeffs, "coefficients c0,c1,... (integers)")->delimiter(',');
    app->add_option("--coeffs-file", coeffs_file,
                    "JSON file: an array of decimal strings or a taylor result envelope");
    app->add_option("--series-key", series_key, "which series to read from a taylor envelope");
    app->add_option("--taylor-N", taylor_N, "compute the expected-queue series of the standard N-node ring instead");
    app->add_option("--k", k, "degree for --taylor-N");
    app->add_option("--alpha", alpha, "numerator degree bound");
    app->add_option("--beta", beta, "denominator degree bound");
    app->add_option("--sum", sum, "test every alpha + beta = sum");
    app->add_option("--prime", prime, "m61, m31 or an explicit prime");
    app->add_flag("--mono", mono, "absolute monotonicity verdict from coefficient signs");
    app->add_option("--leading", leading, "check the light-traffic s^2 coefficient for this N");
  }

  Output run(const Globals&) const {
    IntSeries s;
    if (taylor_N > 0) {
      TaylorOptions opt;
      opt.compressed = true;
      opt.symmetry = true;
      s = expected_queue_series(stationary_series(RingSpec::standard(taylor_N, 0.0), k, opt));
    } else if (!coeffs_file.empty()) {
      std::ifstream f(coeffs_file);
      if (!f) throw std::runtime_error("cannot read " + coeffs_file);
      const Json j = Json::parse(f);
      s = series_from_json(j.is_array() ? j : j.at("results").at(series_key));
    } else {
      require(!coeffs.empty(), "give --coeffs, --coeffs-file or --taylor-N");
      s = parse_int_series(coeffs);
    }
    std::uint64_t pr = kPrimeM61;
    if (prime == "m31") {
      pr = kPrimeM31;
    } else if (prime != "m61") {
      pr = std::stoull(prime);
    }
    Output out;
    out.results["coefficients"] = series_to_json(s);
    std::vector<std::pair<int, int>> tests;
    if (sum >= 0) {
      for (int a = 0; a <= sum; ++a) tests.push_back({a, sum - a});
    } else if (alpha >= 0 && beta >= 0) {
      tests.push_back({alpha, beta});
    }
    Table t;
    t.header = {"alpha", "beta", "prime", "rank_mod_p", "full_rank", "verified"};
    Json rat = Json::array();
    for (auto [a, b] : tests) {
      const auto r = rationality_test(s.coeffs, a, b, pr);
      rat.push_back(rationality_to_json(r));
      t.rows.push_back({a, b, pr, r.rank_mod_p, r.full_rank, r.verified});
      if (!r.full_rank)
        out.checks.push_back(check("annihilator verified (" + std::to_string(a) + "," + std::to_string(b) + ")",
                                   r.verified));
    }
    if (!tests.empty()) out.results["rationality"] = rat;
    if (mono) {
      const auto v = abso_mono_verdict(s);
      Json m{{"absolutely_monotone", v.pass}};
      if (v.witness) m["witness"] = {{"degree", v.witness->n}, {"coefficient", v.witness->value}};
      out.results["monotonicity"] = m;
    }
    if (leading > 0) {
      const auto lc = light_traffic_leading(s, leading);
      out.results["leading"] = {{"predicted", big_to_json(lc.predicted)}, {"actual", big_to_json(lc.actual)},
                                {"match", lc.match}};
      out.checks.push_back(check("light-traffic leading coefficient", lc.match));
    }
    if (!tests.empty()) out.table = t;
    return out;
  }
};

// ------------------------------------------------------------------ drift

struct DriftCmd {
  int N = 50;
  double r = 0.9;
  double delta = 0.0;
  double horizon = 200;
  int reps = 1000;
  int queue = -1;
  double target = 5.0;
  int node = -1;
  int trick_states = 0;
  bool expect_negative = false;

  void add(CLI::App* app) {
    app->add_option("--N", N, "ring size (standard ring)")->check(CLI::Range(2, 100000));
    app->add_option("--r", r, "nominal load; p = 2r/N");
    app->add_option("--delta", delta, "inflation parameter (0 = default rule)");
    app->add_option("--horizon", horizon, "steps per replication");
    app->add_option("--reps", reps, "replications");
    app->add_option("--queue", queue, "start with this many queued packets per node");
    app->add_option("--target", target, "otherwise start near Phi = target * N");
    app->add_option("--node", node, "track phi at this node instead of Phi");
    app->add_option("--trick-states", trick_states, "also check the trick inequality on this many states");
    app->add_flag("--expect-negative", expect_negative, "fail unless the 95% CI lies below 0");
  }

  Output run(const Globals& g) const {
    const RingSpec spec = RingSpec::standard(N, 2.0 * r / N);
    const PhiParams prm = phi_params(spec, delta > 0 ? std::optional<double>(delta) : std::nullopt);
    const RngStream fill{CounterRng(g.seed ^ 0x5eedULL), 0};
    RingState s = new_ring(spec);
    if (queue >= 0) {
      s = queued_state(spec, queue, fill);
    } else {
      // smallest uniform queue whose Phi is nearest target N
      double best = -1;
      for (int q = 0; q < 100000; ++q) {
        RingState c = queued_state(spec, q, fill);
        const double v = Phi(c, prm);
        if (best < 0 || std::abs(v - target * N) < best) {
          best = std::abs(v - target * N);
          s = c;
        }
        if (v >= target * N) break;
      }
    }
    Output out;
    const auto d = drift_probe(s, prm, count_arg(horizon, "horizon"), reps, g.seed, node, g.workers);
    out.results["drift"] = drift_to_json(d, prm);
    if (expect_negative)
      out.checks.push_back(check("drift CI below zero", d.ci_high() < 0, "upper " + fmt(d.ci_high())));
    if (trick_states > 0) {
      int failures = 0;
      std::string first;
      for (int i = 0; i < trick_states; ++i) {
        const double load = 0.1 + 1.8 * (i % 10) / 10.0;  // some loads beyond saturation
        const RingSpec sp = RingSpec::standard(N, load / N);
        const RingState st = reachable_state(sp, 1 + i % 400, RngStream{CounterRng(g.seed), static_cast<std::uint64_t>(i)});
        const auto tr = trick_check(st, prm);
        if (!tr.ok && failures++ == 0)
          first = "state " + std::to_string(i) + " node " + std::to_string(tr.node);
      }
      out.results["trick"] = {{"states", trick_states}, {"failures", failures}};
      out.checks.push_back(check("trick inequality", failures == 0, first));
    }
    return out;
  }
};

// -------------------------------------------------------------- butterfly

struct ButterflyCmd {
  int d = 3;
  std::vector<int> pi, sigma;
  std::string kind = "standard";
  // route
  std::vector<Label> A, B;
  std::vector<std::string> rho;
  std::string method = "subset";
  std::string paths_out;
  // verify
  std::string paths_in;
  // connectivity
  int q = -1;

  void add_pair(CLI::App* app) {
    app->add_option("--d", d, "dimension")->check(CLI::Range(0, 20));
    app->add_option("--pi", pi, "left layer order (bit per stage), comma separated")->delimiter(',');
    app->add_option("--sigma", sigma, "right layer order, comma separated")->delimiter(',');
    app->add_option("--kind", kind, "standard, benes, random or custom (uses --pi/--sigma)");
  }

  void add_route(CLI::App* app) {
    app->add_option("--A", A, "input nodes")->delimiter(',');
    app->add_option("--B", B, "output nodes")->delimiter(',');
    app->add_option("--rho", rho, "endpoint map a:b for permutation routing")->delimiter(',');
    app->add_option("--method", method, "subset, power, permutation or complement");
    app->add_option("--paths-out", paths_out, "also write the path set to this JSON file");
  }

  ButterflyPair pair(const Globals& g) const {
    ButterflyPair p;
    if (kind == "standard") {
      p = ButterflyPair::standard(d);
    } else if (kind == "benes") {
      p = ButterflyPair::benes(d);
    } else if (kind == "random") {
      std::mt19937_64 rng(g.seed);
      p = ButterflyPair::random(d, rng);
    } else if (kind == "custom") {
      p.d = d;
      p.pi_left = pi;
      p.pi_right = sigma;
    } else {
      throw DomainError("unknown butterfly kind: " + kind);
    }
    p.validate();
    return p;
  }

  Output route(const Globals& g) const {
    const ButterflyPair p = pair(g);
    Output out;
    out.results["pair"] = pair_to_json(p);
    PathSet ps;
    std::vector<Label> a = A, b = B;
    std::map<Label, Label> map;
    if (method == "permutation") {
      for (const auto& item : rho) {
        const auto colon = item.find(':');
        require(colon != std::string::npos, "rho entries look like a:b");
        map[static_cast<Label>(std::stoul(item.substr(0, colon)))] = static_cast<Label>(std::stoul(item.substr(colon + 1)));
      }
      require(map.size() == rho.size(), "rho repeats an input");
      a.clear();
      b.clear();
      for (auto [x, y] : map) {
        a.push_back(x);
        b.push_back(y);
      }
      try {
        ps = route_permutation_small(p, map);
      } catch (const HypothesisFailed& e) {
        out.results["refused"] = {{"reason", e.what()},
                                  {"bit", e.witness.bit},
                                  {"from", e.witness.from},
                                  {"to", e.witness.to}};
        out.checks.push_back(check("mid-layer connectivity hypothesis", false, e.what()));
        return out;
      }
    } else if (method == "power") {
      ps = route_power_of_two(p, a, b);
    } else if (method == "subset") {
      ps = route_subset(p, a, b);
    } else if (method == "complement") {
      const PathSet base = route_subset(p, a, b);
      ps = set_complement(p, base, a, b);
      std::set<Label> ua(a.begin(), a.end()), ub(b.begin(), b.end());
      a.clear();
      b.clear();
      for (Label x = 0; x < p.size(); ++x) {
        if (!ua.count(x)) a.push_back(x);
        if (!ub.count(x)) b.push_back(x);
      }
    } else {
      throw DomainError("unknown routing method: " + method);
    }
    const auto rep = verify_node_disjoint(p, ps, a, b, method == "permutation" ? &map : nullptr);
    out.results["paths"] = paths_to_json(ps);
    out.results["verify"] = verify_to_json(rep);
    out.checks.push_back(check("node-disjoint and valid", rep.ok()));
    if (!paths_out.empty()) {
      std::ofstream f(paths_out);
      require(f.good(), "cannot write " + paths_out);
      f << Json{{"pair", pair_to_json(p)}, {"paths", paths_to_json(ps)}}.dump(2) << '\n';
    }
    Table t;
    t.header = {"input", "output", "path"};
    for (const auto& path : ps.paths) {
      std::string s;
      for (std::size_t i = 0; i < path.size(); ++i) s += (i ? " " : "") + std::to_string(path[i]);
      t.rows.push_back({path.front(), path.back(), s});
    }
    out.table = t;
    return out;
  }

  Output verify(const Globals& g) const {
    std::ifstream f(paths_in);
    require(f.good(), "cannot read " + paths_in);
    Json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DomainError("path file is not valid JSON: " + std::string(e.what()));
    }
    if (j.contains("results")) j = j["results"];
    const ButterflyPair p = j.contains("pair") ? pair_from_json(j["pair"]) : pair(g);
    const PathSet ps = paths_from_json(j.contains("paths") ? j["paths"] : j, p.d);
    std::vector<Label> a = A, b = B;
    if (a.empty() && b.empty())
      for (const auto& path : ps.paths)
        if (!path.empty()) {
          a.push_back(path.front());
          b.push_back(path.back());
        }
    const auto rep = verify_node_disjoint(p, ps, a, b);
    Output out;
    out.results["pair"] = pair_to_json(p);
    out.results["verify"] = verify_to_json(rep);
    out.checks.push_back(check("node-disjoint and valid", rep.ok()));
    return out;
  }

  Output connectivity(const Globals& g) const {
    const ButterflyPair p = pair(g);
    Output out;
    out.results["pair"] = pair_to_json(p);
    Json graphs = Json::array();
    Table t;
    t.header = {"q", "components", "regular", "complete_components", "equal_sides", "refinement"};
    bool ok = true;
    for (int qq = (q < 0 ? 0 : q); qq <= (q < 0 ? p.d : q); ++qq) {
      const auto gr = connectivity_graph(p, qq);
      Json gj = connectivity_to_json(gr);
      Json ref = Json::array();
      if (qq >= 1)
        for (int c : refinement_case(p, qq)) ref.push_back(c);
      gj["refinement"] = ref;
      ok = ok && check_connectivity(gr).ok();
      const auto c = check_connectivity(gr);
      t.rows.push_back({qq, gr.components, c.regular, c.complete_components, c.equal_sides, ref.dump()});
      graphs.push_back(gj);
    }
    out.results["graphs"] = graphs;
    out.checks.push_back(check("connectivity invariants", ok));
    out.table = t;
    return out;
  }
};

// ---------------------------------------------------------------- compare

struct CompareCmd {
  bool l2 = false, pk = false, taylor = false;
  int N = 5;
  double p = 0.4;
  int L = 3;
  double r = 0.5;
  double steps = 1e6;
  int reps = 20;
  int k = 8;
  double stride = 64;

  void add(CLI::App* app) {
    app->add_flag("--l2", l2, "L = 2 ring: simulation against the product-form law");
    app->add_flag("--pk", pk, "one-node ring: simulation against the P-K mean queue");
    app->add_flag("--taylor", taylor, "L = 2 ring: exact Taylor series against the closed form");
    app->add_option("--N", N, "ring size");
    app->add_option("--p", p, "arrival probability (--l2)");
    app->add_option("--L", L, "maximum path length (--pk)");
    app->add_option("--r", r, "load (--pk)");
    app->add_option("--steps", steps, "measured steps per replication");
    app->add_option("--reps", reps, "replications");
    app->add_option("--k", k, "series degree (--taylor)");
    app->add_option("--stride", stride, "histogram sampling stride");
  }

  Output run(const Globals& g) const {
    require(l2 || pk || taylor, "choose at least one of --l2, --pk, --taylor");
    Output out;
    Table t;
    t.header = {"quantity", "closed_form", "observed", "tolerance", "pass"};
    auto row = [&](const std::string& q, const Json& closed, const Json& observed, const Json& tol, bool pass) {
      t.rows.push_back({q, closed, observed, tol, pass});
      out.checks.push_back(check(q, pass));
    };
    SimOptions opt;
    opt.steps = count_arg(steps, "steps");
    opt.replications = reps;
    opt.seed = g.seed;
    opt.workers = g.workers;
    opt.hist_stride = count_arg(stride, "stride");
    if (l2) {
      const RingSpec spec = RingSpec::nonstandard(N, 2, p);
      const SimStats st = simulate(spec, opt);
      const double eq = l2_expected_queue(p);
      row("L2 mean queue per node", eq, st.mean_queue, 3 * st.mean_queue_se,
          std::abs(st.mean_queue - eq) <= 3 * st.mean_queue_se);
      const double idle = l2_marginal(p, 0);
      row("L2 idle fraction", idle, st.idle_fraction, 3 * st.idle_fraction_se,
          std::abs(st.idle_fraction - idle) <= 3 * st.idle_fraction_se);
      std::vector<double> probs;
      for (std::size_t i = 0; i < st.histogram.size(); ++i) probs.push_back(l2_marginal(p, static_cast<int>(i)));
      const auto chi = chi_square_gof(st.histogram, probs);
      row("L2 packets-per-node chi-square p-value", "> 0.01", chi.p_value, 0.01, chi.p_value > 0.01);
      out.results["l2"] = {{"spec", spec_json(spec)}, {"stats", sim_to_json(st)},
                           {"chi_square", {{"statistic", chi.statistic}, {"dof", chi.dof}, {"p_value", chi.p_value}}}};
    }
    if (pk) {
      const double pp = 2 * r / (L + 1);
      const RingSpec spec = RingSpec::nonstandard(1, L, pp);
      const SimStats st = simulate(spec, opt);
      const double closed = one_node_queue(L, r);
      row("one-node mean queue (P-K)", closed, st.mean_queue, 3 * st.mean_queue_se,
          std::abs(st.mean_queue - closed) <= 3 * st.mean_queue_se);
      out.results["pk"] = {{"spec", spec_json(spec)}, {"stats", sim_to_json(st)}};
    }
    if (taylor) {
      // p^2 / (2 - 3p) with p = 2s is 2 s^2 / (1 - 3s)
      const RationalSeries closed = series_quotient({0, 0, 2}, {1, -3}, k);
      TaylorOptions topt;
      topt.compressed = true;
      topt.symmetry = true;
      const IntSeries exact = expected_queue_series(stationary_series(RingSpec::nonstandard(N, 2, 0.0), k, topt));
      bool same = true;
      Json c = Json::array(), e = Json::array();
      for (int d = 0; d <= k; ++d) {
        same = same && Rational(exact[d]) == closed[d];
        c.push_back(rational_to_json(closed[d]));
        e.push_back(big_to_json(exact[d]));
      }
      row("L2 expected queue series through degree " + std::to_string(k), c, e, 0, same);
    }
    out.results["verdicts"] = t.rows;
    out.table = t;
    return out;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ring routing, exact light-traffic series and butterfly routing toolkit"};
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON config file; command-line flags take precedence");

  Globals g;
  app.add_option("--seed", g.seed, "random seed");
  app.add_option("--format", g.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
  app.add_option("--out", g.out, "write output here instead of stdout");
  app.add_option("--workers", g.workers, "worker threads (0 = all cores); results do not depend on it");
  app.add_flag("-v,--verbose", g.verbose, "progress on stderr");

  SimulateCmd sim;
  TaylorCmd tay;
  FormulasCmd form;
  SeriesCmd ser;
  DriftCmd dr;
  ButterflyCmd bf;
  CompareCmd cmp;

  std::function<Output()> action;
  CLI::App* leaf = nullptr;
  auto bind = [&](CLI::App* sub, std::function<Output()> fn) {
    sub->callback([&, sub, fn] {
      leaf = sub;
      action = fn;
    });
  };

  auto* s_sim = app.add_subcommand("simulate", "Monte Carlo simulation of a ring");
  sim.add(s_sim);
  bind(s_sim, [&] { return sim.run(g); });

  auto* s_tay = app.add_subcommand("taylor", "exact Taylor coefficients of stationary quantities");
  tay.add(s_tay);
  bind(s_tay, [&] { return tay.run(g); });

  auto* s_form = app.add_subcommand("formulas", "closed-form evaluations");
  s_form->require_subcommand(1);
  auto* s_eval = s_form->add_subcommand("eval", "evaluate one formula");
  form.add(s_eval);
  bind(s_eval, [&] { return form.run(g); });

  auto* s_ser = app.add_subcommand("series", "rationality and monotonicity diagnostics on a coefficient list");
  ser.add(s_ser);
  bind(s_ser, [&] { return ser.run(g); });

  auto* s_dr = app.add_subcommand("drift", "potential-function drift and trick-inequality checks");
  dr.add(s_dr);
  bind(s_dr, [&] { return dr.run(g); });

  auto* s_bf = app.add_subcommand("butterfly", "node-disjoint routing on pairs of butterflies");
  s_bf->require_subcommand(1);
  bf.add_pair(s_bf);
  auto* s_route = s_bf->add_subcommand("route", "route A to B and verify");
  bf.add_route(s_route);
  bind(s_route, [&] { return bf.route(g); });
  auto* s_verify = s_bf->add_subcommand("verify", "verify a path set file");
  s_verify->add_option("--paths", bf.paths_in, "path set JSON (or a route envelope)")->required();
  s_verify->add_option("--A", bf.A, "input nodes (default: path starts)")->delimiter(',');
  s_verify->add_option("--B", bf.B, "output nodes (default: path ends)")->delimiter(',');
  bind(s_verify, [&] { return bf.verify(g); });
  auto* s_conn = s_bf->add_subcommand("connectivity", "sub-butterfly connectivity graphs and invariants");
  s_conn->add_option("--q", bf.q, "sub-butterfly dimension (-1 = all)");
  bind(s_conn, [&] { return bf.connectivity(g); });

  auto* s_cmp = app.add_subcommand("compare", "closed forms against simulation or exact series");
  cmp.add(s_cmp);
  bind(s_cmp, [&] { return cmp.run(g); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  Output out;
  try {
    out = action();
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const StateCapExceeded& e) {
    std::cerr << "refused: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 1;
  }

  bool pass = true;
  for (const auto& c : out.checks) pass = pass && c.pass;

  std::ofstream file;
  if (!g.out.empty()) {
    file.open(g.out);
    if (!file.good()) {
      std::cerr << "error: cannot write " << g.out << '\n';
      return 2;
    }
  }
  std::ostream& os = g.out.empty() ? std::cout : file;
  if (g.format == "csv") {
    if (!out.table) {
      std::cerr << "error: this command has no tabular output; use --format json\n";
      return 2;
    }
    write_csv(os, out.table->header, out.table->rows);
  } else {
    os << envelope(echo_config(leaf), g.seed, out.results, out.checks).dump(2) << '\n';
  }
  for (const auto& c : out.checks)
    if (!c.pass) std::cerr << "check failed: " << c.name << (c.detail.empty() ? "" : " (" + c.detail + ")") << '\n';
  return pass ? 0 : 1;
}

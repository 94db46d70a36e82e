#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "ringroute/error.hpp"
#include "ringroute/ring.hpp"
#include "ringroute/rng.hpp"

namespace ringroute {

struct SimOptions {
  std::int64_t steps = 100000;
  int replications = 10;
  std::uint64_t seed = 1;
  std::int64_t warmup = 1000;
  // Packets-at-node histogram is sampled every hist_stride measured steps
  // so the samples are close to independent.
  std::int64_t hist_stride = 64;
  int hist_bins = 32;  // last bin collects everything >= hist_bins - 1
  int workers = 0;     // 0 = hardware concurrency
};

struct ReplicationStats {
  double mean_queue = 0.0;    // per node
  double mean_packets = 0.0;  // per node
  double idle_fraction = 0.0;
  std::int64_t departures = 0;
  std::int64_t delay_sum = 0;
  std::int64_t max_queue = 0;
  std::vector<std::int64_t> histogram;
};

struct SimStats {
  double mean_queue = 0.0;
  double mean_queue_se = 0.0;
  double mean_packets = 0.0;
  double mean_packets_se = 0.0;
  double idle_fraction = 0.0;
  double idle_fraction_se = 0.0;
  double mean_delay = 0.0;
  double mean_delay_se = 0.0;
  std::int64_t max_queue = 0;
  int replications = 0;
  std::int64_t steps = 0;
  std::vector<std::int64_t> histogram;  // pooled over nodes and replications
  std::vector<ReplicationStats> per_replication;
  std::vector<std::string> warnings;
};

namespace detail {

class KahanSum {
 public:
  void add(double x) {
    const double y = x - c_;
    const double t = sum_ + y;
    c_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0;
  double c_ = 0.0;
};

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

template <class Get>
MeanSe mean_se(const std::vector<ReplicationStats>& reps, Get get) {
  KahanSum s;
  for (const auto& r : reps) s.add(get(r));
  const double n = static_cast<double>(reps.size());
  const double m = s.value() / n;
  if (reps.size() < 2) return {m, 0.0};
  KahanSum v;
  for (const auto& r : reps) v.add((get(r) - m) * (get(r) - m));
  return {m, std::sqrt(v.value() / (n - 1.0) / n)};
}

inline int worker_count(int requested, int jobs) {
  int w = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
  return std::clamp(w, 1, std::max(1, jobs));
}

// Runs job(i) for i in [0, n) across workers. Jobs write to disjoint slots,
// so the result does not depend on the worker count.
template <class Job>
void parallel_for(int n, int workers, Job job) {
  const int w = worker_count(workers, n);
  if (w == 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int k = 0; k < w; ++k)
    pool.emplace_back([=, &job] {
      for (int i = k; i < n; i += w) job(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

inline ReplicationStats run_replication(const RingSpec& spec, const SimOptions& opt,
                                        std::uint64_t replication) {
  RingState state = new_ring(spec);
  const RngStream rng{CounterRng(opt.seed), replication};
  const int n = spec.nodes;
  ReplicationStats out;
  out.histogram.assign(static_cast<std::size_t>(opt.hist_bins), 0);
  std::int64_t queued = 0, present = 0, idle = 0;
  for (std::int64_t t = 0; t < opt.warmup; ++t) step(state, rng);
  for (std::int64_t t = 0; t < opt.steps; ++t) {
    const StepReport rep = step(state, rng);
    out.departures += rep.departures;
    out.delay_sum += rep.delay_sum;
    const bool sample = opt.hist_stride > 0 && t % opt.hist_stride == 0;
    for (const RingNode& node : state.nodes) {
      const auto size = static_cast<std::int64_t>(node.size());
      present += size;
      if (size == 0) {
        ++idle;
      } else {
        queued += size - 1;
        out.max_queue = std::max(out.max_queue, size - 1);
      }
      if (sample)
        ++out.histogram[static_cast<std::size_t>(
            std::min<std::int64_t>(size, opt.hist_bins - 1))];
    }
  }
  const double denom = static_cast<double>(opt.steps) * n;
  out.mean_queue = static_cast<double>(queued) / denom;
  out.mean_packets = static_cast<double>(present) / denom;
  out.idle_fraction = static_cast<double>(idle) / denom;
  return out;
}

// Monte Carlo estimate of stationary per-node quantities. Measurements are
// taken after each step's arrivals. Replication i uses stream (seed, i).
inline SimStats simulate(const RingSpec& spec, const SimOptions& opt) {
  spec.validate();
  require(opt.steps > 0, "steps must be positive");
  require(opt.replications > 0, "replications must be positive");
  require(opt.warmup >= 0, "warmup must be nonnegative");
  require(opt.hist_bins >= 2, "histogram needs at least two bins");

  SimStats stats;
  if (nominal_load(spec) >= 1.0)
    stats.warnings.push_back("nominal load >= 1: the ring is not stable, means do not converge");

  stats.per_replication.resize(static_cast<std::size_t>(opt.replications));
  detail::parallel_for(opt.replications, opt.workers, [&](int i) {
    stats.per_replication[static_cast<std::size_t>(i)] =
        run_replication(spec, opt, static_cast<std::uint64_t>(i));
  });

  const auto& reps = stats.per_replication;
  auto q = detail::mean_se(reps, [](const ReplicationStats& r) { return r.mean_queue; });
  auto pk = detail::mean_se(reps, [](const ReplicationStats& r) { return r.mean_packets; });
  auto id = detail::mean_se(reps, [](const ReplicationStats& r) { return r.idle_fraction; });
  auto dl = detail::mean_se(reps, [](const ReplicationStats& r) {
    return r.departures > 0 ? static_cast<double>(r.delay_sum) / r.departures : 0.0;
  });
  stats.mean_queue = q.mean;
  stats.mean_queue_se = q.se;
  stats.mean_packets = pk.mean;
  stats.mean_packets_se = pk.se;
  stats.idle_fraction = id.mean;
  stats.idle_fraction_se = id.se;
  stats.mean_delay = dl.mean;
  stats.mean_delay_se = dl.se;
  stats.replications = opt.replications;
  stats.steps = opt.steps;
  stats.histogram.assign(static_cast<std::size_t>(opt.hist_bins), 0);
  for (const auto& r : reps) {
    stats.max_queue = std::max(stats.max_queue, r.max_queue);
    for (std::size_t b = 0; b < r.histogram.size(); ++b) stats.histogram[b] += r.histogram[b];
  }
  return stats;
}

struct SlopeEstimate {
  double slope = 0.0;  // packets per step
  double se = 0.0;
  int replications = 0;
  double ci_low() const { return slope - 1.96 * se; }
  double ci_high() const { return slope + 1.96 * se; }
};

// Least-squares slope of (x, y).
inline double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, "slope needs at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  require(sxx > 0, "slope needs distinct x values");
  return sxy / sxx;
}

// Growth rate of the total packet count. Each replication contributes one
// least-squares slope over its sampled trajectory; the standard error is
// taken across replications, which avoids trusting the strongly
// autocorrelated residuals inside a single trajectory.
inline SlopeEstimate growth_slope(const RingSpec& spec, std::int64_t steps, int replications,
                                  std::uint64_t seed, std::int64_t sample_every = 100,
                                  int workers = 0) {
  spec.validate();
  require(steps >= 2 * sample_every && sample_every > 0, "too few steps for a slope");
  require(replications >= 2, "slope CI needs at least two replications");
  std::vector<double> slopes(static_cast<std::size_t>(replications));
  detail::parallel_for(replications, workers, [&](int r) {
    RingState state = new_ring(spec);
    const RngStream rng{CounterRng(seed), static_cast<std::uint64_t>(r)};
    std::vector<double> xs, ys;
    for (std::int64_t t = 1; t <= steps; ++t) {
      step(state, rng);
      if (t % sample_every == 0) {
        xs.push_back(static_cast<double>(t));
        ys.push_back(static_cast<double>(state.in_system()));
      }
    }
    slopes[static_cast<std::size_t>(r)] = ls_slope(xs, ys);
  });
  detail::KahanSum s;
  for (double v : slopes) s.add(v);
  SlopeEstimate out;
  out.replications = replications;
  out.slope = s.value() / replications;
  double var = 0;
  for (double v : slopes) var += (v - out.slope) * (v - out.slope);
  out.se = std::sqrt(var / (replications - 1) / replications);
  return out;
}

}  // namespace ringroute

#pragma once

#include <functional>
#include <memory>
#include <thread>
#include <vector>

#include "stats.hpp"
#include "strategies.hpp"

namespace bml {

// KL divergence between Bernoulli(p) and Bernoulli(q), with 0 ln 0 = 0.
// Boundary q with p != q is infinite and reported as an error so callers
// must decide what an infinite rate means for them.
inline double kl_bernoulli(double p, double q) {
  if (!(p >= 0.0 && p <= 1.0) || !(q >= 0.0 && q <= 1.0))
    throw ConfigInvalid("kl: arguments must lie in [0,1]");
  if (p == q) return 0.0;
  if (q <= 0.0 || q >= 1.0)
    throw DivergenceInfinite("kl: infinite divergence against a deterministic channel");
  double t = 0.0;
  if (p > 0.0) t += p * std::log(p / q);
  if (p < 1.0) t += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  return t;
}

// Scale constant of the slowest achievable logarithmic loss growth:
//   bandwidth * sum over suboptimal channels of (theta* - theta_i) / D(theta_i || theta*).
// Requires a unique best channel; otherwise the constant is 0 and the report
// is flagged degenerate. Channels whose divergence is infinite (theta* = 1)
// contribute 0 and are listed.
struct LowerBoundReport {
  double value = 0.0;
  bool degenerate = false;
  std::vector<int> infinite_terms;
};

inline LowerBoundReport lower_bound_constant(const ThetaVector& theta, double bandwidth) {
  theta.validate();
  LowerBoundReport report;
  const int best = theta.best();
  for (int i = 0; i < theta.channels(); ++i)
    if (i != best && theta.p[i] == theta.p[best]) {
      report.degenerate = true;
      return report;
    }
  for (int i = 0; i < theta.channels(); ++i) {
    if (i == best) continue;
    try {
      report.value += bandwidth * (theta.p[best] - theta.p[i]) /
                      kl_bernoulli(theta.p[i], theta.p[best]);
    } catch (const DivergenceInfinite&) {
      report.infinite_terms.push_back(i);
    }
  }
  return report;
}

// One slot of one replication, as recorded by the optional trace.
struct SlotRecord {
  std::vector<SensingOutcome> outcomes;  // the sensed channels, ascending
};

struct SlotTrace {
  std::vector<SlotRecord> slots;
};

struct BlockResult {
  double bits = 0.0;
  std::vector<long> sense_count;  // per channel
  std::vector<long> free_count;
};

// Runs one block: every slot the strategy picks its channels, the channel
// states are drawn from the environment stream, and each free sensed channel
// carries `bandwidth` bits.
inline BlockResult run_block(Strategy& strategy, const ThetaVector& theta, long horizon,
                             double bandwidth, RngSeed env_seed, RngSeed strategy_seed,
                             SlotTrace* trace = nullptr) {
  theta.validate();
  if (horizon < 1) throw ConfigInvalid("horizon: must be >= 1");
  const int n = theta.channels();

  Xoshiro256 env(env_seed);
  Xoshiro256 srng(strategy_seed);
  strategy.begin_block(n, horizon);

  BlockResult result;
  result.sense_count.assign(n, 0);
  result.free_count.assign(n, 0);

  std::vector<std::uint8_t> z;
  std::vector<int> chosen;
  std::vector<SensingOutcome> outcomes;
  for (long j = 1; j <= horizon; ++j) {
    chosen.clear();
    strategy.choose(j, srng, chosen);
    if (static_cast<int>(chosen.size()) != strategy.width())
      throw ConfigInvalid("strategy returned the wrong number of channels");
    sample_slot(theta, env, z);
    std::sort(chosen.begin(), chosen.end());
    outcomes.clear();
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const int c = chosen[k];
      if (c < 0 || c >= n) throw ConfigInvalid("strategy chose a channel out of range");
      if (k > 0 && chosen[k - 1] == c)
        throw ConfigInvalid("strategy chose a channel twice in one slot");
      const bool free = z[c] != 0;
      outcomes.push_back({c, free});
      result.sense_count[c] += 1;
      if (free) {
        result.free_count[c] += 1;
        result.bits += bandwidth;
      }
    }
    strategy.observe(j, outcomes);
    if (trace) trace->slots.push_back({outcomes});
  }
  return result;
}

using StrategyFactory = std::function<std::unique_ptr<Strategy>()>;

struct MeasureOptions {
  int replications = 200;
  std::uint64_t seed = 1;
  int threads = 0;  // 0 picks the hardware concurrency
};

// Loss of a strategy against the clairvoyant value bandwidth * horizon *
// (sum of the width best availabilities), averaged over seeded replications.
struct LossReport {
  long horizon = 0;
  double genie_value = 0.0;            // mean over replications (varies in prior mode)
  double mean_bits = 0.0;
  double mean_loss = 0.0;
  double ci_half_width = 0.0;          // 95%, normal approximation
  std::vector<double> per_rep_loss;
  std::vector<double> mean_sense_count;  // per channel
};

namespace detail {

// Replication r always consumes streams composed from (seed, r), so results
// are identical for any thread count and adding replications never perturbs
// earlier ones. Reduction order over r is fixed.
template <class RunOne>
void run_replications(int replications, int threads, const RunOne& run_one) {
  if (threads <= 0) {
    const unsigned hc = std::thread::hardware_concurrency();
    threads = hc == 0 ? 1 : static_cast<int>(hc);
  }
  threads = std::min(threads, replications);
  if (threads <= 1) {
    for (int r = 0; r < replications; ++r) run_one(r);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (int r = t; r < replications; r += threads) run_one(r);
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

inline LossReport measure_loss(const StrategyFactory& factory, const ThetaVector& theta,
                               long horizon, double bandwidth, MeasureOptions options) {
  theta.validate();
  if (options.replications < 1) throw ConfigInvalid("replications: must be >= 1");
  const int n = theta.channels();
  const int width = factory()->width();
  const double genie = bandwidth * static_cast<double>(horizon) * theta.top_sum(width);

  const int reps = options.replications;
  std::vector<double> bits(reps);
  std::vector<std::vector<long>> senses(reps);
  detail::run_replications(reps, options.threads, [&](int r) {
    const auto strategy = factory();
    const BlockResult block = run_block(
        *strategy, theta, horizon, bandwidth,
        {options.seed, compose_stream(static_cast<std::uint64_t>(r), kEnvRole)},
        {options.seed, compose_stream(static_cast<std::uint64_t>(r), kStrategyRole)});
    bits[r] = block.bits;
    senses[r] = block.sense_count;
  });

  LossReport report;
  report.horizon = horizon;
  report.genie_value = genie;
  report.per_rep_loss.resize(reps);
  for (int r = 0; r < reps; ++r) report.per_rep_loss[r] = genie - bits[r];
  const MeanCi ci = mean_ci(report.per_rep_loss);
  report.mean_loss = ci.mean;
  report.ci_half_width = ci.half_width;
  report.mean_bits = genie - ci.mean;
  report.mean_sense_count.assign(n, 0.0);
  std::vector<double> scratch(reps);
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < reps; ++r) scratch[r] = static_cast<double>(senses[r][i]);
    report.mean_sense_count[i] = mean(scratch);
  }
  return report;
}

// Prior-mode variant: each replication first draws its availability vector
// from the prior (stream role 2), then plays against that draw; the loss is
// measured against the clairvoyant value of the realized vector.
inline LossReport measure_loss_bayes(const StrategyFactory& factory,
                                     const DiscretePrior& prior, long horizon,
                                     double bandwidth, MeasureOptions options) {
  prior.validate();
  if (options.replications < 1) throw ConfigInvalid("replications: must be >= 1");
  const int n = prior.channels();
  const int width = factory()->width();

  const int reps = options.replications;
  std::vector<double> bits(reps), genie(reps);
  std::vector<std::vector<long>> senses(reps);
  detail::run_replications(reps, options.threads, [&](int r) {
    Xoshiro256 draw(RngSeed{options.seed, compose_stream(static_cast<std::uint64_t>(r), kThetaDrawRole)});
    const ThetaVector theta = sample_theta(prior, draw).first;
    const auto strategy = factory();
    const BlockResult block = run_block(
        *strategy, theta, horizon, bandwidth,
        {options.seed, compose_stream(static_cast<std::uint64_t>(r), kEnvRole)},
        {options.seed, compose_stream(static_cast<std::uint64_t>(r), kStrategyRole)});
    bits[r] = block.bits;
    genie[r] = bandwidth * static_cast<double>(horizon) * theta.top_sum(width);
    senses[r] = block.sense_count;
  });

  LossReport report;
  report.horizon = horizon;
  report.genie_value = mean(genie);
  report.per_rep_loss.resize(reps);
  for (int r = 0; r < reps; ++r) report.per_rep_loss[r] = genie[r] - bits[r];
  const MeanCi ci = mean_ci(report.per_rep_loss);
  report.mean_loss = ci.mean;
  report.ci_half_width = ci.half_width;
  report.mean_bits = report.genie_value - ci.mean;
  report.mean_sense_count.assign(n, 0.0);
  std::vector<double> scratch(reps);
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < reps; ++r) scratch[r] = static_cast<double>(senses[r][i]);
    report.mean_sense_count[i] = mean(scratch);
  }
  return report;
}

}  // namespace bml

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <utility>
#include <vector>

#include "regret.hpp"

namespace bml {

// A symmetric randomized channel choice: every user samples its channel
// i.i.d. from p each slot.
struct MixedStrategy {
  std::vector<double> p;

  int channels() const { return static_cast<int>(p.size()); }

  void validate() const {
    if (p.empty()) throw ConfigInvalid("mixed strategy: needs at least one channel");
    double total = 0.0;
    for (double v : p) {
      if (!(v >= 0.0 && v <= 1.0))
        throw ConfigInvalid("mixed strategy: probabilities must lie in [0,1]");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw ConfigInvalid("mixed strategy: probabilities must sum to 1");
  }

  int sample(Xoshiro256& rng) const {
    const double u = rng.uniform01();
    double cum = 0.0;
    for (int i = 0; i < channels(); ++i) {
      cum += p[i];
      if (u < cum) return i;
    }
    return channels() - 1;
  }
};

struct KktSolution {
  MixedStrategy p;
  double lambda = 0.0;  // multiplier of the simplex constraint
};

// Throughput-optimal symmetric mixed strategy for K users:
//
//   p_i = max(0, 1 - (lambda / (K theta_i))^(1/(K-1))),  sum_i p_i = 1,
//
// with lambda found by monotone bisection on the simplex constraint over the
// bracket [0, K max theta]. Channels with theta_i = 0 get p_i = 0. K = 1
// degenerates to all mass on the best channel.
inline KktSolution kkt_optimal_mixed(const ThetaVector& theta, int users) {
  theta.validate();
  if (users < 1) throw ConfigInvalid("users: must be >= 1");
  const int n = theta.channels();
  if (theta.sum() == 0.0) throw AllChannelsBusy("every channel has zero availability");

  KktSolution out;
  out.p.p.assign(n, 0.0);
  if (users == 1) {
    const int best = theta.best();
    out.p.p[best] = 1.0;
    out.lambda = theta.p[best];
    return out;
  }

  const double exponent = 1.0 / (users - 1);
  const auto fill = [&](double lambda, std::vector<double>& p) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      p[i] = 0.0;
      if (theta.p[i] > 0.0) {
        const double v = 1.0 - std::pow(lambda / (users * theta.p[i]), exponent);
        if (v > 0.0) p[i] = v;
      }
      total += p[i];
    }
    return total;
  };

  double lo = 0.0;
  double hi = users * *std::max_element(theta.p.begin(), theta.p.end());
  std::vector<double> p(n);
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double total = fill(mid, p);
    if (std::abs(total - 1.0) <= 1e-12) {
      lo = hi = mid;
      break;
    }
    (total > 1.0 ? lo : hi) = mid;
  }
  out.lambda = 0.5 * (lo + hi);
  fill(out.lambda, out.p.p);
  return out;
}

// Closed-form per-user and total throughput when all K users play the mixed
// strategy p, plus the loss against centralized scheduling of all channels:
//
//   W  = B T sum_i (theta_i / K) (1 - (1-p_i)^K)     per user
//   L  = B T sum_i theta_i (1-p_i)^K                 total
//
// per_user_loss = L / K is the shortfall against an even centralized share.
struct ThroughputReport {
  double per_user_bits = 0.0;
  double total_bits = 0.0;
  double centralized_total = 0.0;
  double total_loss = 0.0;
  double per_user_loss = 0.0;
};

inline ThroughputReport symmetric_throughput(const ThetaVector& theta, int users,
                                             const MixedStrategy& mixed, long horizon,
                                             double bandwidth) {
  theta.validate();
  mixed.validate();
  if (users < 1) throw ConfigInvalid("users: must be >= 1");
  if (mixed.channels() != theta.channels())
    throw ConfigInvalid("mixed strategy: channel count does not match theta");
  const double bt = bandwidth * static_cast<double>(horizon);
  ThroughputReport report;
  for (int i = 0; i < theta.channels(); ++i) {
    const double miss = std::pow(1.0 - mixed.p[i], users);
    report.per_user_bits += bt * theta.p[i] / users * (1.0 - miss);
    report.total_loss += bt * theta.p[i] * miss;
  }
  report.total_bits = users * report.per_user_bits;
  report.centralized_total = bt * theta.sum();
  report.per_user_loss = report.total_loss / users;
  return report;
}

// The unique symmetric equilibrium fractions: tau_i proportional to theta_i.
inline std::vector<double> nash_fractions(const ThetaVector& theta) {
  theta.validate();
  const double total = theta.sum();
  if (total == 0.0) throw AllChannelsBusy("every channel has zero availability");
  std::vector<double> tau(theta.p.size());
  for (std::size_t i = 0; i < theta.p.size(); ++i) tau[i] = theta.p[i] / total;
  return tau;
}

// At the equilibrium allocation every user wins a slot with probability
// sum(theta) / K, independent of its channel.
inline double nash_win_probability(const ThetaVector& theta, int users) {
  if (users < 1) throw ConfigInvalid("users: must be >= 1");
  return theta.sum() / users;
}

// Integer allocation closest to fractions * users: floors plus largest
// remainders, ties to the lower index.
inline std::vector<int> round_allocation(std::span<const double> fractions, int users) {
  const int n = static_cast<int>(fractions.size());
  std::vector<int> alloc(n);
  std::vector<std::pair<double, int>> remainder(n);
  int assigned = 0;
  for (int i = 0; i < n; ++i) {
    const double share = fractions[i] * users;
    alloc[i] = static_cast<int>(std::floor(share));
    assigned += alloc[i];
    remainder[i] = {share - alloc[i], i};
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < users - assigned; ++k) alloc[remainder[k].second] += 1;
  return alloc;
}

// Per-slot win probability of one user before and after a unilateral move,
// all other users frozen on the integer allocation. `allocation[i]` counts
// the users on channel i including the deviator on `from_channel`.
struct DeviationGain {
  double before = 0.0;
  double after = 0.0;
  double gain = 0.0;
};

inline DeviationGain deviation_gain(const ThetaVector& theta,
                                    std::span<const int> allocation, int from_channel,
                                    int to_channel) {
  theta.validate();
  if (static_cast<int>(allocation.size()) != theta.channels())
    throw ConfigInvalid("allocation: channel count does not match theta");
  if (from_channel == to_channel)
    throw ConfigInvalid("deviation: target must differ from the current channel");
  if (allocation[from_channel] < 1)
    throw ConfigInvalid("deviation: no user on the source channel");
  DeviationGain d;
  d.before = theta.p[from_channel] / allocation[from_channel];
  d.after = theta.p[to_channel] / (allocation[to_channel] + 1);
  d.gain = d.after - d.before;
  return d;
}

// Winner per channel after one slot of contention: every contender on a free
// channel draws a uniform backoff, the minimum wins. Busy or uncontended
// channels get winner -1; a lone contender wins without a draw.
struct ContentionOutcome {
  std::vector<int> winner;
};

inline ContentionOutcome contention_resolve(const std::vector<std::vector<int>>& contenders,
                                            const std::vector<std::uint8_t>& free,
                                            Xoshiro256& rng) {
  if (contenders.size() != free.size())
    throw ConfigInvalid("contention: contender lists and free flags differ in length");
  ContentionOutcome outcome;
  outcome.winner.assign(contenders.size(), -1);
  for (std::size_t i = 0; i < contenders.size(); ++i) {
    if (!free[i] || contenders[i].empty()) continue;
    if (contenders[i].size() == 1) {
      outcome.winner[i] = contenders[i][0];
      continue;
    }
    int best = contenders[i][0];
    double lowest = rng.uniform01();
    for (std::size_t k = 1; k < contenders[i].size(); ++k) {
      const double draw = rng.uniform01();
      if (draw < lowest) {
        lowest = draw;
        best = contenders[i][k];
      }
    }
    outcome.winner[i] = best;
  }
  return outcome;
}

// Per-user decision rule in the contention game.
class UserStrategy {
 public:
  virtual ~UserStrategy() = default;
  virtual void begin_block(int channels, long horizon, int users, int user_index) = 0;
  virtual int choose(long slot, Xoshiro256& rng) = 0;
  virtual void observe(long slot, int channel, bool free, bool won) = 0;
};

class FixedMixedUser : public UserStrategy {
 public:
  explicit FixedMixedUser(MixedStrategy mixed) : mixed_(std::move(mixed)) {
    mixed_.validate();
  }

  void begin_block(int channels, long, int, int) override {
    if (channels != mixed_.channels())
      throw ConfigInvalid("mixed strategy: channel count mismatch");
  }

  int choose(long, Xoshiro256& rng) override { return mixed_.sample(rng); }

  void observe(long, int, bool, bool) override {}

 private:
  MixedStrategy mixed_;
};

class GenieUser : public UserStrategy {
 public:
  explicit GenieUser(ThetaVector theta) : theta_(std::move(theta)) { theta_.validate(); }

  void begin_block(int channels, long, int, int) override {
    if (channels != theta_.channels()) throw ConfigInvalid("genie: channel count mismatch");
    chosen_ = -1;
  }

  int choose(long, Xoshiro256& rng) override {
    if (chosen_ < 0) {
      detail::argmax_set(theta_.p, ties_);
      chosen_ = detail::uniform_pick(ties_, rng);
    }
    return chosen_;
  }

  void observe(long, int, bool, bool) override {}

 private:
  ThetaVector theta_;
  std::vector<int> ties_;
  int chosen_ = -1;
};

namespace detail {

// Shared bookkeeping of the adaptive rules: an initialization sweep that
// senses every channel once (staggered by user index so users do not pile
// onto one channel) and forces X_i = 1 regardless of the outcome, then
// ordinary counting. The forced 1 keeps every estimate positive.
class AdaptiveUserBase : public UserStrategy {
 public:
  void begin_block(int channels, long horizon, int users, int user_index) override {
    counts_ = ObservationCounts(channels);
    horizon_ = horizon;
    users_ = users;
    user_index_ = user_index;
    estimate_.assign(channels, 1.0);
  }

  void observe(long slot, int channel, bool free, bool) override {
    if (slot <= counts_.channels()) {
      counts_.free_count[channel] = 1;
      counts_.sense_count[channel] = 1;
    } else {
      counts_.record(channel, free);
    }
    estimate_[channel] = static_cast<double>(counts_.free_count[channel]) /
                         static_cast<double>(counts_.sense_count[channel]);
  }

 protected:
  bool in_init(long slot) const { return slot <= counts_.channels(); }

  int init_channel(long slot) const {
    return static_cast<int>((slot - 1 + user_index_) % counts_.channels());
  }

  // Samples a channel with probability proportional to the estimates.
  int sample_proportional(Xoshiro256& rng) const {
    double total = 0.0;
    for (double e : estimate_) total += e;
    const double u = rng.uniform01() * total;
    double cum = 0.0;
    for (int i = 0; i < static_cast<int>(estimate_.size()); ++i) {
      cum += estimate_[i];
      if (u < cum) return i;
    }
    return static_cast<int>(estimate_.size()) - 1;
  }

  ObservationCounts counts_;
  std::vector<double> estimate_;
  long horizon_ = 0;
  int users_ = 0;
  int user_index_ = 0;
};

}  // namespace detail

// Adaptive play toward the equilibrium fractions: after the initialization
// sweep, sample each slot's channel proportionally to the availability
// estimates X/Y.
class FrequencyMatchUser : public detail::AdaptiveUserBase {
 public:
  int choose(long slot, Xoshiro256& rng) override {
    if (in_init(slot)) return init_channel(slot);
    return sample_proportional(rng);
  }
};

// Adaptive play toward the throughput-optimal allocation: proportional
// sampling while slot < ceil(ln horizon), then sampling from the
// KKT-optimal mixed strategy recomputed from the current estimates, plus
// uniform exploration at the vanishing rate 1/sqrt(slot). The exploration
// term is load-bearing: the optimal allocation can put exactly zero mass on
// a channel, and a user that stops sensing a channel would freeze a bad
// estimate permanently. Sampling every channel ~sqrt(T) times keeps the
// estimates consistent while perturbing the long-run frequencies by O(1/sqrt(T)).
class AdaptiveKktUser : public detail::AdaptiveUserBase {
 public:
  void begin_block(int channels, long horizon, int users, int user_index) override {
    AdaptiveUserBase::begin_block(channels, horizon, users, user_index);
    boundary_ = static_cast<long>(std::ceil(std::log(static_cast<double>(horizon))));
  }

  int choose(long slot, Xoshiro256& rng) override {
    if (in_init(slot)) return init_channel(slot);
    if (slot < boundary_) return sample_proportional(rng);
    if (rng.uniform01() * std::sqrt(static_cast<double>(slot)) < 1.0)
      return static_cast<int>(rng.below(static_cast<std::uint64_t>(counts_.channels())));
    const KktSolution sol = kkt_optimal_mixed(ThetaVector(estimate_), users_);
    return sol.p.sample(rng);
  }

 private:
  long boundary_ = 0;
};

struct MultiBlockResult {
  std::vector<double> per_user_bits;
  std::vector<long> selection_count;  // per channel, summed over users
  double total_bits = 0.0;
  double centralized_total = 0.0;     // B T sum(theta), or the top-K sum when K < N
  double loss = 0.0;
};

// One block of the K-user contention game. All users see the same channel
// states; each slot every user picks a channel, free channels go to the
// backoff winner, and only the winner transmits.
inline MultiBlockResult run_multiuser_block(const ThetaVector& theta, double bandwidth,
                                            long horizon,
                                            std::span<const std::unique_ptr<UserStrategy>> users,
                                            std::uint64_t seed, std::uint64_t replication,
                                            SlotTrace* trace = nullptr) {
  theta.validate();
  if (horizon < 1) throw ConfigInvalid("horizon: must be >= 1");
  if (users.empty()) throw ConfigInvalid("users: need at least one strategy");
  const int n = theta.channels();
  const int k = static_cast<int>(users.size());

  Xoshiro256 env(RngSeed{seed, compose_stream(replication, kEnvRole)});
  Xoshiro256 backoff(RngSeed{seed, compose_stream(replication, kContentionRole)});
  std::vector<Xoshiro256> user_rng;
  user_rng.reserve(k);
  for (int u = 0; u < k; ++u)
    user_rng.emplace_back(RngSeed{seed, compose_stream(replication, kUserRole0 + u)});
  for (int u = 0; u < k; ++u) users[u]->begin_block(n, horizon, k, u);

  MultiBlockResult result;
  result.per_user_bits.assign(k, 0.0);
  result.selection_count.assign(n, 0);

  std::vector<std::uint8_t> z;
  std::vector<int> choice(k);
  std::vector<std::vector<int>> contenders(n);
  for (long j = 1; j <= horizon; ++j) {
    sample_slot(theta, env, z);
    for (auto& c : contenders) c.clear();
    for (int u = 0; u < k; ++u) {
      const int c = users[u]->choose(j, user_rng[u]);
      if (c < 0 || c >= n) throw ConfigInvalid("user strategy chose a channel out of range");
      choice[u] = c;
      contenders[c].push_back(u);
      result.selection_count[c] += 1;
    }
    const ContentionOutcome outcome = contention_resolve(contenders, z, backoff);
    if (trace) trace->slots.push_back({});
    for (int u = 0; u < k; ++u) {
      const int c = choice[u];
      const bool free = z[c] != 0;
      const bool won = outcome.winner[c] == u;
      if (free && won) {
        result.per_user_bits[u] += bandwidth;
        result.total_bits += bandwidth;
      }
      if (trace) trace->slots.back().outcomes.push_back({c, free});
      users[u]->observe(j, c, free, won);
    }
  }

  const double ceiling = k >= n ? theta.sum() : theta.top_sum(k);
  result.centralized_total = bandwidth * static_cast<double>(horizon) * ceiling;
  result.loss = result.centralized_total - result.total_bits;
  return result;
}

using UserStrategyFactory = std::function<std::unique_ptr<UserStrategy>(int user_index)>;

// Replication summary of the contention game. Selection frequencies
// aggregate over users, slots, and replications.
struct MultiUserReport {
  long horizon = 0;
  int users = 0;
  double mean_per_user_bits = 0.0;     // user average, then replication mean
  double per_user_ci_half_width = 0.0;
  std::vector<double> per_user_mean_bits;
  std::vector<double> selection_frequency;
  double mean_total_bits = 0.0;
  double centralized_total = 0.0;
  double mean_loss = 0.0;
  double loss_ci_half_width = 0.0;
};

inline MultiUserReport measure_multiuser(const UserStrategyFactory& factory,
                                         const ThetaVector& theta, int users, long horizon,
                                         double bandwidth, MeasureOptions options) {
  theta.validate();
  if (users < 1) throw ConfigInvalid("users: must be >= 1");
  if (options.replications < 1) throw ConfigInvalid("replications: must be >= 1");
  const int reps = options.replications;
  const int n = theta.channels();

  std::vector<double> user_avg(reps), total(reps), loss(reps);
  std::vector<std::vector<double>> per_user(reps);
  std::vector<std::vector<long>> selections(reps);
  double centralized = 0.0;
  detail::run_replications(reps, options.threads, [&](int r) {
    std::vector<std::unique_ptr<UserStrategy>> strategies;
    strategies.reserve(users);
    for (int u = 0; u < users; ++u) strategies.push_back(factory(u));
    const MultiBlockResult block = run_multiuser_block(
        theta, bandwidth, horizon, strategies, options.seed,
        static_cast<std::uint64_t>(r));
    per_user[r] = block.per_user_bits;
    user_avg[r] = mean(block.per_user_bits);
    total[r] = block.total_bits;
    loss[r] = block.loss;
    selections[r] = block.selection_count;
    if (r == 0) centralized = block.centralized_total;
  });

  MultiUserReport report;
  report.horizon = horizon;
  report.users = users;
  const MeanCi wci = mean_ci(user_avg);
  report.mean_per_user_bits = wci.mean;
  report.per_user_ci_half_width = wci.half_width;
  report.per_user_mean_bits.assign(users, 0.0);
  std::vector<double> scratch(reps);
  for (int u = 0; u < users; ++u) {
    for (int r = 0; r < reps; ++r) scratch[r] = per_user[r][u];
    report.per_user_mean_bits[u] = mean(scratch);
  }
  report.selection_frequency.assign(n, 0.0);
  const double denom = static_cast<double>(users) * static_cast<double>(horizon) *
                       static_cast<double>(reps);
  for (int i = 0; i < n; ++i) {
    long count = 0;
    for (int r = 0; r < reps; ++r) count += selections[r][i];
    report.selection_frequency[i] = static_cast<double>(count) / denom;
  }
  report.mean_total_bits = mean(total);
  report.centralized_total = centralized;
  const MeanCi lci = mean_ci(loss);
  report.mean_loss = lci.mean;
  report.loss_ci_half_width = lci.half_width;
  return report;
}

// Exponential decay rates of the total loss in the number of users: c1 for
// the throughput-optimal allocation with Q positive channels, c2 for the
// equilibrium allocation. c2 <= c1 always; a single positive channel decays
// faster than any exponential and reports infinity.
inline double optimal_decay_rate(const ThetaVector& theta) {
  theta.validate();
  int positive = 0;
  for (double v : theta.p)
    if (v > 0.0) ++positive;
  if (positive == 0) throw AllChannelsBusy("every channel has zero availability");
  if (positive == 1) return std::numeric_limits<double>::infinity();
  return std::log(static_cast<double>(positive) / (positive - 1));
}

inline double nash_decay_rate(const ThetaVector& theta) {
  theta.validate();
  const double total = theta.sum();
  if (total == 0.0) throw AllChannelsBusy("every channel has zero availability");
  double min_positive = std::numeric_limits<double>::infinity();
  int positive = 0;
  for (double v : theta.p)
    if (v > 0.0) {
      ++positive;
      min_positive = std::min(min_positive, v);
    }
  if (positive == 1) return std::numeric_limits<double>::infinity();
  return std::log(total / (total - min_positive));
}

// Closed-form summary of both allocations plus the adaptive-play targets.
struct EquilibriumReport {
  KktSolution kkt;
  std::vector<double> nash_tau;
  double nash_win_prob = 0.0;
  ThroughputReport kkt_throughput;
  ThroughputReport nash_throughput;
  double c1 = 0.0;
  double c2 = 0.0;
  // Best per-slot win-probability change a lone deviator to a pure channel
  // can achieve against everyone else playing the KKT mixed strategy.
  double kkt_best_deviation_gain = 0.0;
};

inline EquilibriumReport equilibrium_report(const ThetaVector& theta, int users,
                                            long horizon, double bandwidth) {
  EquilibriumReport report;
  report.kkt = kkt_optimal_mixed(theta, users);
  report.nash_tau = nash_fractions(theta);
  report.nash_win_prob = nash_win_probability(theta, users);
  report.kkt_throughput = symmetric_throughput(theta, users, report.kkt.p, horizon, bandwidth);
  MixedStrategy nash;
  nash.p = report.nash_tau;
  report.nash_throughput = symmetric_throughput(theta, users, nash, horizon, bandwidth);
  report.c1 = optimal_decay_rate(theta);
  report.c2 = nash_decay_rate(theta);

  const int n = theta.channels();
  double before = 0.0;
  for (int i = 0; i < n; ++i)
    before += theta.p[i] / users * (1.0 - std::pow(1.0 - report.kkt.p.p[i], users));
  double best_after = 0.0;
  for (int c = 0; c < n; ++c) {
    const double pc = report.kkt.p.p[c];
    const double after =
        pc > 0.0
            ? theta.p[c] * (1.0 - std::pow(1.0 - pc, users)) / (users * pc)
            : theta.p[c];
    best_after = std::max(best_after, after);
  }
  report.kkt_best_deviation_gain = best_after - before;
  return report;
}

}  // namespace bml

#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "model.hpp"

namespace bml {

// Key of one planning state: remaining horizon followed by the per-channel
// (X_i, Y_i) counts.
struct DpStateKey {
  std::vector<std::int32_t> v;

  bool operator==(const DpStateKey&) const = default;
};

struct DpStateKeyHash {
  std::size_t operator()(const DpStateKey& k) const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::int32_t x : k.v) {
      h ^= static_cast<std::uint32_t>(x);
      h *= 0x100000001B3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

inline DpStateKey make_state_key(const ObservationCounts& counts, long remaining) {
  DpStateKey key;
  key.v.reserve(1 + 2 * counts.channels());
  key.v.push_back(static_cast<std::int32_t>(remaining));
  for (int i = 0; i < counts.channels(); ++i) {
    key.v.push_back(static_cast<std::int32_t>(counts.free_count[i]));
    key.v.push_back(static_cast<std::int32_t>(counts.sense_count[i]));
  }
  return key;
}

struct ActionQuery {
  int channel = 0;          // lowest-index optimal channel
  std::vector<int> ties;    // every optimal channel, ascending
};

// Expected-bits-to-go for every count state reachable under optimal play,
// keyed by (counts, remaining horizon), together with the full argmax set.
template <class S>
class ValueTable {
 public:
  struct Entry {
    S value;
    std::uint32_t ties = 0;  // bit i set when channel i attains the value
  };

  long horizon = 0;
  int channels = 0;
  S bandwidth{};
  std::unordered_map<DpStateKey, Entry, DpStateKeyHash> states;

  const Entry& at(const ObservationCounts& counts, long remaining) const {
    const auto it = states.find(make_state_key(counts, remaining));
    if (it == states.end())
      throw UnknownState("value table: state not reachable under optimal play");
    return it->second;
  }

  // Throws UnknownState for unreached states and for remaining == 0, where
  // no action exists.
  ActionQuery optimal_action(const ObservationCounts& counts, long remaining) const {
    const Entry& e = at(counts, remaining);
    if (e.ties == 0)
      throw UnknownState("value table: no action at the end of the block");
    ActionQuery q;
    for (int i = 0; i < channels; ++i)
      if (e.ties & (1u << i)) q.ties.push_back(i);
    q.channel = q.ties.front();
    return q;
  }
};

struct DpOptions {
  std::size_t state_cap = 5'000'000;
};

template <class S>
struct DpResult {
  S value{};
  ValueTable<S> table;
};

namespace detail {

template <class S>
class DpBuilder {
 public:
  DpBuilder(ValueTable<S>& table, const S& bandwidth, std::size_t cap)
      : table_(table), bandwidth_(bandwidth), cap_(cap) {}

  // Backward induction over count states. The posterior rides along the
  // recursion, so each state's mixture is updated once per branch; states
  // reached by different sensing orders coincide (exchangeability) and are
  // served from the table.
  S solve(const BasicPrior<S>& posterior, ObservationCounts& counts, long remaining) {
    const DpStateKey key = make_state_key(counts, remaining);
    if (const auto it = table_.states.find(key); it != table_.states.end())
      return it->second.value;
    if (table_.states.size() >= cap_)
      throw StateSpaceExceeded("planning state cap exceeded (" +
                               std::to_string(cap_) + " states)");
    if (remaining == 0) {
      table_.states.emplace(key, typename ValueTable<S>::Entry{S(0), 0});
      return S(0);
    }

    const int n = counts.channels();
    std::vector<S> value(n);
    for (int i = 0; i < n; ++i) {
      const S p = expected_availability(posterior, i);
      S v = p * bandwidth_;
      if (p > S(0)) {
        const BasicPrior<S> next = posterior_update(posterior, i, true);
        counts.free_count[i] += 1;
        counts.sense_count[i] += 1;
        v += p * solve(next, counts, remaining - 1);
        counts.free_count[i] -= 1;
        counts.sense_count[i] -= 1;
      }
      if (p < S(1)) {
        const BasicPrior<S> next = posterior_update(posterior, i, false);
        counts.sense_count[i] += 1;
        v += (S(1) - p) * solve(next, counts, remaining - 1);
        counts.sense_count[i] -= 1;
      }
      value[i] = v;
    }

    int best = 0;
    for (int i = 1; i < n; ++i)
      if (value[i] > value[best]) best = i;
    std::uint32_t ties = 0;
    for (int i = 0; i < n; ++i)
      if (scalar_traits<S>::close(value[i], value[best])) ties |= 1u << i;

    table_.states.emplace(key, typename ValueTable<S>::Entry{value[best], ties});
    return value[best];
  }

 private:
  ValueTable<S>& table_;
  S bandwidth_;
  std::size_t cap_;
};

}  // namespace detail

// Optimal expected bits over a block of `horizon` slots, starting from the
// given prior, together with the table of every state visited.
template <class S>
DpResult<S> optimal_value(const BasicPrior<S>& prior, long horizon, S bandwidth,
                          DpOptions options = {}) {
  prior.validate();
  if (horizon < 0) throw ConfigInvalid("horizon: must be nonnegative");
  if (prior.channels() > 31)
    throw ConfigInvalid("planning supports at most 31 channels");
  DpResult<S> result;
  result.table.horizon = horizon;
  result.table.channels = prior.channels();
  result.table.bandwidth = bandwidth;
  detail::DpBuilder<S> builder(result.table, bandwidth, options.state_cap);
  ObservationCounts counts(prior.channels());
  result.value = builder.solve(prior, counts, horizon);
  return result;
}

// Channels whose mixture-mean availability attains the maximum.
template <class S>
std::vector<int> myopic_tie_set(const BasicPrior<S>& prior) {
  const std::vector<S> avail = expected_availability_all(prior);
  int best = 0;
  for (int i = 1; i < prior.channels(); ++i)
    if (avail[i] > avail[best]) best = i;
  std::vector<int> ties;
  for (int i = 0; i < prior.channels(); ++i)
    if (scalar_traits<S>::close(avail[i], avail[best])) ties.push_back(i);
  return ties;
}

// One-shot greedy action; ties break uniformly through the caller's stream.
inline int myopic_bayes_action(const DiscretePrior& prior, Xoshiro256& rng) {
  const std::vector<int> ties = myopic_tie_set(prior);
  return ties[rng.below(ties.size())];
}

// Expected bits when the user fixes the channel with the best prior mean for
// the whole block and never updates. The baseline a planning gain is quoted
// against.
template <class S>
S myopic_value(const BasicPrior<S>& prior, long horizon, S bandwidth) {
  const std::vector<S> avail = expected_availability_all(prior);
  S best = avail[0];
  for (const S& v : avail)
    if (v > best) best = v;
  return S(horizon) * bandwidth * best;
}

namespace detail {

// Posterior mean availability of a single unknown channel for every count
// state (x free out of y senses), plus a reachability flag. Entry [y][x].
template <class S>
struct SingleChannelMeans {
  std::vector<std::vector<S>> mean;
  std::vector<std::vector<bool>> ok;

  SingleChannelMeans(const BasicPrior<S>& marginal, long depth) {
    mean.resize(depth + 1);
    ok.resize(depth + 1);
    for (long y = 0; y <= depth; ++y) {
      mean[y].resize(y + 1, S(0));
      ok[y].resize(y + 1, false);
      for (long x = 0; x <= y; ++x) {
        ObservationCounts c(1);
        c.free_count[0] = x;
        c.sense_count[0] = y;
        try {
          const BasicPrior<S> post = posterior_from_counts(marginal, c);
          mean[y][x] = expected_availability(post, 0);
          ok[y][x] = true;
        } catch (const ZeroLikelihood&) {
          // Count state impossible under the prior; never visited.
        }
      }
    }
  }
};

}  // namespace detail

// Highest sustainable per-slot rate of an unknown channel when play must
// start there and leaving is final within a block of `horizon` slots:
//
//   max over stopping rules of  E[ sum_{j<=M} Z(j) ] / E[ M ],  1 <= M <= horizon.
//
// A block strategy with one known channel senses the unknown channel first
// exactly when the known rate is below this number. Computed as the root of
// F(lambda) = max over rules of E[ sum (Z(j) - lambda) ] by Dinkelbach
// iteration (lambda <- achieved ratio of the current best rule), which is
// exact for exact scalars and a 1e-14 fixed point for floats.
template <class S>
S stopping_index(const BasicPrior<S>& marginal, long horizon) {
  marginal.validate();
  if (marginal.channels() != 1)
    throw ConfigInvalid("stopping index: expects the marginal prior of one channel");
  if (horizon < 1) throw ConfigInvalid("horizon: must be >= 1");

  const detail::SingleChannelMeans<S> post(marginal, horizon);

  struct Node {
    S gain, reward, length;  // of the best rule from this state, given continue
  };

  S lambda = post.mean[0][0];  // ratio of the stop-immediately rule
  for (int iteration = 0; iteration < 256; ++iteration) {
    // Backward pass: value of continuing at (x, y), with the option to stop
    // after any later observation. Stopping contributes nothing.
    std::vector<Node> next(static_cast<std::size_t>(horizon) + 1);
    std::vector<Node> cur;
    for (long y = horizon - 1; y >= 0; --y) {
      cur.assign(static_cast<std::size_t>(y) + 1, Node{S(0), S(0), S(0)});
      for (long x = 0; x <= y; ++x) {
        if (!post.ok[y][x]) continue;
        const S p = post.mean[y][x];
        Node n{p - lambda, p, S(1)};
        if (y + 1 < horizon) {
          if (p > S(0) && post.ok[y + 1][x + 1] && next[x + 1].gain > S(0)) {
            n.gain += p * next[x + 1].gain;
            n.reward += p * next[x + 1].reward;
            n.length += p * next[x + 1].length;
          }
          if (p < S(1) && post.ok[y + 1][x] && next[x].gain > S(0)) {
            n.gain += (S(1) - p) * next[x].gain;
            n.reward += (S(1) - p) * next[x].reward;
            n.length += (S(1) - p) * next[x].length;
          }
        }
        cur[x] = n;
      }
      next.swap(cur);
    }

    const S achieved = next[0].reward / next[0].length;
    if constexpr (scalar_traits<S>::exact) {
      if (achieved == lambda) return lambda;
    } else {
      if (std::abs(to_double(achieved) - to_double(lambda)) <= 1e-14)
        return achieved;
    }
    lambda = achieved;
  }
  return lambda;
}

struct GittinsOptions {
  double truncation_eps = 1e-9;   // tail weight alpha^T dropped by truncation
  double bisection_tol = 1e-12;
};

// Discounted analogue of the stopping rate:
//
//   max over stopping rules of  E[ sum_{j<=M} alpha^j Z(j) ] / E[ sum_{j<=M} alpha^j ].
//
// The horizon is truncated at the first T with alpha^T < truncation_eps,
// which perturbs the result by O(truncation_eps / (1 - alpha)). The value is
// found by bisecting the rate lambda of a calibrating known channel until
// starting on the unknown channel is exactly break-even.
inline double gittins_index(const DiscretePrior& marginal, double alpha,
                            GittinsOptions options = {}) {
  marginal.validate();
  if (marginal.channels() != 1)
    throw ConfigInvalid("discounted index: expects the marginal prior of one channel");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw ConfigInvalid("discount: must lie strictly inside (0,1)");
  if (!(options.truncation_eps > 0.0 && options.truncation_eps < 1.0))
    throw ConfigInvalid("truncation_eps: must lie in (0,1)");

  const long depth = std::max<long>(
      1, static_cast<long>(std::ceil(std::log(options.truncation_eps) / std::log(alpha))));
  const detail::SingleChannelMeans<double> post(marginal, depth);

  // Break-even gain of being forced to sense once more at (0,0), all rewards
  // measured against the calibrating rate lambda and discounted one slot.
  const auto root_gain = [&](double lambda) {
    std::vector<double> next(static_cast<std::size_t>(depth) + 1, 0.0);
    std::vector<double> cur;
    for (long y = depth - 1; y >= 0; --y) {
      cur.assign(static_cast<std::size_t>(y) + 1, 0.0);
      for (long x = 0; x <= y; ++x) {
        if (!post.ok[y][x]) continue;
        const double p = post.mean[y][x];
        double v = p - lambda;
        if (y + 1 < depth) {
          if (p > 0 && post.ok[y + 1][x + 1]) v += p * std::max(0.0, next[x + 1]);
          if (p < 1 && post.ok[y + 1][x]) v += (1 - p) * std::max(0.0, next[x]);
        }
        cur[x] = alpha * v;
      }
      next.swap(cur);
    }
    return next[0];
  };

  double lo = 0.0, hi = 1.0;
  while (hi - lo > options.bisection_tol) {
    const double mid = 0.5 * (lo + hi);
    (root_gain(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Exactly one of the two fields selects the flavor of channel index.
struct IndexQuery {
  std::optional<long> horizon;    // block stopping rate
  std::optional<double> discount; // discounted rate
  GittinsOptions gittins = {};
};

inline double index_value(const DiscretePrior& marginal, const IndexQuery& query) {
  if (query.horizon.has_value() == query.discount.has_value())
    throw ConfigInvalid("index query: set exactly one of horizon and discount");
  if (query.horizon) return stopping_index(marginal, *query.horizon);
  return gittins_index(marginal, *query.discount, query.gittins);
}

// Two channels whose availability pair is (a,b) with weight xi and (b,a)
// with weight 1-xi, a > b: the optimal first action is the posterior
// argmax. `tie` marks xi == 1/2, where both channels are optimal and
// simulations randomize.
struct SymmetricAction {
  int channel = 0;
  bool tie = false;
};

inline SymmetricAction symmetric_two_channel_action(double xi) {
  if (!(xi >= 0.0 && xi <= 1.0)) throw ConfigInvalid("xi: must lie in [0,1]");
  if (xi > 0.5) return {0, false};
  if (xi < 0.5) return {1, false};
  return {0, true};
}

}  // namespace bml

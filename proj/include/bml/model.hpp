#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rational.hpp"
#include "rng.hpp"

namespace bml {

// Channels are 0-based throughout the library; files and printed reports use
// 1-based channel numbers.

// Per-channel availability probabilities. One slot on a free channel carries
// `bandwidth` bits; a busy channel carries nothing.
struct ThetaVector {
  std::vector<double> p;

  ThetaVector() = default;
  explicit ThetaVector(std::vector<double> probs) : p(std::move(probs)) {}

  int channels() const { return static_cast<int>(p.size()); }

  void validate() const {
    if (p.empty()) throw ConfigInvalid("theta: needs at least one channel");
    for (double v : p)
      if (!(v >= 0.0 && v <= 1.0))
        throw ConfigInvalid("theta: entries must lie in [0,1]");
  }

  // Lowest-index argmax.
  int best() const {
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }

  double sum() const { return std::accumulate(p.begin(), p.end(), 0.0); }

  // Sum of the m largest entries; the clairvoyant per-slot ceiling for a
  // width-m user.
  double top_sum(int m) const {
    std::vector<double> s(p);
    std::sort(s.begin(), s.end(), std::greater<>());
    double t = 0.0;
    for (int i = 0; i < m && i < static_cast<int>(s.size()); ++i) t += s[i];
    return t;
  }

  bool operator==(const ThetaVector&) const = default;
};

struct SensingOutcome {
  int channel = 0;
  bool free = false;

  bool operator==(const SensingOutcome&) const = default;
};

// Sufficient statistics of a sensing history: X_i = free observations of
// channel i, Y_i = times channel i was sensed. Always X_i <= Y_i.
struct ObservationCounts {
  std::vector<long> free_count;   // X
  std::vector<long> sense_count;  // Y

  ObservationCounts() = default;
  explicit ObservationCounts(int channels)
      : free_count(channels, 0), sense_count(channels, 0) {}

  int channels() const { return static_cast<int>(sense_count.size()); }

  void record(int channel, bool free) {
    sense_count.at(channel) += 1;
    if (free) free_count.at(channel) += 1;
  }

  long total_senses() const {
    return std::accumulate(sense_count.begin(), sense_count.end(), 0L);
  }

  void validate() const {
    if (free_count.size() != sense_count.size())
      throw ConfigInvalid("counts: X and Y must have the same length");
    for (std::size_t i = 0; i < sense_count.size(); ++i)
      if (free_count[i] < 0 || sense_count[i] < free_count[i])
        throw ConfigInvalid("counts: need 0 <= X_i <= Y_i");
  }

  bool operator==(const ObservationCounts&) const = default;
};

// Ordered sensing record; slots strictly increase, and the channels within
// one slot are distinct.
struct HistoryStep {
  long slot = 0;
  std::vector<SensingOutcome> outcomes;

  bool operator==(const HistoryStep&) const = default;
};

struct History {
  std::vector<HistoryStep> steps;

  void append(long slot, std::vector<SensingOutcome> outcomes) {
    if (!steps.empty() && slot <= steps.back().slot)
      throw ConfigInvalid("history: slots must strictly increase");
    for (std::size_t a = 0; a < outcomes.size(); ++a)
      for (std::size_t b = a + 1; b < outcomes.size(); ++b)
        if (outcomes[a].channel == outcomes[b].channel)
          throw ConfigInvalid("history: duplicate channel within a slot");
    steps.push_back({slot, std::move(outcomes)});
  }

  ObservationCounts to_counts(int channels) const {
    ObservationCounts c(channels);
    for (const auto& step : steps)
      for (const auto& o : step.outcomes) c.record(o.channel, o.free);
    return c;
  }
};

// Finite mixture of point masses over availability vectors: atom a is a full
// vector (theta_a1..theta_aN) carrying weight w_a, so posterior updates stay
// inside the family and are exact.
//
// For floating-point scalars the weights are maintained in log space (the
// authoritative store is logw) so that posteriors survive arbitrarily long
// observation sequences; `weights` always mirrors them as normalized linear
// values. Exact scalars keep normalized linear weights only.
template <class S>
struct BasicPrior {
  std::vector<std::vector<S>> atoms;
  std::vector<S> weights;
  std::vector<double> logw;  // floating-point instantiations only

  static constexpr bool is_exact = scalar_traits<S>::exact;

  int size() const { return static_cast<int>(atoms.size()); }
  int channels() const { return atoms.empty() ? 0 : static_cast<int>(atoms[0].size()); }

  void validate() const {
    if (atoms.empty()) throw ConfigInvalid("prior: needs at least one atom");
    const std::size_t n = atoms[0].size();
    if (n == 0) throw ConfigInvalid("prior: atoms need at least one channel");
    for (const auto& atom : atoms) {
      if (atom.size() != n) throw ConfigInvalid("prior: atoms must have equal length");
      for (const S& th : atom)
        if (th < S(0) || th > S(1))
          throw ConfigInvalid("prior: atom entries must lie in [0,1]");
    }
    if (weights.size() != atoms.size())
      throw ConfigInvalid("prior: one weight per atom required");
    S total(0);
    for (const S& w : weights) {
      if (w < S(0)) throw ConfigInvalid("prior: weights must be nonnegative");
      total += w;
    }
    if (!scalar_traits<S>::close(total, S(1)))
      throw ConfigInvalid("prior: weights must sum to 1");
  }

  // Renormalizes and, for floating scalars, refreshes logw from the linear
  // weights. Used by the constructors; posterior updates keep both in sync.
  void normalize() {
    if constexpr (is_exact) {
      S total(0);
      for (const S& w : weights) total += w;
      if (total == S(0)) throw ZeroLikelihood("prior: all weights are zero");
      for (S& w : weights) w /= total;
    } else {
      logw.resize(weights.size());
      for (std::size_t a = 0; a < weights.size(); ++a)
        logw[a] = weights[a] > 0 ? std::log(weights[a])
                                 : -std::numeric_limits<double>::infinity();
      renormalize_from_logs();
    }
  }

  void renormalize_from_logs() {
    static_assert(!is_exact);
    const double hi = *std::max_element(logw.begin(), logw.end());
    if (!(hi > -std::numeric_limits<double>::infinity()))
      throw ZeroLikelihood("prior: all weights are zero");
    double sum = 0.0;
    for (double lw : logw) sum += std::exp(lw - hi);
    const double lse = hi + std::log(sum);
    weights.resize(logw.size());
    for (std::size_t a = 0; a < logw.size(); ++a) {
      logw[a] -= lse;
      weights[a] = std::exp(logw[a]);
    }
  }

  bool operator==(const BasicPrior& o) const {
    return atoms == o.atoms && weights == o.weights;
  }
};

using DiscretePrior = BasicPrior<double>;
using RationalPrior = BasicPrior<Rational>;

template <class S>
BasicPrior<S> make_prior(std::vector<std::vector<S>> atoms, std::vector<S> weights) {
  BasicPrior<S> prior;
  prior.atoms = std::move(atoms);
  prior.weights = std::move(weights);
  prior.validate();
  prior.normalize();
  return prior;
}

inline DiscretePrior to_double_prior(const RationalPrior& p) {
  std::vector<std::vector<double>> atoms(p.atoms.size());
  std::vector<double> weights(p.weights.size());
  for (std::size_t a = 0; a < p.atoms.size(); ++a) {
    atoms[a].reserve(p.atoms[a].size());
    for (const Rational& th : p.atoms[a]) atoms[a].push_back(to_double(th));
    weights[a] = to_double(p.weights[a]);
  }
  return make_prior<double>(std::move(atoms), std::move(weights));
}

// Point prior concentrated on one availability vector.
inline DiscretePrior point_prior(const ThetaVector& theta) {
  return make_prior<double>({theta.p}, {1.0});
}

// Mixture mean of the availability of one channel.
template <class S>
S expected_availability(const BasicPrior<S>& prior, int channel) {
  S v(0);
  for (int a = 0; a < prior.size(); ++a)
    v += prior.weights[a] * prior.atoms[a][channel];
  return v;
}

template <class S>
std::vector<S> expected_availability_all(const BasicPrior<S>& prior) {
  std::vector<S> out(prior.channels());
  for (int i = 0; i < prior.channels(); ++i) out[i] = expected_availability(prior, i);
  return out;
}

// Restriction of the prior to one channel (atoms collapse to length one;
// equal-theta atoms are not merged, which changes nothing downstream).
template <class S>
BasicPrior<S> marginal_prior(const BasicPrior<S>& prior, int channel) {
  BasicPrior<S> out;
  out.weights = prior.weights;
  out.logw = prior.logw;
  out.atoms.reserve(prior.atoms.size());
  for (const auto& atom : prior.atoms) out.atoms.push_back({atom.at(channel)});
  return out;
}

// Bayes update after sensing one channel: each atom weight picks up the
// likelihood theta (free) or 1-theta (busy) and the mixture renormalizes.
// Throws ZeroLikelihood when the outcome is impossible under every atom.
template <class S>
BasicPrior<S> posterior_update(const BasicPrior<S>& prior, int channel, bool free) {
  BasicPrior<S> post = prior;
  if constexpr (BasicPrior<S>::is_exact) {
    S total(0);
    for (int a = 0; a < post.size(); ++a) {
      const S& th = post.atoms[a][channel];
      post.weights[a] *= free ? th : S(1) - th;
      total += post.weights[a];
    }
    if (total == S(0))
      throw ZeroLikelihood("posterior: outcome impossible under every atom");
    for (S& w : post.weights) w /= total;
  } else {
    for (int a = 0; a < post.size(); ++a) {
      const double like = free ? post.atoms[a][channel] : 1.0 - post.atoms[a][channel];
      post.logw[a] += like > 0 ? std::log(like)
                               : -std::numeric_limits<double>::infinity();
    }
    try {
      post.renormalize_from_logs();
    } catch (const ZeroLikelihood&) {
      throw ZeroLikelihood("posterior: outcome impossible under every atom");
    }
  }
  return post;
}

// Posterior given only the per-channel counts; equals any sequential-update
// ordering with the same counts (the observations are exchangeable).
template <class S>
BasicPrior<S> posterior_from_counts(const BasicPrior<S>& prior,
                                    const ObservationCounts& counts) {
  counts.validate();
  if (counts.channels() != prior.channels())
    throw ConfigInvalid("counts: channel count does not match the prior");
  BasicPrior<S> post = prior;
  if constexpr (BasicPrior<S>::is_exact) {
    S total(0);
    for (int a = 0; a < post.size(); ++a) {
      S like(1);
      for (int i = 0; i < prior.channels(); ++i) {
        const S& th = post.atoms[a][i];
        for (long k = 0; k < counts.free_count[i]; ++k) like *= th;
        for (long k = 0; k < counts.sense_count[i] - counts.free_count[i]; ++k)
          like *= S(1) - th;
      }
      post.weights[a] *= like;
      total += post.weights[a];
    }
    if (total == S(0))
      throw ZeroLikelihood("posterior: counts impossible under every atom");
    for (S& w : post.weights) w /= total;
  } else {
    for (int a = 0; a < post.size(); ++a) {
      double ll = 0.0;
      for (int i = 0; i < prior.channels(); ++i) {
        const double th = post.atoms[a][i];
        const long x = counts.free_count[i];
        const long miss = counts.sense_count[i] - x;
        if (x > 0) ll += th > 0 ? x * std::log(th) : -std::numeric_limits<double>::infinity();
        if (miss > 0) ll += th < 1 ? miss * std::log1p(-th) : -std::numeric_limits<double>::infinity();
      }
      post.logw[a] += ll;
    }
    try {
      post.renormalize_from_logs();
    } catch (const ZeroLikelihood&) {
      throw ZeroLikelihood("posterior: counts impossible under every atom");
    }
  }
  return post;
}

// Draws an atom index from the mixture weights.
inline std::pair<ThetaVector, int> sample_theta(const DiscretePrior& prior,
                                                Xoshiro256& rng) {
  const double u = rng.uniform01();
  double cum = 0.0;
  int pick = prior.size() - 1;
  for (int a = 0; a < prior.size(); ++a) {
    cum += prior.weights[a];
    if (u < cum) {
      pick = a;
      break;
    }
  }
  return {ThetaVector(prior.atoms[pick]), pick};
}

// One slot of channel states: independent Bernoulli(theta_i) per channel,
// drawn in ascending channel order.
inline void sample_slot(const ThetaVector& theta, Xoshiro256& rng,
                        std::vector<std::uint8_t>& out) {
  out.resize(theta.p.size());
  for (std::size_t i = 0; i < theta.p.size(); ++i)
    out[i] = rng.uniform01() < theta.p[i] ? 1 : 0;
}

inline std::vector<std::uint8_t> sample_slot(const ThetaVector& theta, Xoshiro256& rng) {
  std::vector<std::uint8_t> out;
  sample_slot(theta, rng, out);
  return out;
}

}  // namespace bml

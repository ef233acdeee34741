#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bayes_dp.hpp"
#include "model.hpp"

namespace bml {

// Sample mean plus exploration bonus, sqrt(2 ln j / Y_i) on top of X_i/Y_i.
// j is the global 1-based slot counter and counts initialization slots.
inline double ucb_index(const ObservationCounts& counts, int channel, long slot) {
  if (channel < 0 || channel >= counts.channels())
    throw ConfigInvalid("ucb index: channel out of range");
  if (slot < 1) throw ConfigInvalid("ucb index: slot counter starts at 1");
  const long y = counts.sense_count[channel];
  if (y == 0)
    throw UninitializedChannel("ucb index: channel " + std::to_string(channel + 1) +
                               " has never been sensed");
  return static_cast<double>(counts.free_count[channel]) / static_cast<double>(y) +
         std::sqrt(2.0 * std::log(static_cast<double>(slot)) / static_cast<double>(y));
}

// Decision rule driven by the single-user simulator: a pure step function of
// its internal state; every random choice comes through the caller's stream.
class Strategy {
 public:
  virtual ~Strategy() = default;

  // Channels sensed per slot.
  virtual int width() const { return 1; }

  virtual void begin_block(int channels, long horizon) = 0;

  // Appends width() distinct channels to out.
  virtual void choose(long slot, Xoshiro256& rng, std::vector<int>& out) = 0;

  virtual void observe(long slot, std::span<const SensingOutcome> outcomes) = 0;
};

namespace detail {

inline int uniform_pick(std::span<const int> candidates, Xoshiro256& rng) {
  return candidates[rng.below(candidates.size())];
}

// Channels attaining max score, exact equality.
inline void argmax_set(std::span<const double> score, std::vector<int>& out) {
  out.clear();
  double best = score[0];
  for (double v : score) best = std::max(best, v);
  for (int i = 0; i < static_cast<int>(score.size()); ++i)
    if (score[i] == best) out.push_back(i);
}

// The m largest scores: everything strictly above the boundary value enters,
// boundary ties fill the rest uniformly at random.
inline void top_m_set(std::span<const double> score, int m, Xoshiro256& rng,
                      std::vector<int>& out) {
  const int n = static_cast<int>(score.size());
  std::vector<double> sorted(score.begin(), score.end());
  std::nth_element(sorted.begin(), sorted.begin() + (m - 1), sorted.end(),
                   std::greater<>());
  const double boundary = sorted[m - 1];
  out.clear();
  std::vector<int> tied;
  for (int i = 0; i < n; ++i) {
    if (score[i] > boundary)
      out.push_back(i);
    else if (score[i] == boundary)
      tied.push_back(i);
  }
  // Partial Fisher-Yates over the boundary ties.
  for (int need = m - static_cast<int>(out.size()); need > 0; --need) {
    const std::size_t j = rng.below(tied.size());
    out.push_back(tied[j]);
    tied[j] = tied.back();
    tied.pop_back();
  }
  std::sort(out.begin(), out.end());
}

}  // namespace detail

// Knows the availability vector and parks on the m best channels.
class GenieStrategy : public Strategy {
 public:
  explicit GenieStrategy(ThetaVector theta, int m = 1) : theta_(std::move(theta)), m_(m) {
    theta_.validate();
    if (m_ < 1 || m_ > theta_.channels())
      throw ConfigInvalid("genie: width must lie in [1, channels]");
  }

  int width() const override { return m_; }

  void begin_block(int channels, long) override {
    if (channels != theta_.channels())
      throw ConfigInvalid("genie: channel count mismatch");
    chosen_.clear();
  }

  void choose(long, Xoshiro256& rng, std::vector<int>& out) override {
    if (chosen_.empty()) detail::top_m_set(theta_.p, m_, rng, chosen_);
    out.insert(out.end(), chosen_.begin(), chosen_.end());
  }

  void observe(long, std::span<const SensingOutcome>) override {}

 private:
  ThetaVector theta_;
  int m_;
  std::vector<int> chosen_;
};

class RandomStrategy : public Strategy {
 public:
  void begin_block(int channels, long) override { channels_ = channels; }

  void choose(long, Xoshiro256& rng, std::vector<int>& out) override {
    out.push_back(static_cast<int>(rng.below(channels_)));
  }

  void observe(long, std::span<const SensingOutcome>) override {}

 private:
  int channels_ = 0;
};

// Senses each channel once, then follows the highest sample mean X/Y.
class MyopicFreqStrategy : public Strategy {
 public:
  void begin_block(int channels, long) override {
    counts_ = ObservationCounts(channels);
    score_.resize(channels);
  }

  void choose(long slot, Xoshiro256& rng, std::vector<int>& out) override {
    const int n = counts_.channels();
    if (slot <= n) {
      out.push_back(static_cast<int>(slot - 1));
      return;
    }
    for (int i = 0; i < n; ++i)
      score_[i] = static_cast<double>(counts_.free_count[i]) /
                  static_cast<double>(counts_.sense_count[i]);
    detail::argmax_set(score_, ties_);
    out.push_back(detail::uniform_pick(ties_, rng));
  }

  void observe(long, std::span<const SensingOutcome> outcomes) override {
    for (const auto& o : outcomes) counts_.record(o.channel, o.free);
  }

 private:
  ObservationCounts counts_;
  std::vector<double> score_;
  std::vector<int> ties_;
};

// Tracks the posterior over the prior atoms and senses the channel with the
// highest mixture-mean availability.
class MyopicBayesStrategy : public Strategy {
 public:
  explicit MyopicBayesStrategy(DiscretePrior prior) : prior_(std::move(prior)) {
    prior_.validate();
  }

  void begin_block(int channels, long) override {
    if (channels != prior_.channels())
      throw ConfigInvalid("myopic-bayes: channel count mismatch");
    posterior_ = prior_;
  }

  void choose(long, Xoshiro256& rng, std::vector<int>& out) override {
    const std::vector<int> ties = myopic_tie_set(posterior_);
    out.push_back(detail::uniform_pick(ties, rng));
  }

  void observe(long, std::span<const SensingOutcome> outcomes) override {
    for (const auto& o : outcomes)
      posterior_ = posterior_update(posterior_, o.channel, o.free);
  }

 private:
  DiscretePrior prior_;
  DiscretePrior posterior_;
};

// Repeats a free channel; a busy slot triggers the switch rule (uniform over
// the other channels by default). The switch is applied at the next choose
// call so that all randomness flows through the per-slot stream.
class StayWithWinnerStrategy : public Strategy {
 public:
  using SwitchRule = std::function<int(int current, int channels, Xoshiro256&)>;

  explicit StayWithWinnerStrategy(SwitchRule rule = {}) : switch_rule_(std::move(rule)) {
    if (!switch_rule_)
      switch_rule_ = [](int current, int channels, Xoshiro256& rng) {
        if (channels == 1) return current;
        int pick = static_cast<int>(rng.below(channels - 1));
        if (pick >= current) ++pick;
        return pick;
      };
  }

  void begin_block(int channels, long) override {
    channels_ = channels;
    current_ = -1;
    pending_switch_ = false;
  }

  void choose(long, Xoshiro256& rng, std::vector<int>& out) override {
    if (current_ < 0)
      current_ = static_cast<int>(rng.below(channels_));
    else if (pending_switch_)
      current_ = switch_rule_(current_, channels_, rng);
    pending_switch_ = false;
    out.push_back(current_);
  }

  void observe(long, std::span<const SensingOutcome> outcomes) override {
    for (const auto& o : outcomes)
      if (o.channel == current_ && !o.free) pending_switch_ = true;
  }

 private:
  SwitchRule switch_rule_;
  int channels_ = 0;
  int current_ = -1;
  bool pending_switch_ = false;
};

// Two-channel variant that knows which channel is best: a busy slot bounces
// between the best and second-best channel, a free slot stays put.
class OptimisticStayWithWinnerStrategy : public Strategy {
 public:
  explicit OptimisticStayWithWinnerStrategy(const ThetaVector& theta) {
    theta.validate();
    if (theta.channels() < 2)
      throw ConfigInvalid("optimistic stay-with-winner: needs two channels");
    best_ = theta.best();
    second_ = best_ == 0 ? 1 : 0;
    for (int i = 0; i < theta.channels(); ++i)
      if (i != best_ && theta.p[i] > theta.p[second_]) second_ = i;
  }

  void begin_block(int, long) override { current_ = best_; }

  void choose(long, Xoshiro256&, std::vector<int>& out) override {
    out.push_back(current_);
  }

  void observe(long, std::span<const SensingOutcome> outcomes) override {
    for (const auto& o : outcomes)
      if (o.channel == current_ && !o.free)
        current_ = current_ == best_ ? second_ : best_;
  }

 private:
  int best_ = 0;
  int second_ = 1;
  int current_ = 0;
};

// Index rule: sense each channel once round-robin, then follow the top-m
// upper confidence indices. m = 1 is the classic single-channel rule.
class UcbStrategy : public Strategy {
 public:
  explicit UcbStrategy(int m = 1) : m_(m) {
    if (m_ < 1) throw ConfigInvalid("ucb: width must be >= 1");
  }

  int width() const override { return m_; }

  void begin_block(int channels, long) override {
    if (m_ > channels) throw ConfigInvalid("ucb: width must be <= channels");
    counts_ = ObservationCounts(channels);
    init_slots_ = (channels + m_ - 1) / m_;
    score_.resize(channels);
  }

  void choose(long slot, Xoshiro256& rng, std::vector<int>& out) override {
    const int n = counts_.channels();
    if (slot <= init_slots_) {
      // Slot j senses channels (j-1)m .. (j-1)m + m - 1 mod n; the final
      // slot of a ragged split re-senses the lowest channels so that every
      // slot carries exactly m senses.
      for (int r = 0; r < m_; ++r)
        out.push_back(static_cast<int>(((slot - 1) * m_ + r) % n));
      std::sort(out.end() - m_, out.end());
      return;
    }
    for (int i = 0; i < n; ++i) score_[i] = ucb_index(counts_, i, slot);
    detail::top_m_set(score_, m_, rng, picks_);
    out.insert(out.end(), picks_.begin(), picks_.end());
  }

  void observe(long, std::span<const SensingOutcome> outcomes) override {
    for (const auto& o : outcomes) counts_.record(o.channel, o.free);
  }

  const ObservationCounts& counts() const { return counts_; }

 private:
  int m_;
  long init_slots_ = 0;
  ObservationCounts counts_;
  std::vector<double> score_;
  std::vector<int> picks_;
};

// Follows a precomputed value table: at slot j it plays an optimal action
// for (current counts, remaining horizon), ties uniform.
class DpOptimalStrategy : public Strategy {
 public:
  explicit DpOptimalStrategy(const ValueTable<double>* table) : table_(table) {
    if (!table_) throw ConfigInvalid("dp-optimal: a value table is required");
  }

  void begin_block(int channels, long horizon) override {
    if (channels != table_->channels)
      throw ConfigInvalid("dp-optimal: channel count mismatch");
    if (horizon != table_->horizon)
      throw ConfigInvalid("dp-optimal: table was built for horizon " +
                          std::to_string(table_->horizon));
    counts_ = ObservationCounts(channels);
  }

  void choose(long slot, Xoshiro256& rng, std::vector<int>& out) override {
    const ActionQuery q = table_->optimal_action(counts_, table_->horizon - (slot - 1));
    out.push_back(detail::uniform_pick(q.ties, rng));
  }

  void observe(long, std::span<const SensingOutcome> outcomes) override {
    for (const auto& o : outcomes) counts_.record(o.channel, o.free);
  }

 private:
  const ValueTable<double>* table_;
  ObservationCounts counts_;
};

// Everything a named strategy might need; unused fields stay null.
struct StrategySpec {
  std::string name;
  int m = 1;                                  // ucb-multi / genie width
  const ThetaVector* theta = nullptr;         // genie, stay-with-winner-optimistic
  const DiscretePrior* prior = nullptr;       // myopic-bayes
  const ValueTable<double>* table = nullptr;  // dp-optimal
};

inline const std::vector<std::string>& strategy_names() {
  static const std::vector<std::string> names = {
      "genie",          "random",        "myopic-freq",
      "myopic-bayes",   "stay-with-winner", "stay-with-winner-optimistic",
      "ucb1",           "ucb-multi",     "dp-optimal"};
  return names;
}

inline std::unique_ptr<Strategy> make_strategy(const StrategySpec& spec) {
  const auto need_theta = [&]() -> const ThetaVector& {
    if (!spec.theta)
      throw ConfigInvalid("strategy '" + spec.name + "': requires known theta");
    return *spec.theta;
  };
  if (spec.name == "genie") return std::make_unique<GenieStrategy>(need_theta(), spec.m);
  if (spec.name == "random") return std::make_unique<RandomStrategy>();
  if (spec.name == "myopic-freq") return std::make_unique<MyopicFreqStrategy>();
  if (spec.name == "myopic-bayes") {
    if (!spec.prior) throw ConfigInvalid("strategy 'myopic-bayes': requires a prior");
    return std::make_unique<MyopicBayesStrategy>(*spec.prior);
  }
  if (spec.name == "stay-with-winner") return std::make_unique<StayWithWinnerStrategy>();
  if (spec.name == "stay-with-winner-optimistic")
    return std::make_unique<OptimisticStayWithWinnerStrategy>(need_theta());
  if (spec.name == "ucb1") return std::make_unique<UcbStrategy>(1);
  if (spec.name == "ucb-multi") return std::make_unique<UcbStrategy>(spec.m);
  if (spec.name == "dp-optimal") return std::make_unique<DpOptimalStrategy>(spec.table);
  throw ConfigInvalid("unknown strategy '" + spec.name + "'");
}

}  // namespace bml

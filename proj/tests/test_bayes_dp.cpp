#include <catch2/catch_amalgamated.hpp>

#include <bml/bml.hpp>

#include "support/oracles.hpp"

using namespace bml;

namespace {

RationalPrior example_prior() {
  return make_prior<Rational>(
      {{Rational(1, 10), Rational(0)}, {Rational(4, 5), Rational(1)}},
      {Rational(4, 5), Rational(1, 5)});
}

// Random two-atom two-channel prior with small denominators, exact.
RationalPrior random_two_atom_prior(Xoshiro256& rng, bool known_second) {
  const auto frac = [&] { return Rational(1 + rng.below(18), 20); };
  const Rational shared = frac();
  std::vector<std::vector<Rational>> atoms = {{frac(), known_second ? shared : frac()},
                                              {frac(), known_second ? shared : frac()}};
  const Rational w(1 + rng.below(8), 9);
  return make_prior<Rational>(std::move(atoms), {w, Rational(1) - w});
}

}  // namespace

TEST_CASE("worked two-channel block: exact value and decision plan") {
  const RationalPrior prior = example_prior();
  const DpResult<Rational> result = optimal_value<Rational>(prior, 2, Rational(100));
  CHECK(result.value == Rational(252, 5));

  ObservationCounts counts(2);
  const ActionQuery root = result.table.optimal_action(counts, 2);
  CHECK(root.ties == std::vector<int>{0});

  counts.record(0, true);
  CHECK(result.table.optimal_action(counts, 1).ties == std::vector<int>{1});
  counts = ObservationCounts(2);
  counts.record(0, false);
  CHECK(result.table.optimal_action(counts, 1).ties == std::vector<int>{0});

  CHECK(myopic_value(prior, 2, Rational(100)) == Rational(48));
  CHECK(myopic_tie_set(prior) == std::vector<int>{0});
}

TEST_CASE("float planning agrees with the exact value") {
  const DiscretePrior prior = to_double_prior(example_prior());
  const DpResult<double> result = optimal_value<double>(prior, 2, 100.0);
  CHECK(result.value == Catch::Approx(50.4).margin(1e-10));
  CHECK(myopic_value(prior, 2, 100.0) == Catch::Approx(48.0).margin(1e-10));
}

TEST_CASE("planner matches exhaustive strategy enumeration exactly") {
  Xoshiro256 rng(RngSeed{7, 0});
  for (int trial = 0; trial < 10; ++trial) {
    const RationalPrior prior = random_two_atom_prior(rng, trial % 2 == 0);
    for (long horizon : {1L, 2L, 3L}) {
      const Rational dp = optimal_value<Rational>(prior, horizon, Rational(1)).value;
      const Rational brute = oracles::exhaustive_optimal_value(prior, horizon, Rational(1));
      CHECK(dp == brute);
    }
  }
}

TEST_CASE("degenerate planning cases") {
  const RationalPrior prior = example_prior();
  CHECK(optimal_value<Rational>(prior, 0, Rational(100)).value == Rational(0));

  // Known availabilities: planning adds nothing over parking on the best.
  const DiscretePrior known = point_prior(ThetaVector({0.3, 0.7}));
  CHECK(optimal_value<double>(known, 9, 1.0).value == Catch::Approx(6.3).margin(1e-12));

  const DiscretePrior single = make_prior<double>({{0.2}, {0.9}}, {0.5, 0.5});
  const double v1 = optimal_value<double>(single, 1, 1.0).value;
  CHECK(v1 == Catch::Approx(0.55).margin(1e-12));
}

TEST_CASE("state cap aborts oversized planning problems") {
  const RationalPrior prior = example_prior();
  DpOptions options;
  options.state_cap = 3;
  CHECK_THROWS_AS(optimal_value<Rational>(prior, 6, Rational(1), options),
                  StateSpaceExceeded);
}

TEST_CASE("value table rejects unreachable states and end-of-block actions") {
  const RationalPrior prior = example_prior();
  const DpResult<Rational> result = optimal_value<Rational>(prior, 2, Rational(100));
  ObservationCounts counts(2);
  counts.record(1, true);
  counts.record(1, true);
  counts.record(1, true);
  CHECK_THROWS_AS(result.table.at(counts, 1), UnknownState);
  CHECK_THROWS_AS(result.table.optimal_action(ObservationCounts(2), 0), UnknownState);
}

TEST_CASE("stopping rate: revealed channel, exact closed cases") {
  const RationalPrior coin = make_prior<Rational>({{Rational(0)}, {Rational(1)}},
                                                  {Rational(1, 2), Rational(1, 2)});
  CHECK(stopping_index(coin, 1) == Rational(1, 2));
  // Keep sensing only while free: reward 2w, senses 1 + w.
  CHECK(stopping_index(coin, 2) == Rational(2, 3));
  CHECK(stopping_index(coin, 3) == Rational(3, 4));

  const RationalPrior point = make_prior<Rational>({{Rational(3, 10)}}, {Rational(1)});
  for (long horizon : {1L, 2L, 5L})
    CHECK(stopping_index(point, horizon) == Rational(3, 10));
}

TEST_CASE("stopping rate equals exhaustive rule enumeration") {
  Xoshiro256 rng(RngSeed{8, 0});
  for (int trial = 0; trial < 12; ++trial) {
    const auto frac = [&] { return Rational(rng.below(21), 20); };
    const Rational w(1 + rng.below(8), 9);
    const RationalPrior marginal =
        make_prior<Rational>({{frac()}, {frac()}}, {w, Rational(1) - w});
    for (long horizon : {1L, 2L, 3L}) {
      const Rational fast = stopping_index(marginal, horizon);
      const Rational brute = oracles::exhaustive_stopping_index(marginal, horizon);
      CHECK(fast == brute);
    }
  }
}

TEST_CASE("stopping rate grows with the horizon") {
  const RationalPrior marginal = make_prior<Rational>(
      {{Rational(1, 10)}, {Rational(9, 10)}}, {Rational(2, 5), Rational(3, 5)});
  Rational prev(-1);
  for (long horizon = 1; horizon <= 5; ++horizon) {
    const Rational v = stopping_index(marginal, horizon);
    CHECK(v >= prev);
    prev = v;
  }
  CHECK_THROWS_AS(stopping_index(example_prior(), 2), ConfigInvalid);
}

TEST_CASE("discounted rate: point mass returns the availability") {
  const DiscretePrior point = make_prior<double>({{0.37}}, {1.0});
  for (double alpha : {0.3, 0.9, 0.99})
    CHECK(gittins_index(point, alpha) == Catch::Approx(0.37).margin(1e-9));
}

TEST_CASE("discounted rate: revealed channel matches the closed form") {
  for (double w : {0.2, 0.5, 0.8}) {
    for (double alpha : {0.5, 0.9, 0.95}) {
      const DiscretePrior coin = make_prior<double>({{0.0}, {1.0}}, {1.0 - w, w});
      const double expected = oracles::two_point_discounted_index(w, alpha);
      CHECK(gittins_index(coin, alpha) == Catch::Approx(expected).margin(1e-7));
    }
  }
}

TEST_CASE("discounted rate: exploration premium and monotonicity") {
  const DiscretePrior mix = make_prior<double>({{0.2}, {0.8}}, {0.5, 0.5});
  const double idx = gittins_index(mix, 0.9);
  CHECK(idx > 0.5);  // above the posterior mean: sensing carries option value

  double prev = 0.0;
  for (double w : {0.2, 0.4, 0.6, 0.8}) {
    const DiscretePrior p = make_prior<double>({{0.2}, {0.8}}, {1.0 - w, w});
    const double v = gittins_index(p, 0.9);
    CHECK(v >= prev);
    prev = v;
  }

  // Tiny discount: the future is worthless, the rate collapses to the mean.
  CHECK(gittins_index(mix, 0.01) == Catch::Approx(0.5).margin(0.01));
}

TEST_CASE("index query selects exactly one flavor") {
  const DiscretePrior point = make_prior<double>({{0.3}}, {1.0});
  IndexQuery both;
  both.horizon = 3;
  both.discount = 0.9;
  CHECK_THROWS_AS(index_value(point, both), ConfigInvalid);
  CHECK_THROWS_AS(index_value(point, IndexQuery{}), ConfigInvalid);
  IndexQuery blocked;
  blocked.horizon = 3;
  CHECK(index_value(point, blocked) == Catch::Approx(0.3).margin(1e-12));
  IndexQuery discounted;
  discounted.discount = 0.9;
  CHECK(index_value(point, discounted) == Catch::Approx(0.3).margin(1e-9));
}

TEST_CASE("two-channel symmetric-pair rule follows the posterior weight") {
  CHECK(symmetric_two_channel_action(0.7).channel == 0);
  CHECK_FALSE(symmetric_two_channel_action(0.7).tie);
  CHECK(symmetric_two_channel_action(0.2).channel == 1);
  CHECK(symmetric_two_channel_action(0.5).tie);
  CHECK_THROWS_AS(symmetric_two_channel_action(1.5), ConfigInvalid);
}

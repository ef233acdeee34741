#pragma once

#include <cstdlib>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "multiuser.hpp"
#include "strategies.hpp"

namespace bml {

enum class OutputFormat { csv, json };

inline OutputFormat parse_format(const std::string& name) {
  if (name == "csv") return OutputFormat::csv;
  if (name == "json") return OutputFormat::json;
  throw ConfigInvalid("format: expected 'csv' or 'json'");
}

// One line of experiment output. Fields not applicable to the row's mode stay
// empty; channels are 1-based everywhere a row or report names one. All
// computed floats are rounded to 12 significant digits on construction, so
// rows survive a serialization round trip unchanged.
struct ResultRow {
  std::string experiment;
  std::string mode;
  std::string strategy;
  std::optional<long> user;  // per-user rows of the contention game
  long channels = 0;
  std::optional<long> horizon;
  std::optional<long> users;
  std::optional<long> width;
  double bandwidth = 0.0;
  long replications = 0;
  std::uint64_t seed = 0;
  std::optional<double> genie_value;
  std::optional<double> mean_bits;
  std::optional<double> mean_loss;
  std::optional<double> ci_half_width;
  std::optional<double> suboptimal_senses;
  std::optional<double> lower_bound;
  std::optional<double> c1;
  std::optional<double> c2;
  std::optional<double> vstar;
  std::optional<std::string> vstar_exact;
  std::optional<double> myopic;
  std::optional<long> first_action;

  bool operator==(const ResultRow&) const = default;
};

inline constexpr const char* kCsvHeader =
    "experiment,mode,strategy,user,channels,horizon,users,width,bandwidth,"
    "replications,seed,genie_value,mean_bits,mean_loss,ci_half_width,"
    "suboptimal_senses,lower_bound,c1,c2,vstar,vstar_exact,myopic,first_action";

struct StrategyConfig {
  std::string name;
  int width = 1;
};

struct SweepConfig {
  std::string mode;      // simulate or multiuser
  std::string variable;  // horizon or users
  std::vector<long> values;
};

struct ExperimentConfig {
  std::string experiment;
  std::string mode;  // optimal-dp, simulate, multiuser, sweep
  double bandwidth = 100.0;
  long horizon = 0;
  std::uint64_t seed = 1;
  int replications = 200;
  int threads = 0;
  bool exact = true;
  bool trace = false;
  std::optional<RationalPrior> prior;
  std::optional<ThetaVector> theta;
  std::vector<StrategyConfig> strategies;
  int users = 0;
  std::string user_rule;
  std::optional<MixedStrategy> mix;
  std::optional<SweepConfig> sweep;
};

namespace detail {

inline long config_long(const nlohmann::json& j, const char* key, long fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number_integer())
    throw ConfigInvalid(std::string(key) + ": expected an integer");
  return j.at(key).get<long>();
}

inline double config_double(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number())
    throw ConfigInvalid(std::string(key) + ": expected a number");
  return j.at(key).get<double>();
}

inline bool config_bool(const nlohmann::json& j, const char* key, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean())
    throw ConfigInvalid(std::string(key) + ": expected a boolean");
  return j.at(key).get<bool>();
}

inline std::string config_string(const nlohmann::json& j, const char* key,
                                 const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string())
    throw ConfigInvalid(std::string(key) + ": expected a string");
  return j.at(key).get<std::string>();
}

// Exact scalar from a JSON entry: strings parse as rationals or decimals,
// numbers through their shortest round-trip decimal, so 0.1 means 1/10.
inline Rational config_rational(const nlohmann::json& v, const char* field) {
  if (v.is_string()) {
    try {
      return parse_rational(v.get<std::string>());
    } catch (const ConfigInvalid& e) {
      throw ConfigInvalid(std::string(field) + ": " + e.what());
    }
  }
  if (v.is_number()) return rational_from_shortest_decimal(v.get<double>());
  throw ConfigInvalid(std::string(field) + ": expected a number or a string");
}

inline RationalPrior config_prior(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("atoms") || !j.at("atoms").is_array() ||
      j.at("atoms").empty())
    throw ConfigInvalid("prior: expected an object with a nonempty 'atoms' array");
  std::vector<std::vector<Rational>> atoms;
  std::vector<Rational> weights;
  for (const auto& atom : j.at("atoms")) {
    if (!atom.is_object() || !atom.contains("theta") || !atom.contains("weight") ||
        !atom.at("theta").is_array() || atom.at("theta").empty())
      throw ConfigInvalid(
          "prior.atoms: each atom needs a nonempty 'theta' array and a 'weight'");
    std::vector<Rational> theta;
    for (const auto& v : atom.at("theta"))
      theta.push_back(config_rational(v, "prior.atoms.theta"));
    atoms.push_back(std::move(theta));
    weights.push_back(config_rational(atom.at("weight"), "prior.atoms.weight"));
  }
  try {
    return make_prior<Rational>(std::move(atoms), std::move(weights));
  } catch (const Error& e) {
    throw ConfigInvalid(std::string("prior: ") + e.what());
  }
}

inline void check_label(const std::string& label) {
  for (char c : label)
    if (c == ',' || c == '"' || c == '\n' || c == '\r')
      throw ConfigInvalid("experiment: label must not contain commas, quotes or newlines");
}

}  // namespace detail

inline const std::vector<std::string>& user_rule_names() {
  static const std::vector<std::string> names = {
      "kkt", "nash", "genie", "freq-match", "adaptive-kkt", "fixed"};
  return names;
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigInvalid("config: expected a JSON object");
  static const std::vector<std::string> known = {
      "experiment", "mode",  "bandwidth",  "horizon",    "seed",
      "replications", "threads", "exact",  "trace",      "prior",
      "theta",      "strategies", "users", "user_rule",  "mix",
      "sweep"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigInvalid("unknown config field '" + key + "'");

  ExperimentConfig c;
  c.mode = detail::config_string(j, "mode", "");
  if (c.mode != "optimal-dp" && c.mode != "simulate" && c.mode != "multiuser" &&
      c.mode != "sweep")
    throw ConfigInvalid("mode: expected optimal-dp, simulate, multiuser or sweep");
  c.experiment = detail::config_string(j, "experiment", c.mode);
  detail::check_label(c.experiment);

  c.bandwidth = detail::config_double(j, "bandwidth", 100.0);
  if (!(c.bandwidth > 0.0)) throw ConfigInvalid("bandwidth: must be positive");
  c.horizon = detail::config_long(j, "horizon", 0);
  if (j.contains("horizon") && c.horizon < 1) throw ConfigInvalid("horizon: must be >= 1");
  const long seed = detail::config_long(j, "seed", 1);
  if (seed < 0) throw ConfigInvalid("seed: must be nonnegative");
  c.seed = static_cast<std::uint64_t>(seed);
  c.replications = static_cast<int>(detail::config_long(j, "replications", 200));
  if (c.replications < 1) throw ConfigInvalid("replications: must be >= 1");
  c.threads = static_cast<int>(detail::config_long(j, "threads", 0));
  if (c.threads < 0) throw ConfigInvalid("threads: must be nonnegative");
  c.exact = detail::config_bool(j, "exact", true);
  c.trace = detail::config_bool(j, "trace", false);

  if (j.contains("prior")) c.prior = detail::config_prior(j.at("prior"));
  if (j.contains("theta")) {
    if (!j.at("theta").is_array() || j.at("theta").empty())
      throw ConfigInvalid("theta: expected a nonempty array");
    std::vector<double> p;
    for (const auto& v : j.at("theta")) {
      if (!v.is_number()) throw ConfigInvalid("theta: entries must be numbers");
      p.push_back(v.get<double>());
    }
    c.theta = ThetaVector(std::move(p));
    try {
      c.theta->validate();
    } catch (const Error& e) {
      throw ConfigInvalid(e.what());
    }
  }

  if (j.contains("strategies")) {
    if (!j.at("strategies").is_array() || j.at("strategies").empty())
      throw ConfigInvalid("strategies: expected a nonempty array");
    for (const auto& s : j.at("strategies")) {
      StrategyConfig sc;
      if (s.is_string()) {
        sc.name = s.get<std::string>();
      } else if (s.is_object()) {
        sc.name = detail::config_string(s, "name", "");
        sc.width = static_cast<int>(detail::config_long(s, "width", 1));
      } else {
        throw ConfigInvalid("strategies: entries must be names or {name, width} objects");
      }
      const auto& names = strategy_names();
      if (std::find(names.begin(), names.end(), sc.name) == names.end())
        throw ConfigInvalid("strategies: unknown strategy '" + sc.name + "'");
      if (sc.width < 1) throw ConfigInvalid("strategies: width must be >= 1");
      c.strategies.push_back(std::move(sc));
    }
  }

  c.users = static_cast<int>(detail::config_long(j, "users", 0));
  if (j.contains("users") && c.users < 1) throw ConfigInvalid("users: must be >= 1");
  c.user_rule = detail::config_string(j, "user_rule", "");
  if (!c.user_rule.empty()) {
    const auto& names = user_rule_names();
    if (std::find(names.begin(), names.end(), c.user_rule) == names.end())
      throw ConfigInvalid("user_rule: unknown rule '" + c.user_rule + "'");
  }
  if (j.contains("mix")) {
    MixedStrategy mix;
    if (!j.at("mix").is_array()) throw ConfigInvalid("mix: expected an array");
    for (const auto& v : j.at("mix")) {
      if (!v.is_number()) throw ConfigInvalid("mix: entries must be numbers");
      mix.p.push_back(v.get<double>());
    }
    try {
      mix.validate();
    } catch (const Error& e) {
      throw ConfigInvalid(e.what());
    }
    c.mix = std::move(mix);
  }

  if (j.contains("sweep")) {
    if (c.mode != "sweep") throw ConfigInvalid("sweep: only valid with mode 'sweep'");
    const auto& s = j.at("sweep");
    if (!s.is_object()) throw ConfigInvalid("sweep: expected an object");
    SweepConfig sw;
    sw.mode = detail::config_string(s, "mode", "");
    if (sw.mode != "simulate" && sw.mode != "multiuser")
      throw ConfigInvalid("sweep.mode: expected simulate or multiuser");
    sw.variable = detail::config_string(s, "variable", "");
    if (sw.variable != "horizon" && sw.variable != "users")
      throw ConfigInvalid("sweep.variable: expected horizon or users");
    if (sw.variable == "users" && sw.mode != "multiuser")
      throw ConfigInvalid("sweep.variable: users requires sweep.mode 'multiuser'");
    if (!s.contains("values") || !s.at("values").is_array() || s.at("values").empty())
      throw ConfigInvalid("sweep.values: expected a nonempty array");
    for (const auto& v : s.at("values")) {
      if (!v.is_number_integer() || v.get<long>() < 1)
        throw ConfigInvalid("sweep.values: entries must be integers >= 1");
      sw.values.push_back(v.get<long>());
    }
    c.sweep = std::move(sw);
  }

  // Cross-field requirements per mode. A swept variable may be absent at the
  // top level; every other requirement of the inner mode holds.
  const std::string effective = c.mode == "sweep" ? c.sweep ? c.sweep->mode : "" : c.mode;
  const bool horizon_swept = c.sweep && c.sweep->variable == "horizon";
  const bool users_swept = c.sweep && c.sweep->variable == "users";
  if (c.mode == "sweep" && !c.sweep) throw ConfigInvalid("sweep: required for mode 'sweep'");
  if (!horizon_swept && c.horizon < 1)
    throw ConfigInvalid("horizon: required and must be >= 1");
  if (effective == "optimal-dp" && !c.prior)
    throw ConfigInvalid("prior: required for mode 'optimal-dp'");
  if (effective == "simulate") {
    if (!c.theta && !c.prior)
      throw ConfigInvalid("theta: required for mode 'simulate' (or give a prior)");
    if (c.strategies.empty())
      throw ConfigInvalid("strategies: required for mode 'simulate'");
    for (const auto& sc : c.strategies)
      if ((sc.name == "myopic-bayes" || sc.name == "dp-optimal") && !c.prior)
        throw ConfigInvalid("strategies: '" + sc.name + "' requires a prior");
  }
  if (effective == "multiuser") {
    if (!c.theta) throw ConfigInvalid("theta: required for mode 'multiuser'");
    if (!users_swept && c.users < 1)
      throw ConfigInvalid("users: required for mode 'multiuser'");
    if (c.user_rule.empty()) throw ConfigInvalid("user_rule: required for mode 'multiuser'");
    if (c.user_rule == "fixed" && !c.mix)
      throw ConfigInvalid("mix: required when user_rule is 'fixed'");
  }
  if (c.theta && c.prior && c.theta->channels() != c.prior->channels())
    throw ConfigInvalid("theta: channel count does not match the prior");
  if (c.mix && c.theta && c.mix->channels() != c.theta->channels())
    throw ConfigInvalid("mix: channel count does not match theta");
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid(std::string("config: invalid JSON: ") + e.what());
  }
  return parse_config(j);
}

struct ExperimentOutput {
  std::vector<ResultRow> rows;
  nlohmann::json report;
};

namespace detail {

// Numbers that survive JSON: infinities become strings.
inline nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_sig(v);
}

inline void round_row(ResultRow& r) {
  for (auto* f : {&r.genie_value, &r.mean_bits, &r.mean_loss, &r.ci_half_width,
                  &r.suboptimal_senses, &r.lower_bound, &r.c1, &r.c2, &r.vstar,
                  &r.myopic})
    if (*f && std::isfinite(**f)) *f = round_sig(**f);
}

// Channels outside the width-m clairvoyant set, preferring lower indices on
// availability ties, matching the genie value's top_sum.
inline std::vector<int> suboptimal_channels(const ThetaVector& theta, int m) {
  std::vector<int> order(theta.p.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return theta.p[a] > theta.p[b]; });
  std::vector<int> out(order.begin() + std::min<std::size_t>(m, order.size()), order.end());
  std::sort(out.begin(), out.end());
  return out;
}

template <class S>
void fill_dp_report(const DpResult<S>& result, const BasicPrior<S>& prior,
                    const ExperimentConfig& config, ResultRow& row, nlohmann::json& report) {
  row.vstar = to_double(result.value);
  const S myo = myopic_value(prior, config.horizon, result.table.bandwidth);
  row.myopic = to_double(myo);
  if constexpr (scalar_traits<S>::exact) {
    row.vstar_exact = to_string(result.value);
    report["vstar_exact"] = *row.vstar_exact;
    report["myopic_exact"] = to_string(myo);
  }
  report["vstar"] = json_number(to_double(result.value));
  report["myopic"] = json_number(to_double(myo));
  report["planning_gain"] = json_number(to_double(result.value) - to_double(myo));
  report["states"] = result.table.states.size();

  const auto one_based = [](const ActionQuery& q) {
    nlohmann::json ties = nlohmann::json::array();
    for (int t : q.ties) ties.push_back(t + 1);
    return ties;
  };
  ObservationCounts counts(prior.channels());
  const ActionQuery first = result.table.optimal_action(counts, config.horizon);
  row.first_action = first.channel + 1;
  report["first_action"] = first.channel + 1;
  report["first_action_ties"] = one_based(first);
  report["after_free"] = nullptr;
  report["after_busy"] = nullptr;
  if (config.horizon >= 2) {
    // Both one-step continuations, when the first observation can occur.
    counts.sense_count[first.channel] = 1;
    counts.free_count[first.channel] = 1;
    try {
      const ActionQuery q = result.table.optimal_action(counts, config.horizon - 1);
      report["after_free"] = q.channel + 1;
      report["after_free_ties"] = one_based(q);
    } catch (const UnknownState&) {
    }
    counts.free_count[first.channel] = 0;
    try {
      const ActionQuery q = result.table.optimal_action(counts, config.horizon - 1);
      report["after_busy"] = q.channel + 1;
      report["after_busy_ties"] = one_based(q);
    } catch (const UnknownState&) {
    }
  }
}

inline nlohmann::json trace_json(const SlotTrace& trace) {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& slot : trace.slots) {
    nlohmann::json outcomes = nlohmann::json::array();
    for (const auto& o : slot.outcomes)
      outcomes.push_back({o.channel + 1, o.free});
    slots.push_back(std::move(outcomes));
  }
  return slots;
}

inline nlohmann::json throughput_json(const ThroughputReport& t) {
  return {{"per_user_bits", json_number(t.per_user_bits)},
          {"total_bits", json_number(t.total_bits)},
          {"centralized_total", json_number(t.centralized_total)},
          {"total_loss", json_number(t.total_loss)},
          {"per_user_loss", json_number(t.per_user_loss)}};
}

}  // namespace detail

inline ExperimentOutput run_experiment(const ExperimentConfig& config);

namespace detail {

inline ExperimentOutput run_dp(const ExperimentConfig& config) {
  ExperimentOutput out;
  const RationalPrior& prior = *config.prior;
  ResultRow row;
  row.experiment = config.experiment;
  row.mode = "optimal-dp";
  row.strategy = "dp-optimal";
  row.channels = prior.channels();
  row.horizon = config.horizon;
  row.bandwidth = config.bandwidth;
  row.seed = config.seed;
  out.report = {{"mode", "optimal-dp"},
                {"experiment", config.experiment},
                {"channels", prior.channels()},
                {"horizon", config.horizon},
                {"bandwidth", config.bandwidth},
                {"exact", config.exact}};
  if (config.exact) {
    const Rational bw = rational_from_shortest_decimal(config.bandwidth);
    const DpResult<Rational> result = optimal_value<Rational>(prior, config.horizon, bw);
    fill_dp_report(result, prior, config, row, out.report);
  } else {
    const DiscretePrior dprior = to_double_prior(prior);
    const DpResult<double> result =
        optimal_value<double>(dprior, config.horizon, config.bandwidth);
    fill_dp_report(result, dprior, config, row, out.report);
  }
  round_row(row);
  out.rows.push_back(std::move(row));
  return out;
}

inline ExperimentOutput run_simulate(const ExperimentConfig& config) {
  ExperimentOutput out;
  const bool bayes = !config.theta.has_value();
  std::optional<DiscretePrior> dprior;
  if (config.prior) dprior = to_double_prior(*config.prior);
  std::optional<ValueTable<double>> table;
  for (const auto& sc : config.strategies)
    if (sc.name == "dp-optimal" && !table)
      table = optimal_value<double>(*dprior, config.horizon, config.bandwidth).table;

  const int channels = config.theta ? config.theta->channels() : dprior->channels();
  std::optional<LowerBoundReport> bound;
  if (config.theta) {
    const LowerBoundReport b = lower_bound_constant(*config.theta, config.bandwidth);
    if (!b.degenerate) bound = b;
  }

  out.report = {{"mode", "simulate"},
                {"experiment", config.experiment},
                {"channels", channels},
                {"horizon", config.horizon},
                {"bandwidth", config.bandwidth},
                {"replications", config.replications},
                {"seed", config.seed},
                {"strategies", nlohmann::json::array()}};
  if (bound) out.report["lower_bound_constant"] = json_number(bound->value);

  MeasureOptions options;
  options.replications = config.replications;
  options.seed = config.seed;
  options.threads = config.threads;

  for (const auto& sc : config.strategies) {
    StrategySpec spec;
    spec.name = sc.name;
    spec.m = sc.width;
    spec.theta = config.theta ? &*config.theta : nullptr;
    spec.prior = dprior ? &*dprior : nullptr;
    spec.table = table ? &*table : nullptr;
    const StrategyFactory factory = [&spec] { return make_strategy(spec); };
    const int width = factory()->width();
    const LossReport measured =
        bayes ? measure_loss_bayes(factory, *dprior, config.horizon, config.bandwidth,
                                   options)
              : measure_loss(factory, *config.theta, config.horizon, config.bandwidth,
                             options);

    ResultRow row;
    row.experiment = config.experiment;
    row.mode = "simulate";
    row.strategy = sc.name;
    row.channels = channels;
    row.horizon = config.horizon;
    row.width = width;
    row.bandwidth = config.bandwidth;
    row.replications = config.replications;
    row.seed = config.seed;
    row.genie_value = measured.genie_value;
    row.mean_bits = measured.mean_bits;
    row.mean_loss = measured.mean_loss;
    row.ci_half_width = measured.ci_half_width;
    if (!bayes) {
      double sub = 0.0;
      for (int i : suboptimal_channels(*config.theta, width))
        sub += measured.mean_sense_count[i];
      row.suboptimal_senses = sub;
      if (bound && width == 1) row.lower_bound = bound->value;
    }
    round_row(row);

    nlohmann::json entry = {{"name", sc.name},
                            {"width", width},
                            {"genie_value", json_number(measured.genie_value)},
                            {"mean_bits", json_number(measured.mean_bits)},
                            {"mean_loss", json_number(measured.mean_loss)},
                            {"ci_half_width", json_number(measured.ci_half_width)},
                            {"mean_sense_count", measured.mean_sense_count}};
    if (config.trace && !bayes) {
      SlotTrace trace;
      const auto replay = make_strategy(spec);
      run_block(*replay, *config.theta, config.horizon, config.bandwidth,
                {config.seed, compose_stream(0, kEnvRole)},
                {config.seed, compose_stream(0, kStrategyRole)}, &trace);
      entry["trace"] = trace_json(trace);
    }
    out.report["strategies"].push_back(std::move(entry));
    out.rows.push_back(std::move(row));
  }
  return out;
}

inline UserStrategyFactory user_factory(const ExperimentConfig& config,
                                        const EquilibriumReport& eq) {
  const ThetaVector theta = *config.theta;
  if (config.user_rule == "kkt") {
    const MixedStrategy mix = eq.kkt.p;
    return [mix](int) { return std::make_unique<FixedMixedUser>(mix); };
  }
  if (config.user_rule == "nash") {
    MixedStrategy mix;
    mix.p = eq.nash_tau;
    return [mix](int) { return std::make_unique<FixedMixedUser>(mix); };
  }
  if (config.user_rule == "genie")
    return [theta](int) { return std::make_unique<GenieUser>(theta); };
  if (config.user_rule == "freq-match")
    return [](int) { return std::make_unique<FrequencyMatchUser>(); };
  if (config.user_rule == "adaptive-kkt")
    return [](int) { return std::make_unique<AdaptiveKktUser>(); };
  if (config.user_rule == "fixed") {
    const MixedStrategy mix = *config.mix;
    return [mix](int) { return std::make_unique<FixedMixedUser>(mix); };
  }
  throw ConfigInvalid("user_rule: unknown rule '" + config.user_rule + "'");
}

inline ExperimentOutput run_multiuser_mode(const ExperimentConfig& config) {
  ExperimentOutput out;
  const ThetaVector& theta = *config.theta;
  const EquilibriumReport eq =
      equilibrium_report(theta, config.users, config.horizon, config.bandwidth);

  MeasureOptions options;
  options.replications = config.replications;
  options.seed = config.seed;
  options.threads = config.threads;
  const UserStrategyFactory factory = user_factory(config, eq);
  const MultiUserReport measured = measure_multiuser(factory, theta, config.users,
                                                     config.horizon, config.bandwidth,
                                                     options);

  ResultRow total;
  total.experiment = config.experiment;
  total.mode = "multiuser";
  total.strategy = config.user_rule;
  total.channels = theta.channels();
  total.horizon = config.horizon;
  total.users = config.users;
  total.bandwidth = config.bandwidth;
  total.replications = config.replications;
  total.seed = config.seed;
  total.genie_value = measured.centralized_total;
  total.mean_bits = measured.mean_total_bits;
  total.mean_loss = measured.mean_loss;
  total.ci_half_width = measured.loss_ci_half_width;
  total.c1 = eq.c1;
  total.c2 = eq.c2;
  round_row(total);
  out.rows.push_back(total);
  for (int u = 0; u < config.users; ++u) {
    ResultRow row;
    row.experiment = config.experiment;
    row.mode = "multiuser";
    row.strategy = config.user_rule;
    row.user = u + 1;
    row.channels = theta.channels();
    row.horizon = config.horizon;
    row.users = config.users;
    row.bandwidth = config.bandwidth;
    row.replications = config.replications;
    row.seed = config.seed;
    row.mean_bits = measured.per_user_mean_bits[u];
    round_row(row);
    out.rows.push_back(std::move(row));
  }

  // Unilateral deviations from the rounded equilibrium allocation.
  const std::vector<int> allocation = round_allocation(eq.nash_tau, config.users);
  double best_gain = -std::numeric_limits<double>::infinity();
  for (int from = 0; from < theta.channels(); ++from) {
    if (allocation[from] < 1) continue;
    for (int to = 0; to < theta.channels(); ++to) {
      if (to == from) continue;
      best_gain = std::max(best_gain, deviation_gain(theta, allocation, from, to).gain);
    }
  }

  out.report = {
      {"mode", "multiuser"},
      {"experiment", config.experiment},
      {"channels", theta.channels()},
      {"horizon", config.horizon},
      {"users", config.users},
      {"bandwidth", config.bandwidth},
      {"replications", config.replications},
      {"seed", config.seed},
      {"user_rule", config.user_rule},
      {"mean_per_user_bits", json_number(measured.mean_per_user_bits)},
      {"per_user_ci_half_width", json_number(measured.per_user_ci_half_width)},
      {"mean_total_bits", json_number(measured.mean_total_bits)},
      {"centralized_total", json_number(measured.centralized_total)},
      {"mean_loss", json_number(measured.mean_loss)},
      {"loss_ci_half_width", json_number(measured.loss_ci_half_width)},
      {"selection_frequency", measured.selection_frequency},
      {"equilibrium",
       {{"kkt_p", eq.kkt.p.p},
        {"kkt_lambda", json_number(eq.kkt.lambda)},
        {"nash_tau", eq.nash_tau},
        {"nash_win_probability", json_number(eq.nash_win_prob)},
        {"kkt_throughput", throughput_json(eq.kkt_throughput)},
        {"nash_throughput", throughput_json(eq.nash_throughput)},
        {"c1", json_number(eq.c1)},
        {"c2", json_number(eq.c2)},
        {"kkt_best_deviation_gain", json_number(eq.kkt_best_deviation_gain)}}},
      {"nash_deviation",
       {{"allocation", allocation},
        {"best_gain", json_number(best_gain)},
        {"all_deviations_lose", best_gain < 0.0}}}};

  if (config.trace) {
    SlotTrace trace;
    std::vector<std::unique_ptr<UserStrategy>> strategies;
    for (int u = 0; u < config.users; ++u) strategies.push_back(factory(u));
    run_multiuser_block(theta, config.bandwidth, config.horizon, strategies, config.seed,
                        0, &trace);
    out.report["trace"] = trace_json(trace);
  }
  return out;
}

inline ExperimentOutput run_sweep(const ExperimentConfig& config) {
  ExperimentOutput out;
  out.report = {{"mode", "sweep"},
                {"experiment", config.experiment},
                {"variable", config.sweep->variable},
                {"inner_mode", config.sweep->mode},
                {"points", nlohmann::json::array()}};
  for (long value : config.sweep->values) {
    ExperimentConfig inner = config;
    inner.mode = config.sweep->mode;
    inner.sweep.reset();
    if (config.sweep->variable == "horizon")
      inner.horizon = value;
    else
      inner.users = static_cast<int>(value);
    if (inner.mode == "multiuser" && inner.users < 1)
      throw ConfigInvalid("users: required for mode 'multiuser'");
    ExperimentOutput point = run_experiment(inner);
    out.report["points"].push_back(
        {{"value", value}, {"report", std::move(point.report)}});
    for (auto& row : point.rows) out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace detail

// Runs one experiment. Deterministic for a fixed config: every replication
// draws from streams composed of (seed, replication, role), so the output is
// independent of the thread count and stable when replications are added.
inline ExperimentOutput run_experiment(const ExperimentConfig& config) {
  if (config.mode == "optimal-dp") return detail::run_dp(config);
  if (config.mode == "simulate") return detail::run_simulate(config);
  if (config.mode == "multiuser") return detail::run_multiuser_mode(config);
  if (config.mode == "sweep") return detail::run_sweep(config);
  throw ConfigInvalid("mode: expected optimal-dp, simulate, multiuser or sweep");
}

namespace detail {

inline std::string csv_cell(const std::optional<double>& v) {
  return v ? format_sig(*v) : std::string();
}

inline std::string csv_cell(const std::optional<long>& v) {
  return v ? std::to_string(*v) : std::string();
}

inline std::optional<double> parse_double_cell(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end != cell.c_str() + cell.size())
    throw IoError("results: malformed numeric cell '" + cell + "'");
  return v;
}

inline std::optional<long> parse_long_cell(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  return std::stol(cell);
}

inline nlohmann::json row_json(const ResultRow& r) {
  nlohmann::json j;
  j["experiment"] = r.experiment;
  j["mode"] = r.mode;
  j["strategy"] = r.strategy;
  const auto put_long = [&](const char* key, const std::optional<long>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  const auto put_double = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? json_number(*v) : nlohmann::json(nullptr);
  };
  put_long("user", r.user);
  j["channels"] = r.channels;
  put_long("horizon", r.horizon);
  put_long("users", r.users);
  put_long("width", r.width);
  j["bandwidth"] = r.bandwidth;
  j["replications"] = r.replications;
  j["seed"] = r.seed;
  put_double("genie_value", r.genie_value);
  put_double("mean_bits", r.mean_bits);
  put_double("mean_loss", r.mean_loss);
  put_double("ci_half_width", r.ci_half_width);
  put_double("suboptimal_senses", r.suboptimal_senses);
  put_double("lower_bound", r.lower_bound);
  put_double("c1", r.c1);
  put_double("c2", r.c2);
  put_double("vstar", r.vstar);
  j["vstar_exact"] = r.vstar_exact ? nlohmann::json(*r.vstar_exact) : nlohmann::json(nullptr);
  put_double("myopic", r.myopic);
  put_long("first_action", r.first_action);
  return j;
}

inline std::optional<double> json_double_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (j.at(key).is_string()) return parse_double_cell(j.at(key).get<std::string>());
  return j.at(key).get<double>();
}

inline std::optional<long> json_long_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<long>();
}

inline ResultRow row_from_json(const nlohmann::json& j) {
  ResultRow r;
  r.experiment = j.value("experiment", "");
  r.mode = j.value("mode", "");
  r.strategy = j.value("strategy", "");
  r.user = json_long_field(j, "user");
  r.channels = j.value("channels", 0L);
  r.horizon = json_long_field(j, "horizon");
  r.users = json_long_field(j, "users");
  r.width = json_long_field(j, "width");
  r.bandwidth = j.value("bandwidth", 0.0);
  r.replications = j.value("replications", 0L);
  r.seed = j.value("seed", std::uint64_t{0});
  r.genie_value = json_double_field(j, "genie_value");
  r.mean_bits = json_double_field(j, "mean_bits");
  r.mean_loss = json_double_field(j, "mean_loss");
  r.ci_half_width = json_double_field(j, "ci_half_width");
  r.suboptimal_senses = json_double_field(j, "suboptimal_senses");
  r.lower_bound = json_double_field(j, "lower_bound");
  r.c1 = json_double_field(j, "c1");
  r.c2 = json_double_field(j, "c2");
  r.vstar = json_double_field(j, "vstar");
  if (j.contains("vstar_exact") && !j.at("vstar_exact").is_null())
    r.vstar_exact = j.at("vstar_exact").get<std::string>();
  r.myopic = json_double_field(j, "myopic");
  r.first_action = json_long_field(j, "first_action");
  return r;
}

}  // namespace detail

// Serializes rows in the fixed column order; floats carry 12 significant
// digits. Emitting nothing is an error, not an empty document.
inline void emit_results(std::ostream& os, std::span<const ResultRow> rows,
                         OutputFormat format) {
  if (rows.empty()) throw IoError("results: no rows to emit");
  if (format == OutputFormat::csv) {
    os << kCsvHeader << '\n';
    for (const ResultRow& r : rows) {
      os << r.experiment << ',' << r.mode << ',' << r.strategy << ','
         << detail::csv_cell(r.user) << ',' << r.channels << ','
         << detail::csv_cell(r.horizon) << ',' << detail::csv_cell(r.users) << ','
         << detail::csv_cell(r.width) << ',' << format_sig(r.bandwidth) << ','
         << r.replications << ',' << r.seed << ','
         << detail::csv_cell(r.genie_value) << ',' << detail::csv_cell(r.mean_bits)
         << ',' << detail::csv_cell(r.mean_loss) << ','
         << detail::csv_cell(r.ci_half_width) << ','
         << detail::csv_cell(r.suboptimal_senses) << ','
         << detail::csv_cell(r.lower_bound) << ',' << detail::csv_cell(r.c1) << ','
         << detail::csv_cell(r.c2) << ',' << detail::csv_cell(r.vstar) << ','
         << (r.vstar_exact ? *r.vstar_exact : std::string()) << ','
         << detail::csv_cell(r.myopic) << ',' << detail::csv_cell(r.first_action)
         << '\n';
    }
    return;
  }
  nlohmann::json doc;
  doc["schema"] = "bml-results-1";
  doc["rows"] = nlohmann::json::array();
  for (const ResultRow& r : rows) doc["rows"].push_back(detail::row_json(r));
  os << doc.dump(2) << '\n';
}

inline std::vector<ResultRow> parse_results(std::istream& is, OutputFormat format) {
  std::vector<ResultRow> rows;
  if (format == OutputFormat::csv) {
    std::string line;
    if (!std::getline(is, line)) throw IoError("results: empty document");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCsvHeader) throw IoError("results: unrecognized CSV header");
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> cells;
      std::string cell;
      std::stringstream ss(line);
      while (std::getline(ss, cell, ',')) cells.push_back(cell);
      cells.resize(23);
      ResultRow r;
      r.experiment = cells[0];
      r.mode = cells[1];
      r.strategy = cells[2];
      r.user = detail::parse_long_cell(cells[3]);
      r.channels = cells[4].empty() ? 0 : std::stol(cells[4]);
      r.horizon = detail::parse_long_cell(cells[5]);
      r.users = detail::parse_long_cell(cells[6]);
      r.width = detail::parse_long_cell(cells[7]);
      r.bandwidth = detail::parse_double_cell(cells[8]).value_or(0.0);
      r.replications = cells[9].empty() ? 0 : std::stol(cells[9]);
      r.seed = cells[10].empty() ? 0 : std::stoull(cells[10]);
      r.genie_value = detail::parse_double_cell(cells[11]);
      r.mean_bits = detail::parse_double_cell(cells[12]);
      r.mean_loss = detail::parse_double_cell(cells[13]);
      r.ci_half_width = detail::parse_double_cell(cells[14]);
      r.suboptimal_senses = detail::parse_double_cell(cells[15]);
      r.lower_bound = detail::parse_double_cell(cells[16]);
      r.c1 = detail::parse_double_cell(cells[17]);
      r.c2 = detail::parse_double_cell(cells[18]);
      r.vstar = detail::parse_double_cell(cells[19]);
      if (!cells[20].empty()) r.vstar_exact = cells[20];
      r.myopic = detail::parse_double_cell(cells[21]);
      r.first_action = detail::parse_long_cell(cells[22]);
      rows.push_back(std::move(r));
    }
    if (rows.empty()) throw IoError("results: no rows in document");
    return rows;
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("results: invalid JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("schema", "") != "bml-results-1" ||
      !doc.contains("rows") || !doc.at("rows").is_array())
    throw IoError("results: expected a bml-results-1 document");
  for (const auto& j : doc.at("rows")) rows.push_back(detail::row_from_json(j));
  if (rows.empty()) throw IoError("results: no rows in document");
  return rows;
}

// Named ready-to-run configurations; `bml fixtures` lists and exports them.
inline const std::map<std::string, nlohmann::json>& bundled_fixtures() {
  static const std::map<std::string, nlohmann::json> fixtures = [] {
    std::map<std::string, nlohmann::json> m;
    m["example1"] = nlohmann::json::parse(R"({
      "experiment": "example1",
      "mode": "optimal-dp",
      "bandwidth": 100,
      "horizon": 2,
      "exact": true,
      "prior": {"atoms": [
        {"theta": ["1/10", "0"], "weight": "4/5"},
        {"theta": ["4/5", "1"], "weight": "1/5"}
      ]}
    })");
    m["twouser-closed-form"] = nlohmann::json::parse(R"({
      "experiment": "twouser-closed-form",
      "mode": "multiuser",
      "bandwidth": 1,
      "horizon": 10000,
      "theta": [0.6, 0.3],
      "users": 2,
      "user_rule": "kkt",
      "replications": 200,
      "seed": 7
    })");
    m["nash-decay"] = nlohmann::json::parse(R"({
      "experiment": "nash-decay",
      "mode": "sweep",
      "bandwidth": 1,
      "horizon": 1000,
      "theta": [0.9, 0.5, 0.1],
      "user_rule": "nash",
      "replications": 50,
      "seed": 11,
      "sweep": {"mode": "multiuser", "variable": "users",
                "values": [20, 60, 100, 140, 200]}
    })");
    m["ucb-order"] = nlohmann::json::parse(R"({
      "experiment": "ucb-order",
      "mode": "sweep",
      "bandwidth": 1,
      "theta": [0.9, 0.5],
      "strategies": ["ucb1", "random", "stay-with-winner"],
      "replications": 200,
      "seed": 3,
      "sweep": {"mode": "simulate", "variable": "horizon",
                "values": [1000, 10000, 100000]}
    })");
    m["multi-channel-order"] = nlohmann::json::parse(R"({
      "experiment": "multi-channel-order",
      "mode": "sweep",
      "bandwidth": 1,
      "theta": [0.9, 0.8, 0.3, 0.2],
      "strategies": [{"name": "ucb-multi", "width": 2}],
      "replications": 200,
      "seed": 5,
      "sweep": {"mode": "simulate", "variable": "horizon",
                "values": [1000, 10000, 100000]}
    })");
    m["adaptive-rule2"] = nlohmann::json::parse(R"({
      "experiment": "adaptive-rule2",
      "mode": "multiuser",
      "bandwidth": 1,
      "horizon": 100000,
      "theta": [0.6, 0.3, 0.1],
      "users": 4,
      "user_rule": "freq-match",
      "replications": 20,
      "seed": 13
    })");
    m["adaptive-rule3"] = nlohmann::json::parse(R"({
      "experiment": "adaptive-rule3",
      "mode": "multiuser",
      "bandwidth": 1,
      "horizon": 100000,
      "theta": [0.6, 0.3, 0.1],
      "users": 4,
      "user_rule": "adaptive-kkt",
      "replications": 20,
      "seed": 17
    })");
    m["stay-winner-stationary"] = nlohmann::json::parse(R"({
      "experiment": "stay-winner-stationary",
      "mode": "simulate",
      "bandwidth": 1,
      "horizon": 100000,
      "theta": [0.8, 0.5],
      "strategies": ["stay-with-winner-optimistic"],
      "replications": 20,
      "seed": 19
    })");
    m["nash-deviation"] = nlohmann::json::parse(R"({
      "experiment": "nash-deviation",
      "mode": "multiuser",
      "bandwidth": 1,
      "horizon": 1000,
      "theta": [0.2, 0.3, 0.5],
      "users": 10,
      "user_rule": "nash",
      "replications": 50,
      "seed": 23
    })");
    return m;
  }();
  return fixtures;
}

}  // namespace bml

#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include <bml/bml.hpp>

using namespace bml;
using nlohmann::json;

namespace {

std::string error_message(const json& config) {
  try {
    parse_config(config);
  } catch (const ConfigInvalid& e) {
    return e.what();
  }
  return "";
}

json simulate_config() {
  return json{{"experiment", "small"},
              {"mode", "simulate"},
              {"bandwidth", 1},
              {"horizon", 60},
              {"theta", {0.9, 0.5}},
              {"strategies", {"random", "ucb1"}},
              {"replications", 6},
              {"seed", 2}};
}

json multiuser_config() {
  return json{{"experiment", "game"},
              {"mode", "multiuser"},
              {"bandwidth", 1},
              {"horizon", 200},
              {"theta", {0.6, 0.3, 0.1}},
              {"users", 3},
              {"user_rule", "freq-match"},
              {"replications", 5},
              {"seed", 9}};
}

}  // namespace

TEST_CASE("config fields are validated one by one") {
  CHECK(error_message(json::array()) == "config: expected a JSON object");
  CHECK_THROWS_AS(parse_config(json{{"horizon", 5}}), ConfigInvalid);
  CHECK(error_message(json{{"mode", "simulate"}, {"bogus", 1}}).find("bogus") !=
        std::string::npos);
  CHECK(error_message(json{{"mode", "warp"}}).find("mode") != std::string::npos);

  json c = simulate_config();
  c["horizon"] = 0;
  CHECK(error_message(c).find("horizon") != std::string::npos);
  c = simulate_config();
  c.erase("strategies");
  CHECK(error_message(c).find("strategies") != std::string::npos);
  c = simulate_config();
  c["strategies"] = {"teleport"};
  CHECK(error_message(c).find("teleport") != std::string::npos);
  c = simulate_config();
  c["strategies"] = {"dp-optimal"};
  CHECK(error_message(c).find("prior") != std::string::npos);
  c = simulate_config();
  c.erase("theta");
  CHECK(error_message(c).find("theta") != std::string::npos);
  c = simulate_config();
  c["replications"] = 0;
  CHECK(error_message(c).find("replications") != std::string::npos);
  c = simulate_config();
  c["seed"] = -1;
  CHECK(error_message(c).find("seed") != std::string::npos);
  c = simulate_config();
  c["bandwidth"] = 0;
  CHECK(error_message(c).find("bandwidth") != std::string::npos);

  json m = multiuser_config();
  m.erase("users");
  CHECK(error_message(m).find("users") != std::string::npos);
  m = multiuser_config();
  m.erase("user_rule");
  CHECK(error_message(m).find("user_rule") != std::string::npos);
  m = multiuser_config();
  m["user_rule"] = "fixed";
  CHECK(error_message(m).find("mix") != std::string::npos);
  m = multiuser_config();
  m["user_rule"] = "fixed";
  m["mix"] = {0.5, 0.5};
  CHECK(error_message(m).find("mix") != std::string::npos);  // wrong channel count
  m["mix"] = {0.5, 0.4, 0.1};
  CHECK_NOTHROW(parse_config(m));

  json p = {{"mode", "optimal-dp"}, {"horizon", 2}};
  CHECK(error_message(p).find("prior") != std::string::npos);
  p["prior"] = {{"atoms", json::array()}};
  CHECK(error_message(p).find("atoms") != std::string::npos);
  p["prior"] = {{"atoms", {{{"theta", {"1/2"}}, {"weight", "3/2"}}}}};
  CHECK(error_message(p).find("prior") != std::string::npos);  // weights must sum to 1

  json s = {{"mode", "sweep"}, {"horizon", 10}};
  CHECK(error_message(s).find("sweep") != std::string::npos);
  s["sweep"] = {{"mode", "simulate"}, {"variable", "users"}, {"values", {2, 3}}};
  CHECK(error_message(s).find("users") != std::string::npos);
  s["theta"] = {0.9, 0.5};
  s["strategies"] = {"random"};
  s["sweep"] = {{"mode", "simulate"}, {"variable", "horizon"}, {"values", {10, 20}}};
  s.erase("horizon");
  CHECK_NOTHROW(parse_config(s));  // swept variable may be absent at top level

  json t = simulate_config();
  t["sweep"] = {{"mode", "simulate"}, {"variable", "horizon"}, {"values", {10}}};
  CHECK(error_message(t).find("sweep") != std::string::npos);

  CHECK_THROWS_AS(parse_config_text("{unbalanced"), ConfigInvalid);
  CHECK_THROWS_AS(parse_format("yaml"), ConfigInvalid);
  CHECK(parse_format("csv") == OutputFormat::csv);
  CHECK(parse_format("json") == OutputFormat::json);
}

TEST_CASE("every bundled fixture parses") {
  const auto& fixtures = bundled_fixtures();
  CHECK(fixtures.size() == 9);
  for (const auto& [name, config] : fixtures) {
    INFO(name);
    CHECK_NOTHROW(parse_config(config));
  }
  CHECK(fixtures.count("example1") == 1);
  CHECK(fixtures.count("nash-decay") == 1);
}

TEST_CASE("the worked planning example produces its known report") {
  const ExperimentConfig config = parse_config(bundled_fixtures().at("example1"));
  const ExperimentOutput out = run_experiment(config);
  REQUIRE(out.rows.size() == 1);
  const ResultRow& row = out.rows[0];
  CHECK(row.experiment == "example1");
  CHECK(row.mode == "optimal-dp");
  CHECK(row.channels == 2);
  CHECK(row.horizon == 2);
  CHECK(row.vstar == 50.4);
  CHECK(row.vstar_exact == "252/5");
  CHECK(row.myopic == 48.0);
  CHECK(row.first_action == 1);
  CHECK(out.report.at("after_free") == 2);
  CHECK(out.report.at("after_busy") == 1);
  CHECK(out.report.at("states") == 14);
  CHECK(out.report.at("planning_gain").get<double>() == Catch::Approx(2.4));

  ExperimentConfig approx = config;
  approx.exact = false;
  const ExperimentOutput fast = run_experiment(approx);
  CHECK_FALSE(fast.rows[0].vstar_exact.has_value());
  CHECK(*fast.rows[0].vstar == Catch::Approx(50.4).margin(1e-9));
}

TEST_CASE("rows survive both serialization formats unchanged") {
  std::vector<ResultRow> rows;
  for (const json& config : {json(bundled_fixtures().at("example1")), simulate_config(),
                             multiuser_config()}) {
    const ExperimentOutput out = run_experiment(parse_config(config));
    rows.insert(rows.end(), out.rows.begin(), out.rows.end());
  }
  REQUIRE(rows.size() == 1 + 2 + 4);

  for (OutputFormat format : {OutputFormat::csv, OutputFormat::json}) {
    std::stringstream ss;
    emit_results(ss, rows, format);
    const std::vector<ResultRow> back = parse_results(ss, format);
    REQUIRE(back.size() == rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      INFO(i);
      CHECK(back[i] == rows[i]);
    }
  }
}

TEST_CASE("serialization rejects empty and malformed documents") {
  std::stringstream empty;
  CHECK_THROWS_AS(emit_results(empty, std::vector<ResultRow>{}, OutputFormat::csv),
                  IoError);
  std::stringstream blank;
  CHECK_THROWS_AS(parse_results(blank, OutputFormat::csv), IoError);
  std::stringstream wrong("not,the,header\n1,2,3\n");
  CHECK_THROWS_AS(parse_results(wrong, OutputFormat::csv), IoError);
  std::stringstream header_only(std::string(kCsvHeader) + "\n");
  CHECK_THROWS_AS(parse_results(header_only, OutputFormat::csv), IoError);
  std::stringstream garbage("{\"schema\": \"other\"}");
  CHECK_THROWS_AS(parse_results(garbage, OutputFormat::json), IoError);
  std::stringstream invalid("][");
  CHECK_THROWS_AS(parse_results(invalid, OutputFormat::json), IoError);
}

TEST_CASE("experiments are deterministic and thread-count independent") {
  json config = multiuser_config();
  const auto render = [&](int threads) {
    config["threads"] = threads;
    const ExperimentOutput out = run_experiment(parse_config(config));
    std::stringstream ss;
    emit_results(ss, out.rows, OutputFormat::csv);
    return ss.str();
  };
  const std::string one = render(1);
  CHECK(render(4) == one);
  CHECK(render(1) == one);
}

TEST_CASE("a prior without ground truth runs in average-case mode") {
  const json config = {
      {"experiment", "avg"},
      {"mode", "simulate"},
      {"bandwidth", 1},
      {"horizon", 100},
      {"replications", 10},
      {"seed", 6},
      {"strategies", {"ucb1", "myopic-bayes"}},
      {"prior",
       {{"atoms",
         {{{"theta", {"9/10", "1/10"}}, {"weight", "1/2"}},
          {{"theta", {"1/10", "9/10"}}, {"weight", "1/2"}}}}}}};
  const ExperimentOutput out = run_experiment(parse_config(config));
  REQUIRE(out.rows.size() == 2);
  for (const ResultRow& row : out.rows) {
    CHECK(row.genie_value == 90.0);  // best channel is 0.9 under every draw
    CHECK_FALSE(row.suboptimal_senses.has_value());
    CHECK_FALSE(row.lower_bound.has_value());
    CHECK(*row.mean_loss >= 0.0);
    CHECK(*row.mean_bits > 0.0);
  }
}

TEST_CASE("ground-truth simulation reports regret diagnostics") {
  const ExperimentOutput out = run_experiment(parse_config(simulate_config()));
  REQUIRE(out.rows.size() == 2);
  CHECK(out.rows[0].strategy == "random");
  CHECK(out.rows[1].strategy == "ucb1");
  for (const ResultRow& row : out.rows) {
    CHECK(row.genie_value == Catch::Approx(54.0));  // 0.9 * 60
    CHECK(row.suboptimal_senses.has_value());
    CHECK(*row.lower_bound == Catch::Approx(0.783046075588487).epsilon(1e-9));
  }
  CHECK(out.report.at("lower_bound_constant").get<double>() ==
        Catch::Approx(*out.rows[0].lower_bound).margin(1e-9));
}

TEST_CASE("traces replay the first replication slot by slot") {
  json sim = simulate_config();
  sim["trace"] = true;
  sim["strategies"] = {"ucb1"};
  const ExperimentOutput out = run_experiment(parse_config(sim));
  const json& trace = out.report.at("strategies").at(0).at("trace");
  REQUIRE(trace.size() == 60);
  CHECK(trace.at(0).size() == 1);
  const int first = trace.at(0).at(0).at(0).get<int>();
  CHECK((first == 1 || first == 2));

  json multi = multiuser_config();
  multi["trace"] = true;
  const ExperimentOutput game = run_experiment(parse_config(multi));
  CHECK(game.report.at("trace").size() == 200);
}

TEST_CASE("the contention game reports equilibrium context") {
  const ExperimentOutput out = run_experiment(parse_config(multiuser_config()));
  REQUIRE(out.rows.size() == 4);
  const ResultRow& total = out.rows[0];
  CHECK_FALSE(total.user.has_value());
  CHECK(total.users == 3);
  CHECK(total.c1.has_value());
  CHECK(total.c2.has_value());
  for (int u = 1; u <= 3; ++u) {
    CHECK(out.rows[u].user == u);
    CHECK(out.rows[u].mean_bits.has_value());
  }
  const json& eq = out.report.at("equilibrium");
  CHECK(eq.at("kkt_p").size() == 3);
  CHECK(eq.at("nash_tau").at(0).get<double>() == Catch::Approx(0.6));
  CHECK(out.report.at("nash_deviation").at("all_deviations_lose").get<bool>());
  CHECK(out.report.at("selection_frequency").size() == 3);
}

TEST_CASE("sweeps concatenate the inner experiment across values") {
  json s = {{"experiment", "ramp"},
            {"mode", "sweep"},
            {"bandwidth", 1},
            {"theta", {0.9, 0.5}},
            {"strategies", {"random"}},
            {"replications", 4},
            {"seed", 8},
            {"sweep", {{"mode", "simulate"}, {"variable", "horizon"}, {"values", {10, 20}}}}};
  const ExperimentOutput out = run_experiment(parse_config(s));
  REQUIRE(out.rows.size() == 2);
  CHECK(out.rows[0].horizon == 10);
  CHECK(out.rows[1].horizon == 20);
  CHECK(out.report.at("points").size() == 2);
  CHECK(out.report.at("points").at(1).at("value") == 20);

  json u = {{"experiment", "crowd"},
            {"mode", "sweep"},
            {"bandwidth", 1},
            {"horizon", 50},
            {"theta", {0.6, 0.3, 0.1}},
            {"user_rule", "nash"},
            {"replications", 3},
            {"seed", 4},
            {"sweep", {{"mode", "multiuser"}, {"variable", "users"}, {"values", {2, 3}}}}};
  const ExperimentOutput crowd = run_experiment(parse_config(u));
  REQUIRE(crowd.rows.size() == (1 + 2) + (1 + 3));
  CHECK(crowd.rows[0].users == 2);
  CHECK(crowd.rows[3].users == 3);
}

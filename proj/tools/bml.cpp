// bml: competitive channel-sensing simulator.
//
// Subcommands mirror the experiment modes; configs are JSON files or bundled
// fixtures. Rows go to --out (default stdout) as CSV or JSON, the detailed
// report to --report. Failures print a JSON error object to stderr.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include <bml/bml.hpp>

namespace {

struct CommandOptions {
  std::string config_path;
  std::string fixture;
  std::string out;
  std::string report;
  std::string format = "csv";
  long seed = -1;
  int threads = -1;
  bool trace = false;
};

nlohmann::json load_config_json(const CommandOptions& options) {
  if (options.config_path.empty() == options.fixture.empty())
    throw bml::ConfigInvalid("give exactly one of --config and --fixture");
  if (!options.fixture.empty()) {
    const auto& fixtures = bml::bundled_fixtures();
    const auto it = fixtures.find(options.fixture);
    if (it == fixtures.end())
      throw bml::ConfigInvalid("unknown fixture '" + options.fixture +
                               "' (run 'bml fixtures' for the list)");
    return it->second;
  }
  std::ifstream in(options.config_path);
  if (!in)
    throw bml::IoError("cannot read config file '" + options.config_path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buffer.str());
  } catch (const nlohmann::json::exception& e) {
    throw bml::ConfigInvalid(std::string("config: invalid JSON: ") + e.what());
  }
  return j;
}

void run_command(const std::string& mode, const CommandOptions& options) {
  nlohmann::json j = load_config_json(options);
  if (!j.is_object()) throw bml::ConfigInvalid("config: expected a JSON object");
  if (j.value("mode", mode) != mode)
    throw bml::ConfigInvalid("mode: config says '" + j.value("mode", "") +
                             "' but the subcommand is '" + mode + "'");
  j["mode"] = mode;
  if (options.seed >= 0) j["seed"] = options.seed;
  if (options.threads >= 0) j["threads"] = options.threads;
  if (options.trace) j["trace"] = true;

  const bml::ExperimentConfig config = bml::parse_config(j);
  const bml::ExperimentOutput output = bml::run_experiment(config);

  const bml::OutputFormat format = bml::parse_format(options.format);
  if (options.out.empty()) {
    bml::emit_results(std::cout, output.rows, format);
  } else {
    std::ofstream file(options.out);
    if (!file) throw bml::IoError("cannot open output file '" + options.out + "'");
    bml::emit_results(file, output.rows, format);
  }
  if (!options.report.empty()) {
    if (options.report == "-") {
      std::cout << output.report.dump(2) << '\n';
    } else {
      std::ofstream file(options.report);
      if (!file)
        throw bml::IoError("cannot open report file '" + options.report + "'");
      file << output.report.dump(2) << '\n';
    }
  }
}

void add_run_subcommand(CLI::App& app, const std::string& mode,
                        const std::string& description) {
  auto* sub = app.add_subcommand(mode, description);
  auto options = std::make_shared<CommandOptions>();
  sub->add_option("--config", options->config_path, "path to a JSON experiment config");
  sub->add_option("--fixture", options->fixture, "name of a bundled fixture config");
  sub->add_option("--out", options->out, "write result rows here (default stdout)");
  sub->add_option("--report", options->report,
                  "write the detailed JSON report here ('-' for stdout)");
  sub->add_option("--format", options->format, "row format: csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
  sub->add_option("--seed", options->seed, "override the config seed");
  sub->add_option("--threads", options->threads,
                  "worker threads for replications (0 = hardware)");
  sub->add_flag("--trace", options->trace,
                "embed the first replication's sensing trace in the report");
  sub->callback([mode, options] { run_command(mode, *options); });
}

void add_fixtures_subcommand(CLI::App& app) {
  auto* sub = app.add_subcommand("fixtures", "list or export the bundled configs");
  auto write_dir = std::make_shared<std::string>();
  auto show = std::make_shared<std::string>();
  sub->add_option("--write", *write_dir, "write every fixture as DIR/<name>.json");
  sub->add_option("--show", *show, "print one fixture's JSON");
  sub->callback([write_dir, show] {
    const auto& fixtures = bml::bundled_fixtures();
    if (!show->empty()) {
      const auto it = fixtures.find(*show);
      if (it == fixtures.end())
        throw bml::ConfigInvalid("unknown fixture '" + *show + "'");
      std::cout << it->second.dump(2) << '\n';
      return;
    }
    if (!write_dir->empty()) {
      std::filesystem::create_directories(*write_dir);
      for (const auto& [name, config] : fixtures) {
        const std::filesystem::path path =
            std::filesystem::path(*write_dir) / (name + ".json");
        std::ofstream file(path);
        if (!file) throw bml::IoError("cannot write '" + path.string() + "'");
        file << config.dump(2) << '\n';
        std::cout << path.string() << '\n';
      }
      return;
    }
    for (const auto& [name, config] : fixtures) std::cout << name << '\n';
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"competitive channel-sensing: planning, index rules, contention"};
  app.require_subcommand(1);
  add_run_subcommand(app, "optimal-dp",
                     "exact block planning from a mixture prior");
  add_run_subcommand(app, "simulate", "single-user strategy loss over a block");
  add_run_subcommand(app, "multiuser", "contention game of several users");
  add_run_subcommand(app, "sweep", "repeat an experiment over horizons or user counts");
  add_fixtures_subcommand(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const bml::Error& e) {
    nlohmann::json err = {{"error", {{"kind", e.kind()}, {"message", e.what()}}}};
    std::cerr << err.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", {{"kind", "internal"}, {"message", e.what()}}}};
    std::cerr << err.dump() << '\n';
    return 1;
  }
  return 0;
}

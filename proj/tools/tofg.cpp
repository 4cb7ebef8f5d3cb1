#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tofg/cli.hpp"

namespace {

using namespace tofg;

struct Common {
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string config_path;
  std::string out;
  bool verbose = false;
  bool quiet = false;

  cli::RunConfig config() const {
    return cli::load_config(config_path.empty() ? std::nullopt : std::optional<std::string>(config_path));
  }
};

void add_common(CLI::App* cmd, Common& c, bool with_jobs) {
  cmd->add_option("--seed", c.seed, "Seed for every random draw")->capture_default_str();
  if (with_jobs) cmd->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "Output path")->required();
}

std::optional<int> opt_int(const CLI::Option* o, int v) { return o->count() ? std::optional<int>(v) : std::nullopt; }
std::optional<std::string> opt_str(const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string>(s); }

}  // namespace

int main(int argc, char** argv) {
  tofg::cli::tune_allocator();
  CLI::App app{"Temporal occupancy flow graph toolkit"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");

  Common common;

  auto* gen = app.add_subcommand("gen-scenarios", "Generate synthetic scenarios");
  std::string kind;
  int count = 1;
  gen->add_option("--kind", kind, "straight | curve | lane_change | overtake")->required();
  gen->add_option("--count", count, "Number of scenarios")->capture_default_str();
  add_common(gen, common, false);

  auto* build = app.add_subcommand("build-graph", "Build a TOFG and export it as JSON");
  std::string scenario;
  int first = 0, last = 0;
  build->add_option("--scenario", scenario, "Scenario JSON")->required();
  auto* first_opt = build->add_option("--first", first, "First frame (default: last - T + 1)");
  auto* last_opt = build->add_option("--last", last, "Last frame (default: ego's last frame)");
  add_common(build, common, false);

  auto* train = app.add_subcommand("train", "Train the planner by imitation");
  std::vector<std::string> inputs;
  std::string init;
  train->add_option("--scenarios", inputs, "Scenario files or directories")->required();
  train->add_option("--init", init, "Checkpoint to resume from")->check(CLI::ExistingFile);
  add_common(train, common, false);

  auto* predict = app.add_subcommand("predict", "Predict H future ego waypoints");
  std::string checkpoint;
  int frame = 0;
  predict->add_option("--scenario", scenario, "Scenario JSON")->required();
  predict->add_option("--checkpoint", checkpoint, "Parameters (default: fresh from --seed)");
  auto* pred_frame = predict->add_option("--frame", frame, "Current frame");
  add_common(predict, common, false);

  auto* simulate = app.add_subcommand("simulate", "Closed-loop evaluation");
  std::string planner = "model";
  simulate->add_option("--scenarios", inputs, "Scenario files or directories")->required();
  simulate->add_option("--planner", planner, "model | oracle | stationary | constant_velocity")->capture_default_str();
  simulate->add_option("--checkpoint", checkpoint, "Parameters for the model planner");
  add_common(simulate, common, true);

  auto* attention = app.add_subcommand("export-attention", "Export cross-attention weights as CSV");
  attention->add_option("--scenario", scenario, "Scenario JSON")->required();
  attention->add_option("--checkpoint", checkpoint, "Parameters (default: fresh from --seed)");
  auto* att_frame = attention->add_option("--frame", frame, "Current frame");
  add_common(attention, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::kOk : cli::kUsage;
  }
  log::level() = quiet ? log::Level::kQuiet : verbose ? log::Level::kInfo : log::Level::kWarn;

  try {
    const auto config = common.config();
    if (gen->parsed()) {
      const auto k = scene::parse_kind(kind);
      if (!k) {
        std::cerr << "error: unknown scenario kind '" << kind << "'\n";
        return cli::kUsage;
      }
      const auto files = cli::cmd_gen_scenarios({*k, count, static_cast<std::int64_t>(common.seed), common.out}, config);
      std::cout << "wrote " << files.size() << " scenarios to " << common.out << '\n';
    } else if (build->parsed()) {
      const auto c = cli::cmd_build_graph({scenario, opt_int(first_opt, first), opt_int(last_opt, last), common.out}, config);
      std::cout << "nodes " << c.nodes << " geometric " << c.geometric << " multiscale " << c.multiscale
                << " interaction " << c.interaction << " temporal " << c.temporal << '\n';
    } else if (train->parsed()) {
      const auto r = cli::cmd_train({inputs, opt_str(init), common.seed, common.out}, config);
      if (!r.loss_curve.empty()) {
        std::cout << "loss " << r.loss_curve.front() << " -> " << r.loss_curve.back() << " over "
                  << r.loss_curve.size() << " epochs\n";
      }
    } else if (predict->parsed()) {
      const auto p = cli::cmd_predict({scenario, opt_str(checkpoint), opt_int(pred_frame, frame), common.seed, common.out},
                                      config);
      std::cout << "wrote " << p.waypoints.size() << " waypoints to " << common.out << '\n';
    } else if (simulate->parsed()) {
      const auto pk = cli::parse_planner(planner);
      if (!pk) {
        std::cerr << "error: unknown planner '" << planner << "'\n";
        return cli::kUsage;
      }
      const auto r = cli::cmd_simulate({inputs, *pk, opt_str(checkpoint), common.seed, common.jobs, common.out}, config);
      std::size_t failed = 0;
      for (const auto& row : r.rows) failed += row.report ? 0 : 1;
      std::cout << "simulated " << r.rows.size() - failed << "/" << r.rows.size() << " scenarios, mean M_L2 "
                << r.mean.l2.mean << '\n';
      if (failed) return cli::kValidation;
    } else if (attention->parsed()) {
      const auto m = cli::cmd_export_attention(
          {scenario, opt_str(checkpoint), opt_int(att_frame, frame), common.seed, common.out}, config);
      std::cout << "wrote " << m.size() << " attention rows to " << common.out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::exit_code_for(e);
  }
  return cli::kOk;
}

// teleop: run the server, the scripted study, or the autonomy metric on a log.

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "teleop/error.hpp"
#include "teleop/harness.hpp"
#include "teleop/metrics.hpp"
#include "teleop/server.hpp"

using namespace teleop;

namespace {

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

std::string default_workspace() { return std::string(TELEOP_DATA_DIR) + "/workspace_default.json"; }

int serve(const std::string& workspace, server::ServerConfig cfg) {
  cfg.link.validate();
  server::Server srv(world::load_workspace(workspace), cfg);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  srv.start();
  std::cout << "listening on " << cfg.host << ":" << srv.port() << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(50));
  srv.stop();
  return 0;
}

int study(const std::string& workspace, const std::string& mode, harness::StudyConfig cfg, const std::string& profile,
          double scale, const std::string& out) {
  if (!profile.empty()) {
    std::ifstream in(profile);
    if (!in) throw std::runtime_error("cannot read profile " + profile);
    cfg.profile = harness::profile_from_json(nlohmann::json::parse(in));
  }
  cfg.profile = cfg.profile.scaled(scale);
  auto ws = world::load_workspace(workspace);

  std::vector<protocol::Mode> modes;
  if (mode == "all") modes = {protocol::Mode::Tla, protocol::Mode::Pc, protocol::Mode::Cc};
  else modes = {protocol::mode_from_string(mode)};

  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw std::runtime_error("cannot write " + out);
  }
  std::ostream& os = out.empty() ? std::cout : file;
  os << harness::csv_header() << "\n";
  const std::string log = cfg.log_path;
  for (auto m : modes) {
    if (!log.empty() && modes.size() > 1) cfg.log_path = log + "." + std::string(protocol::to_string(m));
    auto r = harness::run_agent(m, ws, cfg);
    os << harness::csv_row(r) << "\n";
  }
  return 0;
}

int metrics(const std::string& log, double threshold, double gap) {
  auto periods = harness::autonomy_periods(harness::read_session_log(log), threshold, gap);
  std::cout << "start_s,end_s,duration_s\n";
  for (const auto& p : periods) std::cout << p.start << "," << p.end << "," << p.duration() << "\n";
  std::cout << "# periods " << periods.size() << ", total " << harness::total_duration(periods) << " s, mean "
            << harness::mean_duration(periods) << " s\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teleoperation simulator, study harness and metrics"};
  app.require_subcommand(1);

  std::string workspace = default_workspace();
  server::ServerConfig scfg;
  int port = 8765;
  auto* s = app.add_subcommand("serve", "Run the operator endpoint (framed TCP and WebSocket on one port)");
  s->add_option("--workspace", workspace, "Workspace JSON")->check(CLI::ExistingFile);
  s->add_option("--host", scfg.host, "Bind address");
  s->add_option("--port", port, "TCP port, 0 picks a free one")->check(CLI::Range(0, 65535));
  s->add_option("--delay-ms", scfg.link.one_way_delay_ms, "One-way injected delay");
  s->add_option("--jitter-ms", scfg.link.jitter_ms, "Uniform jitter bound, at most the delay");
  s->add_option("--state-rate", scfg.link.state_rate, "State messages per second");
  s->add_option("--seed", scfg.seed, "Seed for jitter and detection noise");
  s->add_option("--noise", scfg.noise_sigma, "Detection pose noise sigma [m]");
  s->add_option("--realtime", scfg.realtime, "Pace ticks at wall-clock speed");
  s->add_option("--log", scfg.log_path, "JSON Lines session log");

  harness::StudyConfig cfg;
  std::string mode = "all", profile, out;
  double scale = 1.0;
  auto* st = app.add_subcommand("study", "Run scripted operators and write the CSV report");
  st->add_option("--workspace", workspace, "Workspace JSON")->check(CLI::ExistingFile);
  st->add_option("--mode", mode, "tla, pc, cc or all")->check(CLI::IsMember({"tla", "pc", "cc", "all"}));
  st->add_option("--delay-ms", cfg.link.one_way_delay_ms, "One-way injected delay");
  st->add_option("--jitter-ms", cfg.link.jitter_ms, "Uniform jitter bound, at most the delay");
  st->add_option("--seed", cfg.seed, "Seed for jitter and detection noise");
  st->add_option("--budget", cfg.budget, "Session budget [s]");
  st->add_option("--profile", profile, "Latency profile JSON")->check(CLI::ExistingFile);
  st->add_option("--scale", scale, "Multiply every profile cost");
  st->add_option("--tasks", cfg.tasks, "Task ids in order")->check(CLI::Range(0, 4));
  st->add_option("--target", cfg.target_label, "Drawer label for the exploration task");
  st->add_option("--out", out, "CSV report path, stdout if omitted");
  st->add_option("--log", cfg.log_path, "JSON Lines session log (suffixed per mode with --mode all)");

  std::string log;
  double threshold = harness::kAutonomyThreshold, gap = harness::kGapTolerance;
  auto* m = app.add_subcommand("metrics", "Autonomy periods of a session log");
  m->add_option("--log", log, "JSON Lines session log")->required()->check(CLI::ExistingFile);
  m->add_option("--threshold", threshold, "Minimum period length [s]");
  m->add_option("--gap", gap, "Idle gaps up to this long do not split a period [s]");

  CLI11_PARSE(app, argc, argv);
  try {
    if (s->parsed()) {
      scfg.port = static_cast<std::uint16_t>(port);
      return serve(workspace, scfg);
    }
    if (st->parsed()) return study(workspace, mode, cfg, profile, scale, out);
    if (m->parsed()) return metrics(log, threshold, gap);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

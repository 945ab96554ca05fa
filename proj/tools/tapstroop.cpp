// tapstroop: render transients, run simulated sessions, host the session
// service, analyze logs.
//
// Exit status: 0 success, 1 domain error, 2 usage error.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tapstroop/participant.hpp"
#include "tapstroop/server.hpp"
#include "tapstroop/storage.hpp"

namespace fs = std::filesystem;
using namespace tapstroop;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

MaterialTable materials_or_default(const std::string& path) {
  return path.empty() ? placeholder_materials() : load_materials(path);
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::ParseError, path + ": " + e.what());
  }
}

std::string format_summary_text(const SessionSummary& s) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "congruent:    mean RT " << s.mean_rt_congruent_ms << " ms, accuracy " << std::setprecision(3)
      << s.accuracy_congruent << ", n " << s.n_used_congruent << '\n';
  out << std::setprecision(1);
  out << "incongruent:  mean RT " << s.mean_rt_incongruent_ms << " ms, accuracy " << std::setprecision(3)
      << s.accuracy_incongruent << ", n " << s.n_used_incongruent << '\n';
  out << std::setprecision(1);
  out << "stroop delta: " << s.stroop_delta_ms << " ms\n";
  if (s.partial) out << "partial:      yes (no SessionEnd)\n";
  return out.str();
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string material;
  double velocity = 0;
  std::string params;
  double rate = 10000;
  std::string output;
};

int run_synth(const SynthArgs& a) {
  const auto table = materials_or_default(a.params);
  SynthesisConfig cfg;
  cfg.sample_rate = a.rate;
  const auto buffer = render_transient(table[*parse_material(a.material)], a.velocity, cfg);
  if (buffer.empty()) throw Error(Errc::InsufficientData, "zero velocity renders no samples; nothing to write");
  write_wav(buffer, a.output);
  std::cout << "wrote " << buffer.size() << " samples (" << buffer.size() / a.rate * 1000.0 << " ms) to " << a.output
            << '\n';
  return 0;
}

struct SimulateArgs {
  std::uint64_t seed = 1;
  std::size_t sessions = 1;
  std::string model;
  std::string params;
  std::string output;
  std::size_t trials = 6;
  std::size_t jobs = 1;
  std::string format = "text";
  std::string trajectory;
};

int run_trajectory(const SimulateArgs& a) {
  std::ifstream in(a.trajectory);
  if (!in) throw Error(Errc::Io, "cannot open " + a.trajectory);
  DeviceSim sim(Trajectory::from_csv(in), StylusGeometry{}, DeviceConfig{});
  const auto end = sim.trajectory().points().back().t_us;
  std::cout << "tick,t_us,velocity_m_s\n";
  while (sim.now_us() < end) {
    if (auto ev = sim.step())
      std::cout << ev->tick_index << ',' << ev->timestamp_us << ',' << std::setprecision(9) << ev->velocity << '\n';
  }
  return 0;
}

int run_simulate(const SimulateArgs& a) {
  if (!a.trajectory.empty()) return run_trajectory(a);
  if (a.output.empty()) throw UsageError("simulate: -o/--output is required");
  ResponderModel base_model;
  if (!a.model.empty()) base_model = responder_model_from_json(read_json_file(a.model));
  base_model.validate();
  const auto materials = materials_or_default(a.params);
  fs::create_directories(a.output);

  std::vector<SimulatedSession> runs(a.sessions);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < a.sessions; i += stride) {
      SessionConfig cfg;
      cfg.seed = derive_seed(a.seed, 0x53494d, i);
      cfg.trials_per_condition = a.trials;
      auto model = base_model;
      model.seed = derive_seed(cfg.seed, 0x4d4f44);
      runs[i] = run_simulated_session(cfg, model, TapProfile{}, StylusGeometry{}, DeviceConfig{}, materials);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(a.jobs, a.sessions));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(work, j, jobs);
  work(0, jobs);
  for (auto& t : pool) t.join();

  double sum = 0;
  std::size_t used = 0;
  nlohmann::json per_session = nlohmann::json::array();
  for (std::size_t i = 0; i < runs.size(); ++i) {
    std::ostringstream name;
    name << "session_" << std::setw(4) << std::setfill('0') << i << ".jsonl";
    write_log(runs[i].events, fs::path(a.output) / name.str());
    if (runs[i].has_summary) {
      sum += runs[i].summary.stroop_delta_ms;
      ++used;
      per_session.push_back(to_json(runs[i].summary));
    } else {
      per_session.push_back({{"error", runs[i].summary_error}});
    }
  }
  if (used == 0) throw Error(Errc::InsufficientData, "no session produced a summary");
  const double mean = sum / static_cast<double>(used);
  if (a.format == "json") {
    std::cout << nlohmann::json{{"sessions", a.sessions}, {"sessions_used", used}, {"mean_stroop_delta_ms", mean},
                                {"per_session", per_session}}
                     .dump(2)
              << '\n';
  } else {
    std::cout << std::fixed << std::setprecision(1) << "batch mean stroop delta: " << mean << " ms over " << used
              << " of " << a.sessions << " sessions\n";
  }
  return 0;
}

struct ServeArgs {
  std::string addr = "127.0.0.1:8080";
  std::string params;
  std::string logs = "logs";
  int pings = 5;
  std::uint64_t seed = 1;
  std::size_t tokens = 1;
};

int run_serve(const ServeArgs& a) {
  const auto colon = a.addr.rfind(':');
  if (colon == std::string::npos) throw UsageError("serve: --addr must be host:port");
  unsigned long port = 0;
  try {
    port = std::stoul(a.addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("serve: bad port in --addr");
  }
  if (port > 65535) throw UsageError("serve: bad port in --addr");

  ServiceConfig cfg;
  cfg.materials = materials_or_default(a.params);
  cfg.ping_count = a.pings;
  cfg.session.seed = a.seed;
  SessionRegistry registry(cfg, a.logs);
  Server server(registry, a.addr.substr(0, colon), static_cast<unsigned short>(port));

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  server.on_session_end([](const std::string& id, bool finished) {
    std::cout << "session " << id << (finished ? " finished" : " ended early") << std::endl;
  });
  server.start();
  std::cout << "listening on " << a.addr.substr(0, colon) << ':' << server.port() << std::endl;
  for (std::size_t i = 0; i < a.tokens; ++i)
    std::cout << "session token: " << registry.issue_token() << std::endl;

  int sig = 0;
  sigwait(&set, &sig);
  server.stop();
  return 0;
}

struct AnalyzeArgs {
  std::string log;
  std::string format = "text";
};

int run_analyze(const AnalyzeArgs& a) {
  const auto summary = analyze(fs::path(a.log));
  if (a.format == "json")
    std::cout << to_json(summary).dump(2) << '\n';
  else
    std::cout << format_summary_text(summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visuo-tactile Stroop replica: transients, simulated sessions, session service, log analysis", "tapstroop"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", "tapstroop 0.1.0");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Render one contact transient to a 16-bit mono WAV");
  s->add_option("--material", synth.material, "Material to render")
      ->required()
      ->check(CLI::IsMember({"rubber", "aluminum"}));
  s->add_option("--velocity", synth.velocity, "Contact tip velocity in m/s")->required()->check(CLI::NonNegativeNumber);
  s->add_option("--params", synth.params, "Material parameter file (JSON)")
      ->envname("TAPSTROOP_PARAMS");
  s->add_option("--rate", synth.rate, "Sample rate in Hz")->capture_default_str()->check(CLI::PositiveNumber);
  s->add_option("-o,--output", synth.output, "Output WAV path")->required();

  SimulateArgs sim;
  auto* m = app.add_subcommand("simulate", "Run simulated participants through the device loop and session engine");
  m->add_option("--seed", sim.seed, "Base seed")->capture_default_str();
  m->add_option("--sessions", sim.sessions, "Number of sessions")->capture_default_str()->check(CLI::PositiveNumber);
  m->add_option("--model", sim.model, "Responder model (JSON)")->check(CLI::ExistingFile);
  m->add_option("--params", sim.params, "Material parameter file (JSON)")
      ->envname("TAPSTROOP_PARAMS");
  m->add_option("--trials", sim.trials, "Trials per condition")->capture_default_str()->check(CLI::PositiveNumber);
  m->add_option("--jobs", sim.jobs, "Sessions run in parallel")->capture_default_str()->check(CLI::PositiveNumber);
  m->add_option("--format", sim.format, "Output format")->capture_default_str()->check(CLI::IsMember({"text", "json"}));
  m->add_option("--trajectory", sim.trajectory, "Replay a t_us,angle_rad CSV through the device loop and print contacts")
      ->check(CLI::ExistingFile);
  m->add_option("-o,--output", sim.output, "Directory for session logs");

  ServeArgs serve;
  auto* v = app.add_subcommand("serve", "Host the session service (WebSocket + HTTP)");
  v->add_option("--addr", serve.addr, "Listen address host:port")->capture_default_str();
  v->add_option("--params", serve.params, "Material parameter file (JSON)")
      ->envname("TAPSTROOP_PARAMS");
  v->add_option("--logs", serve.logs, "Directory for session logs")->capture_default_str();
  v->add_option("--pings", serve.pings, "Clock calibration exchanges")->capture_default_str()->check(CLI::Range(3, 100));
  v->add_option("--seed", serve.seed, "Base seed for issued sessions")->capture_default_str();
  v->add_option("--tokens", serve.tokens, "Session tokens to issue at startup")->capture_default_str();

  AnalyzeArgs an;
  auto* z = app.add_subcommand("analyze", "Summarize a session log");
  z->add_option("log", an.log, "Session log (JSONL)")->required();
  z->add_option("--format", an.format, "Output format")->capture_default_str()->check(CLI::IsMember({"text", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    std::cout << app.version() << '\n';
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*s) return run_synth(synth);
    if (*m) return run_simulate(sim);
    if (*v) return run_serve(serve);
    return run_analyze(an);
  } catch (const UsageError& e) {
    std::cerr << "usage: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

// ledge-sim: run, validate and batch-run scenario files.
//
//   ledge-sim run fig6.scenario --seed 3 --set mode=LEDGE-PAP --out r.json --format json
//   ledge-sim validate fig6.scenario
//   ledge-sim batch scenarios/ --out-dir results/
//
// Exit codes: 0 ok, 1 run or validation failure, 2 usage error.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "ledge/simulation.hpp"

namespace fs = std::filesystem;
using namespace ledge;

namespace {

int exit_code(const Error& e) { return e.code() == ErrorCode::usage_error ? 2 : 1; }

void print_error(const Error& e) { std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n"; }

scenario::Scenario load(const std::string& path, std::optional<std::uint64_t> seed, const std::vector<std::string>& sets) {
  auto s = scenario::parse_scenario(path);
  for (const auto& kv : sets) scenario::apply_override(s, kv);
  if (seed) scenario::apply_override(s, "seed=" + std::to_string(*seed));
  return s;
}

std::string format_from(const std::string& format, const std::string& out) {
  if (!format.empty()) return format;
  if (out.size() >= 5 && out.substr(out.size() - 5) == ".json") return "json";
  return "csv";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LEDGE edge-mobility simulator"};
  app.require_subcommand(1);

  std::string scenario_path, out, format, dir, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());

  auto* run = app.add_subcommand("run", "run one scenario and emit metrics");
  run->add_option("scenario", scenario_path, "scenario file")->required();
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--set", sets, "parameter override key=value (repeatable)");
  run->add_option("--out", out, "output path (stdout when absent)");
  run->add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  auto* validate = app.add_subcommand("validate", "parse and validate a scenario");
  validate->add_option("scenario", scenario_path, "scenario file")->required();

  auto* batch = app.add_subcommand("batch", "run every *.scenario in a directory");
  batch->add_option("dir", dir, "directory of scenarios")->required()->check(CLI::ExistingDirectory);
  batch->add_option("--out-dir", out_dir, "where <name>.json reports go (default: next to the scenarios)");
  batch->add_option("--set", sets, "parameter override applied to every scenario");
  batch->add_option("--jobs", jobs, "parallel runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*validate) {
      auto s = scenario::parse_scenario(scenario_path);
      std::cout << s.name << ": ok (" << s.controllers.size() << " controllers, " << s.aps.size() << " APs, "
                << s.md_count() << " MDs, " << s.flows.size() << " flows)\n";
      return 0;
    }

    if (*run) {
      auto s = load(scenario_path, seed, sets);
      sim::Simulation sim(s);
      auto report = sim.run();
      const std::string fmt = format_from(format, out);
      if (out.empty())
        std::cout << sim::emit(report, fmt);
      else
        sim::emit_to_file(report, fmt, out);
      return 0;
    }

    if (*batch) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".scenario") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      if (out_dir.empty()) out_dir = dir;
      fs::create_directories(out_dir);

      std::atomic<std::size_t> next{0};
      std::atomic<int> failures{0};
      std::mutex io;
      auto worker = [&] {
        for (std::size_t i = next++; i < files.size(); i = next++) {
          const auto& f = files[i];
          try {
            auto s = load(f.string(), std::nullopt, sets);
            sim::Simulation sim(s);
            auto report = sim.run();
            const auto dest = fs::path(out_dir) / (s.name + ".json");
            sim::emit_to_file(report, "json", dest.string());
            std::lock_guard lock(io);
            std::cout << f.filename().string() << " -> " << dest.string() << "\n";
          } catch (const Error& e) {
            ++failures;
            std::lock_guard lock(io);
            std::cerr << f.filename().string() << ": ";
            print_error(e);
          }
        }
      };
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < std::min(jobs, files.size()); ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
      return failures ? 1 : 0;
    }
  } catch (const Error& e) {
    print_error(e);
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

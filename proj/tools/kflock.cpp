#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "kflock/scenario.hpp"

namespace {

constexpr int kPass = 0;
constexpr int kAssertionFailure = 1;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

int cmd_run(const std::string& config_path, const std::string& out, long long seed, unsigned threads) {
  kflock::ScenarioConfig cfg;
  try {
    cfg = kflock::load_config(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    kflock::validate(cfg);
  } catch (const kflock::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  const std::filesystem::path out_dir = out.empty() ? std::filesystem::path(cfg.output_dir) : std::filesystem::path(out);
  try {
    const auto outcome = kflock::run(cfg, out_dir, threads);
    for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& a : outcome.report.assertions)
      std::cout << (a.pass ? "PASS " : "FAIL ") << a.name << " value=" << kflock::fmt_num(a.value)
                << " tolerance=" << kflock::fmt_num(a.tolerance) << '\n';
    std::cout << "wrote " << outcome.files.size() << " files to " << out_dir.string() << '\n';
    return outcome.exit_code() == 0 ? kPass : kAssertionFailure;
  } catch (const kflock::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const kflock::IntegrationBlowup& e) {
    std::cerr << "aborted at step " << e.step() << ": " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << '\n';
    return kRuntimeError;
  }
}

int cmd_validate(const std::string& config_path) {
  try {
    const auto cfg = kflock::load_config(config_path);
    std::cout << kflock::dump_json17(kflock::to_json(cfg)) << '\n';
    return kPass;
  } catch (const kflock::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
}

bool numbers_close(const nlohmann::json& a, const nlohmann::json& b, double rtol, const std::string& path,
                   int& differences) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    const double scale = std::max({1.0, std::abs(x), std::abs(y)});
    if (std::abs(x - y) > rtol * scale) {
      std::cout << path << ": " << kflock::fmt_num(x) << " vs " << kflock::fmt_num(y) << '\n';
      ++differences;
      return false;
    }
    return true;
  }
  if (a.type() != b.type()) {
    std::cout << path << ": type differs\n";
    ++differences;
    return false;
  }
  if (a.is_object()) {
    bool ok = true;
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key())) {
        std::cout << path << "." << it.key() << ": missing in second report\n";
        ++differences;
        ok = false;
        continue;
      }
      ok = numbers_close(it.value(), b.at(it.key()), rtol, path + "." + it.key(), differences) && ok;
    }
    for (auto it = b.begin(); it != b.end(); ++it)
      if (!a.contains(it.key())) {
        std::cout << path << "." << it.key() << ": missing in first report\n";
        ++differences;
        ok = false;
      }
    return ok;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) {
      std::cout << path << ": length " << a.size() << " vs " << b.size() << '\n';
      ++differences;
      return false;
    }
    bool ok = true;
    for (std::size_t i = 0; i < a.size(); ++i)
      ok = numbers_close(a[i], b[i], rtol, path + "[" + std::to_string(i) + "]", differences) && ok;
    return ok;
  }
  if (a != b) {
    std::cout << path << ": " << a.dump() << " vs " << b.dump() << '\n';
    ++differences;
    return false;
  }
  return true;
}

int cmd_diff(const std::string& first, const std::string& second, double rtol) {
  nlohmann::json a, b;
  try {
    a = nlohmann::json::parse(kflock::read_text_file(first));
    b = nlohmann::json::parse(kflock::read_text_file(second));
  } catch (const std::exception& e) {
    std::cerr << "cannot read reports: " << e.what() << '\n';
    return kConfigError;
  }
  int differences = 0;
  numbers_close(a, b, rtol, "$", differences);
  if (differences == 0) {
    std::cout << "reports match\n";
    return kPass;
  }
  std::cout << differences << " differences\n";
  return kAssertionFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kflock: kinetic flocking simulations and diagnostics"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  long long seed = -1;
  unsigned threads = 1;
  auto* run = app.add_subcommand("run", "run a scenario and write outputs");
  run->add_option("--config", config_path, "scenario JSON")->required();
  run->add_option("--out", out_dir, "output directory (overrides output_dir)");
  run->add_option("--seed", seed, "scenario seed (overrides seed)");
  run->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  std::string validate_path;
  auto* val = app.add_subcommand("validate", "check a scenario and print the resolved config");
  val->add_option("--config", validate_path, "scenario JSON")->required();

  std::string first, second;
  double rtol = 0.0;
  auto* diff = app.add_subcommand("diff-reports", "compare two diagnostics.json files");
  diff->add_option("first", first)->required();
  diff->add_option("second", second)->required();
  diff->add_option("--rtol", rtol, "relative tolerance for numbers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kConfigError;
  }

  if (*run) return cmd_run(config_path, out_dir, seed, threads);
  if (*val) return cmd_validate(validate_path);
  return cmd_diff(first, second, rtol);
}

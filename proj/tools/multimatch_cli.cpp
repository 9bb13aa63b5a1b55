// Command-line front end; talks to the library only through the C API.

#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "multimatch/multimatch.h"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

int exit_code(mm_status s) {
  return s == MM_ERR_CONFIG || s == MM_ERR_INVALID_ARGUMENT ? kExitConfig : kExitRuntime;
}

int report(mm_status s) {
  std::fprintf(stderr, "error: %s\n", mm_last_error());
  return exit_code(s);
}

std::string fetch(mm_status (*fn)(const mm_experiment*, char*, size_t, size_t*),
                  const mm_experiment* e) {
  size_t len = 0;
  if (fn(e, nullptr, 0, &len) != MM_OK) return {};
  std::string out(len + 1, '\0');
  fn(e, out.data(), out.size(), &len);
  out.resize(len);
  return out;
}

int run_command(const std::string& config, const std::vector<std::string>& overrides,
                const std::string& seeds, unsigned jobs) {
  mm_experiment* e = nullptr;
  if (mm_status s = mm_experiment_new(&e); s != MM_OK) return report(s);
  auto finish = [&](int code) {
    mm_experiment_free(e);
    return code;
  };
  if (mm_status s = mm_experiment_load(e, config.c_str()); s != MM_OK) return finish(report(s));
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", o.c_str());
      return finish(kExitConfig);
    }
    auto s = mm_experiment_set(e, o.substr(0, eq).c_str(), o.substr(eq + 1).c_str());
    if (s != MM_OK) return finish(report(s));
  }
  if (!seeds.empty())
    if (mm_status s = mm_experiment_set(e, "seeds", seeds.c_str()); s != MM_OK)
      return finish(report(s));

  if (mm_status s = mm_experiment_run(e, jobs); s != MM_OK) return finish(report(s));

  const size_t runs = mm_experiment_run_count(e);
  for (size_t i = 0; i < runs; ++i) {
    mm_run_info info;
    mm_experiment_run_info(e, i, &info);
    if (info.failed) std::fprintf(stderr, "run %s failed: %s\n", info.run_id, info.failure);
  }
  std::fputs(fetch(mm_experiment_summary, e).c_str(), stdout);
  return finish(mm_experiment_failed_count(e) ? kExitRuntime : 0);
}

int rank_command(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<const char*> paths;
  for (const auto& p : inputs) paths.push_back(p.c_str());
  size_t len = 0;
  mm_status s = mm_rank(paths.data(), paths.size(), out.c_str(), nullptr, 0, &len);
  if (s != MM_OK) return report(s);
  std::string text(len + 1, '\0');
  mm_rank(paths.data(), paths.size(), out.c_str(), text.data(), text.size(), &len);
  text.resize(len);
  std::fputs(text.c_str(), stdout);
  return 0;
}

void print_keys() {
  for (size_t i = 0; i < mm_config_key_count(); ++i) {
    const char *name, *def, *help;
    mm_config_key(i, &name, &def, &help);
    std::printf("%-22s %-12s %s\n", name, *def ? def : "\"\"", help);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multimatch: semi-supervised learning experiments on synthetic tasks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mm_version());

  std::string config;
  std::vector<std::string> overrides;
  std::string seeds;
  unsigned jobs = 1;
  auto* run = app.add_subcommand("run", "run every algorithm x seed pair of a config");
  run->add_option("--config", config, "key=value config file")->required()->check(CLI::ExistingFile);
  run->add_option("--set", overrides, "override one key (key=value), repeatable");
  run->add_option("--seed", seeds, "comma-separated seeds, replaces the config's");
  run->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);

  std::vector<std::string> inputs;
  std::string out;
  auto* rank = app.add_subcommand("rank", "merge results.csv files into ranks.csv");
  rank->add_option("--inputs", inputs, "results.csv files")->required()->expected(1, -1);
  rank->add_option("--out", out, "output directory")->required();

  app.add_subcommand("keys", "list config keys and defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*run) return run_command(config, overrides, seeds, jobs);
  if (*rank) return rank_command(inputs, out);
  print_keys();
  return 0;
}

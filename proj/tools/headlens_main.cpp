#include <CLI11.hpp>
#include <malloc.h>

#include <cstdio>
#include <functional>
#include <map>
#include <string>

#include "headlens/harness.hpp"

using namespace headlens;

int main(int argc, char** argv) {
  // Large graph tensors churn fast; keep freed pages in the heap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 256 << 20);

  CLI::App app{"headlens: locate, steer and ablate translation heads in a toy transformer"};
  app.require_subcommand(1);

  std::map<std::string, std::function<void(const RunConfig&, const std::filesystem::path&)>> commands = {
      {"gen-corpus", cmd_gen_corpus},   {"train", cmd_train},
      {"identify", cmd_identify},       {"vectors", cmd_vectors},
      {"steer", cmd_steer},             {"ablate", cmd_ablate},
      {"transfer", cmd_transfer},       {"sweep-alpha", cmd_sweep_alpha},
      {"sweep-kshot", cmd_sweep_kshot}, {"sweep-tokenpos", cmd_sweep_tokenpos},
      {"similarity", cmd_similarity},   {"decode", cmd_decode},
      {"report", cmd_report}};

  std::string config_file;
  std::string out_dir = "runs/default";
  int workers = 0;
  std::string chosen;
  for (auto& [name, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_file, "run configuration JSON");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--workers", workers, "worker pool cap (also HEADLENS_WORKERS)");
    sub->allow_extras();  // --key.path value overrides
    sub->callback([&, name = name] { chosen = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    CLI::App* sub = app.get_subcommand(chosen);
    std::vector<std::pair<std::string, std::string>> overrides;
    auto extras = sub->remaining();
    for (std::size_t i = 0; i < extras.size(); ++i) {
      std::string key = extras[i];
      if (key.rfind("--", 0) != 0) throw config_error("expected --key.path, got: " + key);
      key = key.substr(2);
      std::string value;
      auto eq = key.find('=');
      if (eq != std::string::npos) {
        value = key.substr(eq + 1);
        key = key.substr(0, eq);
      } else {
        if (i + 1 >= extras.size()) throw config_error("missing value for override --" + key);
        value = extras[++i];
      }
      overrides.emplace_back(key, value);
    }
    if (workers > 0) setenv("HEADLENS_WORKERS", std::to_string(workers).c_str(), 1);

    RunConfig config = load_run_config(config_file, overrides);
    commands.at(chosen)(config, out_dir);
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "headlens %s: %s\n", chosen.c_str(), e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "headlens %s: %s\n", chosen.c_str(), e.what());
    return 1;
  }
}

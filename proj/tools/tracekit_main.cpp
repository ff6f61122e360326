// Command-line front end. All real work happens behind the C API; this
// layer only merges the config file with flag overrides and maps statuses
// to exit codes (0 ok, 1 usage or config problem, 2 data or numeric
// problem).
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tracekit.h"

namespace {

int run(const std::string& command, const nlohmann::json& config) {
  char* result = nullptr;
  const tk_status status =
      tk_run_command(command.c_str(), config.dump().c_str(), &result);
  if (status == TK_OK) {
    std::fputs(result, stdout);
    tk_string_free(result);
    return 0;
  }
  std::fprintf(stderr, "tracekit: %s\n", tk_last_error());
  return status == TK_ERR_INVALID_ARGUMENT ? 1 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"risk-change diagnostics for model replacement under "
               "covariate shift"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string variant;
  std::string out_dir;
  std::string format;
  app.add_option("--config", config_path, "JSON configuration file");
  auto* seed_opt =
      app.add_option("--seed", seed, "master seed for every random stream");
  app.add_option("--variant", variant, "bound variant: ot or mmd");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--format", format, "dataset format: json or csv");

  const char* const commands[][2] = {
      {"synth", "draw a synthetic source/target sample pair"},
      {"train", "fit a model to a labeled dataset"},
      {"diagnose", "decompose the worst-case risk change for a model swap"},
      {"gate", "score replacement candidates before deployment"},
      {"sweep", "run a severity grid and evaluate proxy ranking power"},
      {"select", "pick pool points that best match an anchor sample"},
      {"ridge-check", "verify the closed-form ridge shift predictions"},
  };
  for (const auto& c : commands) {
    app.add_subcommand(c[0], c[1])->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  nlohmann::json config = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) {
      std::fprintf(stderr, "tracekit: cannot read config file '%s'\n",
                   config_path.c_str());
      return 1;
    }
    try {
      in >> config;
    } catch (const nlohmann::json::parse_error& e) {
      std::fprintf(stderr, "tracekit: config file '%s' is not valid JSON: %s\n",
                   config_path.c_str(), e.what());
      return 1;
    }
    if (!config.is_object()) {
      std::fprintf(stderr, "tracekit: config file '%s' must hold a JSON object\n",
                   config_path.c_str());
      return 1;
    }
  }

  // Flags override whatever the file says.
  if (seed_opt->count() > 0) config["seed"] = seed;
  if (!variant.empty()) config["variant"] = variant;
  if (!out_dir.empty()) config["io"]["out"] = out_dir;
  if (!format.empty()) config["io"]["format"] = format;

  return run(app.get_subcommands().front()->get_name(), config);
}

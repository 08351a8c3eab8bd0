// aoi exact-bias|simulate|twoblock --config c.json
// aoi estimate --data d.csv --config c.json
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure.
// AOI_NUM_THREADS sets the worker count.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"

#include "aoi/cli.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

void apply_thread_env() {
  const char* env = std::getenv("AOI_NUM_THREADS");
  if (!env || !*env) return;
  const std::size_t n = aoi::parse_count(env, "AOI_NUM_THREADS");
  if (n < 1) throw aoi::ValidationError("AOI_NUM_THREADS must be at least 1");
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(n));
#endif
}

int run(const std::string& command, const std::string& config_path, const std::string& data_path) {
  apply_thread_env();
  const auto config = aoi::cli::read_config_file(config_path);
  aoi::Dataset data;
  if (command == "estimate") data = aoi::cli::read_data_file(data_path);
  const auto result = aoi::cli::run_command(command, config, command == "estimate" ? &data : nullptr);
  for (const auto& line : result.notes) std::cerr << line << '\n';
  const auto spec = aoi::cli::parse_output(aoi::cli::Node(config, "config"));
  if (spec.path) {
    std::ofstream out(*spec.path);
    if (!out) throw aoi::ValidationError("cannot write output file '" + *spec.path + "'");
    aoi::cli::write_result(result, config, out);
    if (!out) throw aoi::ValidationError("error writing output file '" + *spec.path + "'");
  } else {
    aoi::cli::write_result(result, config, std::cout);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Average effects in nonlinear panel models by approximate operator inversion"};
  app.require_subcommand(1);
  std::string config_path, data_path;
  const std::pair<const char*, const char*> commands[] = {
      {"exact-bias", "population bias and s.d. for a fixed design"},
      {"simulate", "Monte Carlo study of the estimator"},
      {"twoblock", "sup bias of the explicit two-block estimator"},
      {"estimate", "estimate average effects from a panel data file"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run config")->required();
    if (std::string(name) == "estimate") sub->add_option("--data", data_path, "panel CSV: unit_id,t,y,x1..xk")->required();
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, config_path, data_path);
  } catch (const aoi::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const aoi::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

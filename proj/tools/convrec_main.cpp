#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "convrec/cli.hpp"
#include "convrec/error.hpp"

namespace {

std::string trim(const std::string& text) {
  std::size_t lo = 0;
  std::size_t hi = text.size();
  while (lo < hi && std::isspace(static_cast<unsigned char>(text[lo]))) ++lo;
  while (hi > lo && std::isspace(static_cast<unsigned char>(text[hi - 1])))
    --hi;
  return text.substr(lo, hi - lo);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"conversational recommender pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::vector<std::string> sets;
  CLI::Option* config_opt = app.add_option(
      "--config", config_path, "flat key = value configuration file");
  CLI::Option* seed_opt = app.add_option("--seed", seed, "run seed");
  CLI::Option* out_opt =
      app.add_option("--out", out_dir, "output directory for all artifacts");
  app.add_option("--set", sets,
                 "key=value override applied after the config file "
                 "(repeatable)");

  const char* const commands[][2] = {
      {"generate", "write a synthetic world into the output directory"},
      {"pretrain", "pretrain node embeddings on the training interactions"},
      {"train", "train the recommender agent"},
      {"eval", "compare the trained agent against the rule baselines"},
      {"play", "converse with the trained agent yourself"},
  };
  for (const auto& [name, help] : commands)
    app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  convrec::RunConfig config;
  try {
    if (config_opt->count() > 0) config = convrec::load_config(config_path);
    for (const std::string& pair : sets) {
      const std::size_t eq = pair.find('=');
      if (eq == std::string::npos)
        throw convrec::ConfigError("--set expects key=value, got '" + pair +
                                   "'");
      convrec::apply_override(config, trim(pair.substr(0, eq)),
                              trim(pair.substr(eq + 1)));
    }
    if (seed_opt->count() > 0) config.seed = seed;
    if (out_opt->count() > 0) config.out = out_dir;
  } catch (const convrec::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const convrec::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  return convrec::run_command(name, config, std::cin, std::cout, std::cerr);
}

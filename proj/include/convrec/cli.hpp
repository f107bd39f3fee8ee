#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "convrec/encoder.hpp"
#include "convrec/env.hpp"
#include "convrec/kg_embed.hpp"
#include "convrec/policy.hpp"
#include "convrec/world.hpp"

namespace convrec {

/// Resolved settings for every pipeline stage. Field defaults are the
/// reference values; a config file and key=value overrides adjust them.
struct RunConfig {
  std::uint64_t seed = 1;
  /// Output directory; every command writes its artifacts and the resolved
  /// manifest here.
  std::string out = "out";
  /// When non-empty, world files are read from this directory instead of
  /// the output directory.
  std::string world_dir;
  WorldSpec world;
  EnvConfig env;
  TransEConfig embed;
  EncoderConfig encoder;
  PolicyConfig policy;
  /// Fraction of each user's interactions held out of the pretraining and
  /// training sets.
  double split_eval_fraction = 0.2;
  int train_episodes = 500;
  int eval_episodes = 200;
  /// Player's user id; -1 picks one by seed.
  std::int64_t play_user = -1;

  bool operator==(const RunConfig&) const = default;

  /// Cross-field checks on top of the per-stage validators. Throws
  /// ConfigError.
  void validate() const;
};

/// Applies one flat `key=value` override. Unknown key or unparsable value
/// throws ConfigError.
void apply_override(RunConfig& config, const std::string& key,
                    const std::string& value);

/// Parses `key = value` lines; '#' starts a comment, blank lines are
/// skipped, later keys win.
RunConfig parse_config_text(const std::string& text,
                            const RunConfig& base = {});

/// parse_config_text over a file's contents. Throws IoError when the file
/// cannot be read.
RunConfig load_config(const std::string& path, const RunConfig& base = {});

/// Canonical `key = value` listing of every setting, fixed key order.
/// Parsing it back reproduces the config exactly.
std::string config_text(const RunConfig& config);

/// 64-bit FNV-1a over a byte string.
std::uint64_t fnv1a64(const std::string& text);

/// fnv1a64 of config_text as 16 lowercase hex digits; stored in checkpoint
/// metadata and the manifest.
std::string config_hash_hex(const RunConfig& config);

/// Artifact locations under the output directory.
struct RunPaths {
  std::string items, attr_types, interactions, social;
  std::string manifest;
  std::string pretrain_log;
  std::string embeddings;
  std::string policy_ckpt;
  std::string train_log;
  std::string metrics;
  std::string transcript;
};
RunPaths run_paths(const RunConfig& config);

/// Creates the output directory and writes the resolved-config manifest.
void write_manifest(const RunConfig& config);

/// Loads the world this config points at (world_dir if set, otherwise the
/// output directory). A missing file raises IoError naming it.
std::pair<Catalog, SocialGraph> resolve_world(const RunConfig& config);

/// Generates the synthetic world and writes the world files plus manifest.
void cmd_generate(const RunConfig& config, std::ostream& out);

/// Builds triples from the training split, pretrains node embeddings, and
/// writes the embedding checkpoint plus an epoch-loss log.
void cmd_pretrain(const RunConfig& config, std::ostream& out);

/// Trains the policy agent on the training split's target pools; writes the
/// policy checkpoint (tagged with the config hash) and the episode log.
void cmd_train(const RunConfig& config, std::ostream& out);

/// Evaluates the rule baselines and, when its checkpoint exists, the
/// learned policy on a shared episode schedule; writes the metrics table.
void cmd_eval(const RunConfig& config, std::ostream& out);

/// Interactive session: the agent acts, the human answers accept/reject in
/// place of the simulator. Writes a JSON-lines transcript. Malformed input
/// re-prompts; end of input raises IoError.
void cmd_play(const RunConfig& config, std::istream& in, std::ostream& out);

/// Validates a play transcript against the environment: the header state
/// must be well-formed and every recorded action valid for the evolving
/// state. Returns the final state. Throws on any violation.
EpisodeState replay_transcript(const Env& env, const std::string& jsonl);

/// Dispatches a subcommand by name and maps errors to the process exit
/// code: 0 success, 1 invalid configuration or input, 2 runtime failure.
int run_command(const std::string& name, const RunConfig& config,
                std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace convrec

#include "convrec/cli.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <utility>
#include <vector>

#include "json.hpp"

#include "convrec/error.hpp"
#include "convrec/eval.hpp"
#include "convrec/rng.hpp"

namespace convrec {

namespace {

namespace fs = std::filesystem;

std::string trim(const std::string& text) {
  std::size_t lo = 0;
  std::size_t hi = text.size();
  while (lo < hi && std::isspace(static_cast<unsigned char>(text[lo]))) ++lo;
  while (hi > lo && std::isspace(static_cast<unsigned char>(text[hi - 1])))
    --hi;
  return text.substr(lo, hi - lo);
}

std::vector<std::string> split_ws(const std::string& text) {
  std::istringstream stream(text);
  std::vector<std::string> tokens;
  std::string token;
  while (stream >> token) tokens.push_back(token);
  return tokens;
}

std::string lower(std::string text) {
  for (char& c : text) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return text;
}

/// Shortest decimal form that parses back to the same double.
std::string fmt_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.15g", value);
  if (std::strtod(buf, nullptr) != value)
    std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::int64_t parse_i64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long parsed = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" +
                      value + "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  return static_cast<int>(parse_i64(key, value));
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long parsed = std::stoull(value, &pos);
    if (pos != value.size() || value.front() == '-')
      throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key +
                      "': expected a non-negative integer, got '" + value +
                      "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double parsed = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" +
                      value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = lower(value);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" +
                    value + "'");
}

struct KeyBinding {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class Ref>
KeyBinding bind_int(const char* key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return std::to_string(ref(c)); },
          [ref, k = std::string(key)](RunConfig& c, const std::string& v) {
            ref(c) = parse_int(k, v);
          }};
}

template <class Ref>
KeyBinding bind_i64(const char* key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return std::to_string(ref(c)); },
          [ref, k = std::string(key)](RunConfig& c, const std::string& v) {
            ref(c) = parse_i64(k, v);
          }};
}

template <class Ref>
KeyBinding bind_u64(const char* key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return std::to_string(ref(c)); },
          [ref, k = std::string(key)](RunConfig& c, const std::string& v) {
            ref(c) = parse_u64(k, v);
          }};
}

template <class Ref>
KeyBinding bind_double(const char* key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return fmt_double(ref(c)); },
          [ref, k = std::string(key)](RunConfig& c, const std::string& v) {
            ref(c) = parse_double(k, v);
          }};
}

template <class Ref>
KeyBinding bind_bool(const char* key, Ref ref) {
  return {key,
          [ref](const RunConfig& c) { return ref(c) ? "true" : "false"; },
          [ref, k = std::string(key)](RunConfig& c, const std::string& v) {
            ref(c) = parse_bool(k, v);
          }};
}

template <class Ref>
KeyBinding bind_string(const char* key, Ref ref) {
  return {key, [ref](const RunConfig& c) { return ref(c); },
          [ref](RunConfig& c, const std::string& v) { ref(c) = v; }};
}

/// Every config key in manifest order. The accessors work on both const and
/// mutable configs, so one entry serves reading and writing.
const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> table = {
      bind_u64("seed", [](auto& c) -> auto& { return c.seed; }),
      bind_string("out", [](auto& c) -> auto& { return c.out; }),
      bind_string("world.dir", [](auto& c) -> auto& { return c.world_dir; }),
      bind_i64("world.users", [](auto& c) -> auto& { return c.world.num_users; }),
      bind_i64("world.items", [](auto& c) -> auto& { return c.world.num_items; }),
      bind_i64("world.attrs", [](auto& c) -> auto& { return c.world.num_attributes; }),
      bind_i64("world.types", [](auto& c) -> auto& { return c.world.num_types; }),
      bind_double("world.social_density", [](auto& c) -> auto& { return c.world.social_density; }),
      bind_i64("world.interactions_per_user", [](auto& c) -> auto& { return c.world.interactions_per_user; }),
      bind_i64("world.min_attrs_per_item", [](auto& c) -> auto& { return c.world.min_attrs_per_item; }),
      bind_i64("world.max_attrs_per_item", [](auto& c) -> auto& { return c.world.max_attrs_per_item; }),
      bind_double("world.home_type_bias", [](auto& c) -> auto& { return c.world.home_type_bias; }),
      bind_double("world.social_correlation", [](auto& c) -> auto& { return c.world.social_correlation; }),
      bind_int("env.max_turns", [](auto& c) -> auto& { return c.env.max_turns; }),
      bind_int("env.top_k", [](auto& c) -> auto& { return c.env.top_k; }),
      bind_int("env.ask_k", [](auto& c) -> auto& { return c.env.ask_k; }),
      bind_int("env.num_targets", [](auto& c) -> auto& { return c.env.num_targets; }),
      bind_double("env.r_rec_suc", [](auto& c) -> auto& { return c.env.r_rec_suc; }),
      bind_double("env.r_rec_fail", [](auto& c) -> auto& { return c.env.r_rec_fail; }),
      bind_double("env.r_ask_suc", [](auto& c) -> auto& { return c.env.r_ask_suc; }),
      bind_double("env.r_ask_fail", [](auto& c) -> auto& { return c.env.r_ask_fail; }),
      bind_double("env.r_quit", [](auto& c) -> auto& { return c.env.r_quit; }),
      bind_int("embed.d", [](auto& c) -> auto& { return c.embed.d; }),
      bind_int("embed.epochs", [](auto& c) -> auto& { return c.embed.epochs; }),
      bind_double("embed.margin", [](auto& c) -> auto& { return c.embed.margin; }),
      bind_double("embed.lr", [](auto& c) -> auto& { return c.embed.learning_rate; }),
      bind_int("encoder.layers", [](auto& c) -> auto& { return c.encoder.layers; }),
      bind_int("encoder.heads", [](auto& c) -> auto& { return c.encoder.heads; }),
      bind_double("encoder.leaky_slope", [](auto& c) -> auto& { return c.encoder.leaky_slope; }),
      bind_double("encoder.tau", [](auto& c) -> auto& { return c.encoder.tau; }),
      bind_int("encoder.ffn_hidden", [](auto& c) -> auto& { return c.encoder.ffn_hidden; }),
      bind_int("encoder.max_positions", [](auto& c) -> auto& { return c.encoder.max_positions; }),
      bind_int("policy.k_v", [](auto& c) -> auto& { return c.policy.k_v; }),
      bind_int("policy.k_p", [](auto& c) -> auto& { return c.policy.k_p; }),
      bind_int("policy.hidden", [](auto& c) -> auto& { return c.policy.hidden; }),
      bind_double("policy.gamma", [](auto& c) -> auto& { return c.policy.gamma; }),
      bind_double("policy.lr", [](auto& c) -> auto& { return c.policy.lr; }),
      bind_int("policy.batch_size", [](auto& c) -> auto& { return c.policy.batch_size; }),
      bind_int("policy.buffer_capacity", [](auto& c) -> auto& { return c.policy.buffer_capacity; }),
      bind_int("policy.target_sync", [](auto& c) -> auto& { return c.policy.target_sync; }),
      bind_double("policy.eps_start", [](auto& c) -> auto& { return c.policy.eps_start; }),
      bind_double("policy.eps_end", [](auto& c) -> auto& { return c.policy.eps_end; }),
      bind_int("policy.eps_decay_steps", [](auto& c) -> auto& { return c.policy.eps_decay_steps; }),
      bind_int("policy.ssl_per_dqn", [](auto& c) -> auto& { return c.policy.ssl_per_dqn; }),
      bind_double("policy.grad_clip", [](auto& c) -> auto& { return c.policy.grad_clip; }),
      bind_bool("policy.use_social", [](auto& c) -> auto& { return c.policy.use_social_view; }),
      bind_double("split.eval_fraction", [](auto& c) -> auto& { return c.split_eval_fraction; }),
      bind_int("train.episodes", [](auto& c) -> auto& { return c.train_episodes; }),
      bind_int("eval.episodes", [](auto& c) -> auto& { return c.eval_episodes; }),
      bind_i64("play.user", [](auto& c) -> auto& { return c.play_user; }),
  };
  return table;
}

/// Encoder settings with the embedding dimension resolved in; the two
/// stages must agree on d.
EncoderConfig resolved_encoder(const RunConfig& config) {
  EncoderConfig enc = config.encoder;
  enc.d = config.embed.d;
  return enc;
}

std::string read_text(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot read '" + path + "'");
  std::ostringstream buffer;
  buffer << file.rdbuf();
  return buffer.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write '" + path + "'");
  file << text;
  file.close();
  if (!file) throw IoError("write failed for '" + path + "'");
}

EmbeddingTable load_table(const RunPaths& paths) {
  if (!fs::exists(paths.embeddings))
    throw IoError("missing embedding checkpoint '" + paths.embeddings +
                  "'; run the pretrain command first");
  return load_embeddings(paths.embeddings);
}

std::map<Id, std::vector<Id>> pools_by_user(
    const std::vector<std::pair<Id, Id>>& interactions) {
  std::map<Id, std::vector<Id>> pools;
  for (const auto& [user, item] : interactions) pools[user].push_back(item);
  return pools;
}

std::string ids_line(const std::vector<Id>& ids) {
  std::string text;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) text += ' ';
    text += std::to_string(ids[i]);
  }
  return text;
}

std::string prompt_line(std::istream& in, std::ostream& out,
                        const std::string& prompt) {
  out << prompt << std::flush;
  std::string line;
  if (!std::getline(in, line))
    throw IoError("input ended before the session finished");
  return line;
}

/// Attribute ids the player accepts, in asked order. Blank, "no", or "none"
/// rejects all; "yes" or "all" accepts all; otherwise a list of asked ids.
std::vector<Id> ask_response(std::istream& in, std::ostream& out,
                             const std::vector<Id>& asked) {
  for (;;) {
    const std::string line =
        prompt_line(in, out, "accept which of these? [ids / yes / no] > ");
    const std::vector<std::string> tokens = split_ws(line);
    if (tokens.empty()) return {};
    if (tokens.size() == 1) {
      const std::string word = lower(tokens[0]);
      if (word == "no" || word == "none") return {};
      if (word == "yes" || word == "all") return asked;
    }
    std::set<Id> chosen;
    bool ok = true;
    for (const std::string& token : tokens) {
      std::size_t pos = 0;
      long long id = -1;
      try {
        id = std::stoll(token, &pos);
      } catch (const std::exception&) {
        ok = false;
      }
      if (!ok || pos != token.size() ||
          std::find(asked.begin(), asked.end(), id) == asked.end()) {
        ok = false;
        break;
      }
      chosen.insert(id);
    }
    if (ok) {
      std::vector<Id> accepted;
      for (Id id : asked)
        if (chosen.count(id)) accepted.push_back(id);
      return accepted;
    }
    out << "could not read '" << line
        << "'; answer with asked ids, 'yes', or 'no'\n";
  }
}

/// Item the player accepts, if any. Blank, "no", or "none" rejects the
/// list; "yes" accepts the first item; otherwise one listed id.
std::optional<Id> recommend_response(std::istream& in, std::ostream& out,
                                     const std::vector<Id>& items) {
  for (;;) {
    const std::string line =
        prompt_line(in, out, "take one? [id / yes / no] > ");
    const std::vector<std::string> tokens = split_ws(line);
    if (tokens.empty()) return std::nullopt;
    if (tokens.size() == 1) {
      const std::string word = lower(tokens[0]);
      if (word == "no" || word == "none") return std::nullopt;
      if (word == "yes") return items.front();
      std::size_t pos = 0;
      try {
        const long long id = std::stoll(tokens[0], &pos);
        if (pos == tokens[0].size() &&
            std::find(items.begin(), items.end(), id) != items.end())
          return id;
      } catch (const std::exception&) {
      }
    }
    out << "could not read '" << line
        << "'; answer with one listed id, 'yes', or 'no'\n";
  }
}

nlohmann::json parse_json_line(const std::string& line, int line_no) {
  try {
    return nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("transcript", static_cast<std::size_t>(line_no),
                     e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (out.empty()) throw ConfigError("output directory must not be empty");
  world.validate();
  env.validate();
  if (embed.d <= 0) throw ConfigError("embed.d must be positive");
  if (embed.epochs < 0) throw ConfigError("embed.epochs must be non-negative");
  if (embed.margin <= 0) throw ConfigError("embed.margin must be positive");
  if (embed.learning_rate <= 0) throw ConfigError("embed.lr must be positive");
  resolved_encoder(*this).validate();
  policy.validate();
  if (!(split_eval_fraction >= 0.0 && split_eval_fraction < 1.0))
    throw ConfigError("split.eval_fraction must lie in [0, 1)");
  if (train_episodes <= 0)
    throw ConfigError("train.episodes must be positive");
  if (eval_episodes <= 0) throw ConfigError("eval.episodes must be positive");
  if (play_user < -1) throw ConfigError("play.user must be -1 or a user id");
}

void apply_override(RunConfig& config, const std::string& key,
                    const std::string& value) {
  for (const KeyBinding& binding : bindings()) {
    if (binding.key == key) {
      binding.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text, const RunConfig& base) {
  RunConfig config = base;
  std::istringstream stream(text);
  std::string line;
  int line_no = 0;
  while (std::getline(stream, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": empty key");
    apply_override(config, key, value);
  }
  return config;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
  return parse_config_text(read_text(path), base);
}

std::string config_text(const RunConfig& config) {
  std::string text;
  for (const KeyBinding& binding : bindings())
    text += binding.key + " = " + binding.get(config) + "\n";
  return text;
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string config_hash_hex(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_text(config))));
  return buf;
}

RunPaths run_paths(const RunConfig& config) {
  const fs::path out = config.out;
  const fs::path world =
      config.world_dir.empty() ? out : fs::path(config.world_dir);
  RunPaths paths;
  paths.items = (world / "items.tsv").string();
  paths.attr_types = (world / "attr_types.tsv").string();
  paths.interactions = (world / "interactions.tsv").string();
  paths.social = (world / "social.tsv").string();
  paths.manifest = (out / "manifest.txt").string();
  paths.pretrain_log = (out / "pretrain_log.csv").string();
  paths.embeddings = (out / "embeddings.ckpt").string();
  paths.policy_ckpt = (out / "policy.ckpt").string();
  paths.train_log = (out / "train_log.csv").string();
  paths.metrics = (out / "metrics.csv").string();
  paths.transcript = (out / "transcript.jsonl").string();
  return paths;
}

void write_manifest(const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(config.out, ec);
  if (ec)
    throw IoError("cannot create output directory '" + config.out +
                  "': " + ec.message());
  write_text(run_paths(config).manifest,
             "# resolved run configuration\n# config_hash = " +
                 config_hash_hex(config) + "\n" + config_text(config));
}

std::pair<Catalog, SocialGraph> resolve_world(const RunConfig& config) {
  const RunPaths paths = run_paths(config);
  for (const std::string* path :
       {&paths.items, &paths.interactions, &paths.social}) {
    if (!fs::exists(*path))
      throw IoError("missing world file '" + *path +
                    "'; run the generate command or point world.dir at an "
                    "existing world");
  }
  return load_world(paths.items, paths.interactions, paths.social);
}

void cmd_generate(const RunConfig& config, std::ostream& out) {
  config.validate();
  if (!config.world_dir.empty())
    throw ConfigError(
        "generate writes a synthetic world into the output directory; unset "
        "world.dir, which points at an existing world");
  write_manifest(config);
  WorldSpec spec = config.world;
  spec.seed = config.seed;
  const auto [catalog, social] = generate_world(spec);
  const RunPaths paths = run_paths(config);
  save_world(catalog, social, paths.items, paths.attr_types,
             paths.interactions, paths.social);
  out << "generated " << social.users.size() << " users, "
      << catalog.items.size() << " items, " << catalog.attributes.size()
      << " attributes -> " << config.out << "\n";
}

void cmd_pretrain(const RunConfig& config, std::ostream& out) {
  config.validate();
  write_manifest(config);
  const auto [catalog, social] = resolve_world(config);
  const NodeIndex index(catalog, social);
  const InteractionSplit split =
      split_interactions(social, config.split_eval_fraction, config.seed);
  const std::vector<Triple> triples =
      build_triples(catalog, social, index, split.train);
  TransEConfig embed = config.embed;
  embed.seed = config.seed;
  const PretrainResult result = pretrain(triples, index.size(), embed);
  const RunPaths paths = run_paths(config);
  save_embeddings(result.table, config.seed, paths.embeddings);
  std::string log = "epoch,loss\n";
  for (std::size_t i = 0; i < result.epoch_loss.size(); ++i)
    log += std::to_string(i + 1) + "," + fmt_double(result.epoch_loss[i]) +
           "\n";
  write_text(paths.pretrain_log, log);
  out << "pretrained " << index.size() << " node embeddings (d=" << embed.d
      << ") on " << triples.size() << " triples -> " << paths.embeddings
      << "\n";
}

void cmd_train(const RunConfig& config, std::ostream& out) {
  config.validate();
  write_manifest(config);
  const auto [catalog, social] = resolve_world(config);
  const RunPaths paths = run_paths(config);
  const EmbeddingTable table = load_table(paths);
  const Env env(catalog, social, config.env);
  PolicyAgent agent(env, resolved_encoder(config), config.policy, table,
                    config.seed);
  const InteractionSplit split =
      split_interactions(social, config.split_eval_fraction, config.seed);
  const std::map<Id, std::vector<Id>> pools = pools_by_user(split.train);
  Rng rng(config.seed);
  int successes = 0;
  const TrainResult result = agent.train_loop(
      pools, config.train_episodes, rng, [&](const TrainEpisodeLog& log) {
        if (log.success) ++successes;
        if (log.episode % 50 == 0 || log.episode == config.train_episodes)
          out << "episode " << log.episode << "/" << config.train_episodes
              << ": " << successes << " successes\n";
      });
  write_text(paths.train_log, train_log_csv(result.episodes));
  agent.save(paths.policy_ckpt, {{"config_hash", config_hash_hex(config)}});
  out << "trained " << result.episodes.size() << " episodes ("
      << result.dqn_steps << " value updates, " << result.ssl_steps
      << " contrastive updates) -> " << paths.policy_ckpt << "\n";
}

void cmd_eval(const RunConfig& config, std::ostream& out) {
  config.validate();
  write_manifest(config);
  const auto [catalog, social] = resolve_world(config);
  const RunPaths paths = run_paths(config);
  const EmbeddingTable table = load_table(paths);
  const Env env(catalog, social, config.env);
  const NodeIndex index(catalog, social);
  std::vector<std::pair<std::string, PolicyFn>> policies;
  policies.emplace_back("random", random_policy(env));
  policies.emplace_back("max_entropy",
                        max_entropy_policy(env, index, table.node_vecs));
  policies.emplace_back("abs_greedy",
                        abs_greedy_policy(env, index, table.node_vecs));
  std::optional<PolicyAgent> agent;
  if (fs::exists(paths.policy_ckpt)) {
    agent.emplace(env, resolved_encoder(config), config.policy, table,
                  config.seed);
    agent->restore(paths.policy_ckpt);
    policies.emplace_back("learned", agent_policy(*agent));
  } else {
    out << "no policy checkpoint at '" << paths.policy_ckpt
        << "'; evaluating baselines only\n";
  }
  const std::vector<ComparisonRow> rows =
      run_comparison(env, policies, config.eval_episodes, config.seed);
  const std::string csv = metrics_csv(rows);
  write_text(paths.metrics, csv);
  out << csv;
}

void cmd_play(const RunConfig& config, std::istream& in, std::ostream& out) {
  config.validate();
  write_manifest(config);
  const auto [catalog, social] = resolve_world(config);
  const RunPaths paths = run_paths(config);
  const EmbeddingTable table = load_table(paths);
  const Env env(catalog, social, config.env);
  if (!fs::exists(paths.policy_ckpt))
    throw IoError("missing policy checkpoint '" + paths.policy_ckpt +
                  "'; run the train command first");
  PolicyAgent agent(env, resolved_encoder(config), config.policy, table,
                    config.seed);
  agent.restore(paths.policy_ckpt);

  Rng rng(config.seed);
  Id user = config.play_user;
  if (user >= 0) {
    if (!social.users.count(user))
      throw ConfigError("play.user " + std::to_string(user) +
                        " is not a user in this world");
  } else {
    const std::vector<Id> users(social.users.begin(), social.users.end());
    user = users[rng.below(users.size())];
  }
  EpisodeState state = env.sample_episode(user, rng);

  std::ofstream transcript(paths.transcript, std::ios::binary);
  if (!transcript)
    throw IoError("cannot write transcript '" + paths.transcript + "'");
  transcript << nlohmann::json{
                    {"session", nlohmann::json::parse(state_json(state))}}
                    .dump()
             << "\n";

  out << "you are user " << user << "; the conversation starts from attribute "
      << state.p0 << "\n";
  double total = 0.0;
  while (!state.done) {
    const ScoredActionSpace space = agent.score_actions(state);
    const std::vector<double> q = agent.q_values(state, space);
    const PolicyAgent::Selected sel =
        agent.select_action(state, space, q, 0.0, rng);
    const AgentAction& action = sel.action;
    StepOutcome outcome;
    nlohmann::json record;
    record["turn"] = state.turn + 1;
    if (action.kind == AgentAction::Kind::ask) {
      out << "turn " << state.turn + 1 << ": do you like attributes ["
          << ids_line(action.attrs) << "]?\n";
      const std::vector<Id> accepted = ask_response(in, out, action.attrs);
      const std::set<Id> accepted_set(accepted.begin(), accepted.end());
      outcome.accepted_attrs = accepted;
      for (Id p : action.attrs)
        if (!accepted_set.count(p)) outcome.rejected_attrs.push_back(p);
      outcome.reward =
          static_cast<double>(outcome.accepted_attrs.size()) *
              config.env.r_ask_suc +
          static_cast<double>(outcome.rejected_attrs.size()) *
              config.env.r_ask_fail;
      record["action"] = {{"kind", "ask"}, {"payload", action.attrs}};
    } else {
      out << "turn " << state.turn + 1 << ": how about items ["
          << ids_line(action.items) << "]?\n";
      const std::optional<Id> choice =
          recommend_response(in, out, action.items);
      if (choice) {
        outcome.accepted_item = *choice;
        outcome.success = true;
        outcome.done = true;
        outcome.reward = config.env.r_rec_suc;
      } else {
        outcome.reward = config.env.r_rec_fail;
      }
      record["action"] = {{"kind", "recommend"}, {"payload", action.items}};
    }
    if (!outcome.success && state.turn + 1 == config.env.max_turns) {
      outcome.done = true;
      outcome.reward += config.env.r_quit;
      out << "that was the last turn\n";
    }
    EpisodeState next = env.apply_transition(state, action, outcome);
    double reward = outcome.reward;
    if (next.done && !outcome.done) {
      reward += config.env.r_quit;
      out << "no candidates remain; ending the session\n";
    }
    total += reward;
    record["feedback"] = {
        {"accepted_attrs", outcome.accepted_attrs},
        {"rejected_attrs", outcome.rejected_attrs},
        {"accepted_item", outcome.accepted_item
                              ? nlohmann::json(*outcome.accepted_item)
                              : nlohmann::json(nullptr)}};
    record["reward"] = reward;
    record["done"] = next.done;
    record["success"] = next.success;
    transcript << record.dump() << "\n";
    state = std::move(next);
  }
  transcript.close();
  if (!transcript)
    throw IoError("write failed for '" + paths.transcript + "'");
  out << (state.success ? "success" : "no luck") << " after " << state.turn
      << (state.turn == 1 ? " turn" : " turns") << "; total reward "
      << fmt_double(total) << "\n";
  out << "transcript -> " << paths.transcript << "\n";
}

EpisodeState replay_transcript(const Env& env, const std::string& jsonl) {
  std::istringstream stream(jsonl);
  std::string line;
  int line_no = 0;
  if (!std::getline(stream, line)) throw ParseError("transcript: empty input");
  ++line_no;
  const nlohmann::json header = parse_json_line(line, line_no);
  if (!header.contains("session"))
    throw ValidationError("transcript: first line must carry the session");
  EpisodeState state = state_from_json_text(header.at("session").dump());

  EpisodeState check = state;
  env.update_candidates(check);
  env.filter_friends(check);
  if (check.v_cand != state.v_cand || check.p_cand != state.p_cand ||
      check.f_filtered != state.f_filtered)
    throw ValidationError(
        "transcript: session state is inconsistent with this world");

  while (std::getline(stream, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const nlohmann::json j = parse_json_line(line, line_no);
    if (state.done)
      throw ValidationError("transcript line " + std::to_string(line_no) +
                            ": turn recorded after the session ended");
    AgentAction action;
    StepOutcome outcome;
    try {
      const std::string kind = j.at("action").at("kind").get<std::string>();
      const auto payload =
          j.at("action").at("payload").get<std::vector<Id>>();
      if (kind == "ask")
        action = AgentAction::ask(payload);
      else if (kind == "recommend")
        action = AgentAction::recommend(payload);
      else
        throw ValidationError("transcript line " + std::to_string(line_no) +
                              ": unknown action kind '" + kind + "'");
      const nlohmann::json& feedback = j.at("feedback");
      outcome.accepted_attrs =
          feedback.at("accepted_attrs").get<std::vector<Id>>();
      outcome.rejected_attrs =
          feedback.at("rejected_attrs").get<std::vector<Id>>();
      if (!feedback.at("accepted_item").is_null())
        outcome.accepted_item = feedback.at("accepted_item").get<Id>();
      outcome.reward = j.at("reward").get<double>();
      outcome.done = j.at("done").get<bool>();
      outcome.success = outcome.accepted_item.has_value();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("transcript", static_cast<std::size_t>(line_no),
                       e.what());
    }
    env.validate_action(state, action);
    if (action.kind == AgentAction::Kind::ask) {
      std::multiset<Id> asked(action.attrs.begin(), action.attrs.end());
      std::multiset<Id> answered(outcome.accepted_attrs.begin(),
                                 outcome.accepted_attrs.end());
      answered.insert(outcome.rejected_attrs.begin(),
                      outcome.rejected_attrs.end());
      if (asked != answered)
        throw ValidationError(
            "transcript line " + std::to_string(line_no) +
            ": feedback does not partition the asked attributes");
    } else if (outcome.accepted_item &&
               std::find(action.items.begin(), action.items.end(),
                         *outcome.accepted_item) == action.items.end()) {
      throw ValidationError("transcript line " + std::to_string(line_no) +
                            ": accepted item was never recommended");
    }
    state = env.apply_transition(state, action, outcome);
  }
  return state;
}

int run_command(const std::string& name, const RunConfig& config,
                std::istream& in, std::ostream& out, std::ostream& err) {
  try {
    if (name == "generate")
      cmd_generate(config, out);
    else if (name == "pretrain")
      cmd_pretrain(config, out);
    else if (name == "train")
      cmd_train(config, out);
    else if (name == "eval")
      cmd_eval(config, out);
    else if (name == "play")
      cmd_play(config, in, out);
    else
      throw ConfigError("unknown command '" + name + "'");
    return 0;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace convrec

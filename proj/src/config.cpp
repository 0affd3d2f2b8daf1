#include "depo/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "depo/errors.hpp"

namespace depo {
namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config section '" + path_ + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  bool read(const std::string& key, T& dst) {
    if (!j_.contains(key)) return false;
    used_.insert(key);
    const json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else {
        if (!v.is_string()) throw ConfigError("");
      }
      dst = v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
    return true;
  }

  bool read_path(const std::string& key, std::filesystem::path& dst) {
    std::string s;
    if (!read(key, s)) return false;
    dst = s;
    return true;
  }

  const json* sub(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown config key '" + name(it.key()) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void read_env(const json& j, PipelineConfig& cfg) {
  Section s(j, "env");
  std::string kind;
  if (s.read("kind", kind)) cfg.env_kind = parse_env_kind(kind);
  s.read("tasks", cfg.tasks);
  if (const json* g = s.sub("grid")) {
    Section gs(*g, "env.grid");
    auto& p = cfg.env.grid;
    gs.read("width", p.width);
    gs.read("height", p.height);
    gs.read("num_objects", p.num_objects);
    gs.read("view_radius", p.view_radius);
    gs.read("max_steps", p.max_steps);
    gs.read("pickup_prob", p.pickup_prob);
    gs.finish();
  }
  if (const json* sh = s.sub("shop")) {
    Section ss(*sh, "env.shop");
    auto& p = cfg.env.shop;
    ss.read("catalog_size", p.catalog_size);
    ss.read("page_size", p.page_size);
    ss.read("max_steps", p.max_steps);
    ss.finish();
  }
  s.finish();
}

void read_search(const json& j, PipelineConfig& cfg) {
  Section s(j, "search");
  auto& c = cfg.search;
  s.read("exploration_weight", c.exploration_weight);
  s.read("max_depth", c.max_depth);
  s.read("simulations", c.simulations);
  std::string rp;
  if (s.read("rollout_policy", rp)) c.rollout_policy = parse_rollout_policy(rp);
  cfg.search_seed_set = s.read("seed", c.seed);
  s.read("tree_verbose_prob", c.tree_verbose_prob);
  if (const json* ps = s.sub("personas")) {
    if (!ps->is_array()) throw ConfigError("config key 'search.personas' must be an array");
    cfg.personas.clear();
    for (std::size_t i = 0; i < ps->size(); ++i) {
      Section p((*ps)[i], "search.personas[" + std::to_string(i) + "]");
      Persona persona;
      p.read("noise", persona.noise);
      p.read("verbose_prob", persona.verbose_prob);
      p.finish();
      cfg.personas.push_back(persona);
    }
  }
  s.finish();
}

void read_labeling(const json& j, PipelineConfig& cfg) {
  Section s(j, "labeling");
  std::string preset;
  if (s.read("preset", preset)) {
    if (preset == "gridworld") {
      cfg.labeling = gridworld_label_preset();
    } else if (preset == "shopsim") {
      cfg.labeling = shopsim_label_preset();
    } else {
      throw ConfigError("labeling.preset must be 'gridworld' or 'shopsim'");
    }
  }
  auto& c = cfg.labeling;
  s.read("kappa0", c.kappa0);
  s.read("kappa1", c.kappa1);
  s.read("kappa2", c.kappa2);
  s.read("step_threshold", c.step_threshold);
  s.read("require_strict_margin", c.require_strict_margin);
  s.read("rephrase_budget", c.rephrase_budget);
  s.read("rephraser", cfg.rephraser);
  s.finish();
}

void read_policy(const json& j, PipelineConfig& cfg) {
  Section s(j, "policy");
  auto& c = cfg.policy;
  s.read("vocab_size", c.vocab_size);
  s.read("context", c.context);
  s.read("d_model", c.d_model);
  s.read("n_layers", c.n_layers);
  s.read("n_heads", c.n_heads);
  s.read("d_ff", c.d_ff);
  s.read("max_step_tokens", cfg.max_step_tokens);
  s.read("rollout_temperature", cfg.rollout_temperature);
  s.finish();
}

void read_train(const json& j, PipelineConfig& cfg) {
  Section s(j, "train");
  auto& c = cfg.train;
  s.read("beta", c.beta);
  s.read("lambda_d", c.lambda_d);
  s.read("lambda_u", c.lambda_u);
  s.read("alpha1", c.alpha1);
  s.read("alpha2", c.alpha2);
  s.read("penalty_enabled", c.penalty_enabled);
  s.read("learning_rate", c.learning_rate);
  s.read("epochs", c.epochs);
  s.read("batch_size", c.batch_size);
  cfg.train_seed_set = s.read("seed", c.seed);
  s.finish();
}

void read_eval(const json& j, PipelineConfig& cfg) {
  Section s(j, "eval");
  s.read("episodes", cfg.eval.episodes);
  s.read("seed", cfg.eval.seed);
  s.read("success_threshold", cfg.eval.success_threshold);
  s.finish();
}

void read_paths(const json& j, PipelineConfig& cfg) {
  Section s(j, "paths");
  auto& p = cfg.paths;
  s.read_path("root", p.root);
  s.read_path("data_dir", p.data_dir);
  s.read_path("checkpoint_dir", p.checkpoint_dir);
  s.read_path("report_dir", p.report_dir);
  std::filesystem::path rc;
  if (s.read_path("rollout_checkpoint", rc)) p.rollout_checkpoint = rc;
  s.finish();
}

}  // namespace

std::vector<Persona> default_personas() { return {{0.0, 0.1}, {0.1, 0.3}, {0.25, 0.6}, {0.4, 0.9}}; }

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  if (!search_seed_set) search.seed = s;
  if (!train_seed_set) train.seed = s;
}

PipelineConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig cfg;
  Section s(root, "");
  std::uint64_t seed = 0;
  s.read("seed", seed);
  if (const json* j = s.sub("env")) read_env(*j, cfg);
  if (const json* j = s.sub("search")) read_search(*j, cfg);
  if (const json* j = s.sub("labeling")) read_labeling(*j, cfg);
  if (const json* j = s.sub("policy")) read_policy(*j, cfg);
  if (const json* j = s.sub("train")) read_train(*j, cfg);
  if (const json* j = s.sub("eval")) read_eval(*j, cfg);
  if (const json* j = s.sub("paths")) read_paths(*j, cfg);
  s.finish();
  cfg.set_seed(seed);
  validate(cfg);
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void validate(const PipelineConfig& cfg) {
  if (cfg.tasks < 0) throw ConfigError("env.tasks must be >= 0");
  const auto& g = cfg.env.grid;
  if (g.width < 2 || g.height < 2) throw ConfigError("env.grid width and height must be >= 2");
  if (g.width > 10 || g.height > 10) throw ConfigError("env.grid width and height must be <= 10");
  if (g.num_objects < 1 || g.num_objects > g.width * g.height - 1) {
    throw ConfigError("env.grid.num_objects must be in [1, cells - 1]");
  }
  if (g.view_radius < 0) throw ConfigError("env.grid.view_radius must be >= 0");
  if (g.max_steps < 1) throw ConfigError("env.grid.max_steps must be >= 1");
  if (g.pickup_prob < 0.0 || g.pickup_prob > 1.0) throw ConfigError("env.grid.pickup_prob must be in [0, 1]");
  const auto& sh = cfg.env.shop;
  if (sh.catalog_size < 1 || sh.catalog_size > 16) throw ConfigError("env.shop.catalog_size must be in [1, 16]");
  if (sh.page_size < 1) throw ConfigError("env.shop.page_size must be >= 1");
  if (sh.max_steps < 1) throw ConfigError("env.shop.max_steps must be >= 1");
  validate(cfg.search);
  if (cfg.personas.empty()) throw ConfigError("search.personas must not be empty");
  for (const auto& p : cfg.personas) {
    if (p.noise < 0.0 || p.noise > 1.0 || p.verbose_prob < 0.0 || p.verbose_prob > 1.0) {
      throw ConfigError("search.personas entries must have noise and verbose_prob in [0, 1]");
    }
  }
  validate(cfg.labeling);
  if (cfg.rephraser != "truncate" && cfg.rephraser != "identity") {
    throw ConfigError("labeling.rephraser must be 'truncate' or 'identity'");
  }
  validate(cfg.policy);
  if (cfg.policy.vocab_size < vocab().size()) {
    throw ConfigError("policy.vocab_size must be at least " + std::to_string(vocab().size()));
  }
  if (cfg.max_step_tokens < 2) throw ConfigError("policy.max_step_tokens must be >= 2");
  if (cfg.max_step_tokens >= cfg.policy.context) throw ConfigError("policy.max_step_tokens must be below policy.context");
  if (!(cfg.rollout_temperature >= 0.0)) throw ConfigError("policy.rollout_temperature must be >= 0");
  validate(cfg.train);
  if (cfg.eval.episodes < 1) throw ConfigError("eval.episodes must be >= 1");
}

std::string to_json(const PipelineConfig& cfg) {
  ojson j;
  j["seed"] = cfg.seed;
  j["env"]["kind"] = to_string(cfg.env_kind);
  j["env"]["tasks"] = cfg.tasks;
  const auto& g = cfg.env.grid;
  j["env"]["grid"] = {{"width", g.width},         {"height", g.height},       {"num_objects", g.num_objects},
                      {"view_radius", g.view_radius}, {"max_steps", g.max_steps}, {"pickup_prob", g.pickup_prob}};
  const auto& sh = cfg.env.shop;
  j["env"]["shop"] = {{"catalog_size", sh.catalog_size}, {"page_size", sh.page_size}, {"max_steps", sh.max_steps}};
  const auto& s = cfg.search;
  j["search"] = {{"exploration_weight", s.exploration_weight}, {"max_depth", s.max_depth},
                 {"simulations", s.simulations},               {"rollout_policy", to_string(s.rollout_policy)},
                 {"seed", s.seed},                             {"tree_verbose_prob", s.tree_verbose_prob}};
  j["search"]["personas"] = ojson::array();
  for (const auto& p : cfg.personas) j["search"]["personas"].push_back({{"noise", p.noise}, {"verbose_prob", p.verbose_prob}});
  const auto& l = cfg.labeling;
  j["labeling"] = {{"kappa0", l.kappa0},
                   {"kappa1", l.kappa1},
                   {"kappa2", l.kappa2},
                   {"step_threshold", l.step_threshold},
                   {"require_strict_margin", l.require_strict_margin},
                   {"rephrase_budget", l.rephrase_budget},
                   {"rephraser", cfg.rephraser}};
  const auto& m = cfg.policy;
  j["policy"] = {{"vocab_size", m.vocab_size}, {"context", m.context},   {"d_model", m.d_model},
                 {"n_layers", m.n_layers},     {"n_heads", m.n_heads},   {"d_ff", m.d_ff},
                 {"max_step_tokens", cfg.max_step_tokens}, {"rollout_temperature", cfg.rollout_temperature}};
  const auto& t = cfg.train;
  j["train"] = {{"beta", t.beta},
                {"lambda_d", t.lambda_d},
                {"lambda_u", t.lambda_u},
                {"alpha1", t.alpha1},
                {"alpha2", t.alpha2},
                {"penalty_enabled", t.penalty_enabled},
                {"learning_rate", t.learning_rate},
                {"epochs", t.epochs},
                {"batch_size", t.batch_size},
                {"seed", t.seed}};
  j["eval"] = {{"episodes", cfg.eval.episodes}, {"seed", cfg.eval.seed}, {"success_threshold", cfg.eval.success_threshold}};
  j["paths"] = {{"root", cfg.paths.root.string()},
                {"data_dir", cfg.paths.data_dir.string()},
                {"checkpoint_dir", cfg.paths.checkpoint_dir.string()},
                {"report_dir", cfg.paths.report_dir.string()}};
  if (cfg.paths.rollout_checkpoint) j["paths"]["rollout_checkpoint"] = cfg.paths.rollout_checkpoint->string();
  return j.dump(2);
}

Rephraser make_rephraser(const PipelineConfig& cfg) {
  if (cfg.rephraser == "identity") return identity_rephraser();
  return truncation_rephraser(static_cast<std::size_t>(cfg.labeling.rephrase_budget));
}

}  // namespace depo

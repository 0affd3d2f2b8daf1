#include "depo/envs.hpp"

#include <algorithm>
#include <cstdlib>
#include <stdexcept>

#include "depo/errors.hpp"
#include "depo/rng.hpp"

namespace depo {
namespace {

constexpr std::string_view kGridColors[] = {"red", "green", "blue", "yellow", "purple", "grey"};
constexpr std::string_view kGridTypes[] = {"ball", "key", "box"};
constexpr std::string_view kShopCategories[] = {"shirt", "shoe", "mug", "lamp", "bag", "hat"};
constexpr std::string_view kShopSizes[] = {"small", "medium", "large"};
constexpr std::string_view kShopPrices[] = {"cheap", "mid", "pricey"};
constexpr std::string_view kDirections[] = {"north", "south", "east", "west"};
constexpr std::string_view kVerbNames[] = {"move", "pickup", "drop", "noop",
                                           "search", "click", "buy", "back"};

constexpr int kDx[] = {0, 0, 1, -1};
constexpr int kDy[] = {1, -1, 0, 0};

const GridState& grid(const EnvState& s) { return std::get<GridState>(s.detail); }
const ShopState& shop(const EnvState& s) { return std::get<ShopState>(s.detail); }

void check_grid_params(const GridParams& p) {
  if (p.width < 2 || p.width > 10 || p.height < 2 || p.height > 10) {
    throw ConfigError("grid width/height must be in [2, 10]");
  }
  const int cells = p.width * p.height;
  const int combos = static_cast<int>(std::size(kGridColors) * std::size(kGridTypes));
  if (p.num_objects < 1 || p.num_objects > std::min(cells - 1, combos)) {
    throw ConfigError("grid num_objects out of range");
  }
  if (p.view_radius < 0) throw ConfigError("grid view_radius must be >= 0");
  if (p.max_steps < 1) throw ConfigError("grid max_steps must be >= 1");
  if (p.pickup_prob < 0.0 || p.pickup_prob > 1.0) throw ConfigError("grid pickup_prob must be in [0, 1]");
}

void check_shop_params(const ShopParams& p) {
  if (p.catalog_size < 1 || p.catalog_size > 16) throw ConfigError("shop catalog_size must be in [1, 16]");
  if (p.page_size < 1) throw ConfigError("shop page_size must be >= 1");
  if (p.max_steps < 1) throw ConfigError("shop max_steps must be >= 1");
}

GridState generate_grid(const GridParams& p, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x67726964));
  GridState g;
  g.width = p.width;
  g.height = p.height;
  g.view_radius = p.view_radius;
  std::vector<int> cells(static_cast<std::size_t>(p.width * p.height));
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
  shuffle(std::span<int>(cells), rng);
  g.agent_x = cells[0] % p.width;
  g.agent_y = cells[0] / p.width;
  const int n_types = static_cast<int>(std::size(kGridTypes));
  std::vector<int> combos(std::size(kGridColors) * std::size(kGridTypes));
  for (std::size_t i = 0; i < combos.size(); ++i) combos[i] = static_cast<int>(i);
  shuffle(std::span<int>(combos), rng);
  for (int i = 0; i < p.num_objects; ++i) {
    const int cell = cells[static_cast<std::size_t>(i + 1)];
    const int combo = combos[static_cast<std::size_t>(i)];
    g.objects.push_back({combo / n_types, combo % n_types, cell % p.width, cell / p.width, false});
  }
  g.pickup_task = uniform01(rng) < p.pickup_prob;
  return g;
}

int object_at(const GridState& g, int x, int y) {
  for (std::size_t i = 0; i < g.objects.size(); ++i) {
    const auto& o = g.objects[i];
    if (!o.held && o.x == x && o.y == y) return static_cast<int>(i);
  }
  return -1;
}

bool grid_success(const GridState& g) {
  if (g.pickup_task) return g.held == 0;
  const auto& t = g.objects[0];
  return !t.held && t.x == g.agent_x && t.y == g.agent_y;
}

Tokens render_grid(const GridState& g) {
  const auto& v = vocab();
  Tokens out = {v.id("at"), v.id("x" + std::to_string(g.agent_x)),
                v.id("y" + std::to_string(g.agent_y)), v.id("hold")};
  if (g.held >= 0) {
    const auto& o = g.objects[static_cast<std::size_t>(g.held)];
    out.push_back(v.id(kGridColors[o.color]));
    out.push_back(v.id(kGridTypes[o.type]));
  } else {
    out.push_back(v.id("none"));
  }
  for (const auto& o : g.objects) {
    if (o.held) continue;
    const int dx = o.x - g.agent_x;
    const int dy = o.y - g.agent_y;
    if (std::max(std::abs(dx), std::abs(dy)) > g.view_radius) continue;
    out.push_back(v.id(kGridColors[o.color]));
    out.push_back(v.id(kGridTypes[o.type]));
    out.push_back(horizontal_offset_token(dx));
    out.push_back(vertical_offset_token(dy));
  }
  return out;
}

ShopState generate_shop(const ShopParams& p, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x73686f70));
  const int dims[kShopAttributes] = {static_cast<int>(std::size(kShopCategories)),
                                     static_cast<int>(std::size(kGridColors)),
                                     static_cast<int>(std::size(kShopSizes)),
                                     static_cast<int>(std::size(kShopPrices))};
  ShopState s;
  s.page_size = p.page_size;
  for (int a = 0; a < kShopAttributes; ++a) s.target[a] = static_cast<int>(uniform_below(rng, dims[a]));
  s.catalog.push_back(s.target);
  int narrow_matches = 1;  // items matching [color category size]
  while (static_cast<int>(s.catalog.size()) < p.catalog_size) {
    ShopAttributes item{};
    for (int a = 0; a < kShopAttributes; ++a) {
      item[a] = uniform01(rng) < 0.5 ? s.target[a] : static_cast<int>(uniform_below(rng, dims[a]));
    }
    if (item == s.target) continue;
    const bool narrow = item[0] == s.target[0] && item[1] == s.target[1] && item[2] == s.target[2];
    if (narrow && narrow_matches >= p.page_size) continue;
    narrow_matches += narrow ? 1 : 0;
    s.catalog.push_back(item);
  }
  shuffle(std::span<ShopAttributes>(s.catalog), rng);
  return s;
}

// Number of leading attributes (in query order color, category, size) a
// template constrains: template 0 -> category, 1 -> +color, 2 -> +size.
bool matches_query(const ShopAttributes& item, const ShopAttributes& target, int tmpl) {
  if (item[0] != target[0]) return false;
  if (tmpl >= 1 && item[1] != target[1]) return false;
  if (tmpl >= 2 && item[2] != target[2]) return false;
  return true;
}

Tokens render_shop(const ShopState& s) {
  const auto& v = vocab();
  Tokens out = {v.id("page")};
  switch (s.page) {
    case ShopPage::Home: {
      out.push_back(v.id("home"));
      out.push_back(v.id("find"));
      auto attrs = shop_attribute_tokens(s.target);
      out.insert(out.end(), attrs.begin(), attrs.end());
      break;
    }
    case ShopPage::Results:
      out.push_back(v.id("results"));
      if (s.results.empty()) out.push_back(v.id("empty"));
      for (int id : s.results) {
        out.push_back(item_token(id));
        auto attrs = shop_attribute_tokens(s.catalog[static_cast<std::size_t>(id)]);
        out.insert(out.end(), attrs.begin(), attrs.end());
      }
      break;
    case ShopPage::Item: {
      out.push_back(v.id("view"));
      out.push_back(item_token(s.viewing));
      auto attrs = shop_attribute_tokens(s.catalog[static_cast<std::size_t>(s.viewing)]);
      out.insert(out.end(), attrs.begin(), attrs.end());
      break;
    }
  }
  return out;
}

std::vector<EnvAction> grid_legal(const GridState& g) {
  std::vector<EnvAction> out;
  for (int d = 0; d < 4; ++d) {
    const int nx = g.agent_x + kDx[d];
    const int ny = g.agent_y + kDy[d];
    if (nx < 0 || ny < 0 || nx >= g.width || ny >= g.height) continue;
    out.push_back({Verb::Move, {vocab().id(kDirections[d])}});
  }
  const int here = object_at(g, g.agent_x, g.agent_y);
  if (g.held < 0 && here >= 0) out.push_back({Verb::Pickup, {}});
  if (g.held >= 0 && here < 0) out.push_back({Verb::Drop, {}});
  return out;
}

std::vector<EnvAction> shop_legal(const ShopState& s) {
  std::vector<EnvAction> out;
  switch (s.page) {
    case ShopPage::Home:
      for (int q = 0; q < kShopQueryTemplates; ++q) out.push_back({Verb::Search, shop_query(s.target, q)});
      break;
    case ShopPage::Results:
      for (int id : s.results) out.push_back({Verb::Click, {item_token(id)}});
      out.push_back({Verb::Back, {}});
      break;
    case ShopPage::Item:
      out.push_back({Verb::Buy, {}});
      out.push_back({Verb::Back, {}});
      break;
  }
  return out;
}

void apply_grid(GridState& g, const EnvAction& a) {
  switch (a.verb) {
    case Verb::Move:
      for (int d = 0; d < 4; ++d) {
        if (a.args[0] == vocab().id(kDirections[d])) {
          g.agent_x += kDx[d];
          g.agent_y += kDy[d];
        }
      }
      break;
    case Verb::Pickup:
      g.held = object_at(g, g.agent_x, g.agent_y);
      g.objects[static_cast<std::size_t>(g.held)].held = true;
      break;
    case Verb::Drop: {
      auto& o = g.objects[static_cast<std::size_t>(g.held)];
      o.held = false;
      o.x = g.agent_x;
      o.y = g.agent_y;
      g.held = -1;
      break;
    }
    default:
      break;
  }
  const auto& t = g.objects[0];
  if (!t.held && t.x == g.agent_x && t.y == g.agent_y) g.reached_target = true;
  g.success = grid_success(g);
}

void apply_shop(ShopState& s, const EnvAction& a) {
  switch (a.verb) {
    case Verb::Search:
      for (int q = 0; q < kShopQueryTemplates; ++q) {
        if (a.args == shop_query(s.target, q)) s.query = q;
      }
      s.results.clear();
      for (std::size_t id = 0; id < s.catalog.size(); ++id) {
        if (static_cast<int>(s.results.size()) >= s.page_size) break;
        if (matches_query(s.catalog[id], s.target, s.query)) s.results.push_back(static_cast<int>(id));
      }
      s.page = ShopPage::Results;
      break;
    case Verb::Click:
      for (int id : s.results) {
        if (a.args[0] == item_token(id)) s.viewing = id;
      }
      s.page = ShopPage::Item;
      break;
    case Verb::Back:
      s.page = s.page == ShopPage::Item ? ShopPage::Results : ShopPage::Home;
      break;
    case Verb::Buy:
      s.purchased = s.viewing;
      break;
    default:
      break;
  }
}

int shop_match_count(const ShopState& s) {
  if (!s.purchased) return 0;
  const auto& item = s.catalog[static_cast<std::size_t>(*s.purchased)];
  int n = 0;
  for (int a = 0; a < kShopAttributes; ++a) n += item[a] == s.target[a] ? 1 : 0;
  return n;
}

}  // namespace

std::string_view to_string(EnvKind kind) {
  switch (kind) {
    case EnvKind::GridWorld:
      return "GridWorld";
    case EnvKind::ShopSim:
      return "ShopSim";
  }
  throw ConfigError("unknown env_kind " + std::to_string(static_cast<int>(kind)));
}

EnvKind parse_env_kind(std::string_view name) {
  if (name == "GridWorld") return EnvKind::GridWorld;
  if (name == "ShopSim") return EnvKind::ShopSim;
  throw ConfigError("unknown env_kind '" + std::string(name) + "'");
}

std::string_view to_string(Verb verb) { return kVerbNames[static_cast<int>(verb)]; }

std::optional<Verb> parse_verb(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kVerbNames); ++i) {
    if (kVerbNames[i] == name) return static_cast<Verb>(i);
  }
  return std::nullopt;
}

std::span<const std::string_view> grid_colors() { return kGridColors; }
std::span<const std::string_view> grid_types() { return kGridTypes; }
std::span<const std::string_view> shop_categories() { return kShopCategories; }
std::span<const std::string_view> shop_colors() { return kGridColors; }
std::span<const std::string_view> shop_sizes() { return kShopSizes; }
std::span<const std::string_view> shop_prices() { return kShopPrices; }
std::span<const std::string_view> grid_directions() { return kDirections; }

TokenId horizontal_offset_token(int dx) {
  return vocab().id(dx >= 0 ? "e" + std::to_string(dx) : "w" + std::to_string(-dx));
}

TokenId vertical_offset_token(int dy) {
  return vocab().id(dy >= 0 ? "n" + std::to_string(dy) : "s" + std::to_string(-dy));
}

TokenId item_token(int display_id) { return vocab().id("item" + std::to_string(display_id)); }

Tokens shop_attribute_tokens(const ShopAttributes& attrs) {
  const auto& v = vocab();
  return {v.id(kShopCategories[attrs[0]]), v.id(kGridColors[attrs[1]]), v.id(kShopSizes[attrs[2]]),
          v.id(kShopPrices[attrs[3]])};
}

Tokens shop_query(const ShopAttributes& target, int template_index) {
  const auto& v = vocab();
  Tokens q;
  if (template_index >= 1) q.push_back(v.id(kGridColors[target[1]]));
  q.push_back(v.id(kShopCategories[target[0]]));
  if (template_index >= 2) q.push_back(v.id(kShopSizes[target[2]]));
  return q;
}

Tokens serialize_action(const EnvAction& action) {
  Tokens out = {vocab().id(to_string(action.verb))};
  out.insert(out.end(), action.args.begin(), action.args.end());
  return out;
}

std::optional<EnvAction> parse_action(EnvKind kind, std::span<const TokenId> tokens) {
  const auto& v = vocab();
  if (tokens.empty() || !v.valid(tokens[0])) return std::nullopt;
  const auto verb = parse_verb(v.symbol(tokens[0]));
  if (!verb) return std::nullopt;
  Tokens args(tokens.begin() + 1, tokens.end());
  for (auto t : args) {
    if (!v.valid(t)) return std::nullopt;
  }
  const auto no_args = [&]() -> std::optional<EnvAction> {
    if (!args.empty()) return std::nullopt;
    return EnvAction{*verb, {}};
  };
  if (*verb == Verb::Noop) return no_args();
  if (kind == EnvKind::GridWorld) {
    switch (*verb) {
      case Verb::Move:
        if (args.size() != 1) return std::nullopt;
        for (auto d : kDirections) {
          if (args[0] == v.id(d)) return EnvAction{Verb::Move, args};
        }
        return std::nullopt;
      case Verb::Pickup:
      case Verb::Drop:
        return no_args();
      default:
        return std::nullopt;
    }
  }
  switch (*verb) {
    case Verb::Search:
      if (args.empty() || args.size() > 3) return std::nullopt;
      return EnvAction{Verb::Search, args};
    case Verb::Click:
      if (args.size() != 1 || !v.symbol(args[0]).starts_with("item")) return std::nullopt;
      return EnvAction{Verb::Click, args};
    case Verb::Buy:
    case Verb::Back:
      return no_args();
    default:
      return std::nullopt;
  }
}

Environment::Environment(EnvParams params) : params_(params) {
  check_grid_params(params_.grid);
  check_shop_params(params_.shop);
}

Task Environment::make_task(EnvKind kind, std::uint64_t seed) const {
  const auto& v = vocab();
  Task task;
  task.env_kind = kind;
  task.seed = seed;
  if (kind == EnvKind::GridWorld) {
    const auto g = generate_grid(params_.grid, seed);
    const auto& t = g.objects[0];
    task.id = "grid-" + std::to_string(seed);
    task.instruction_tokens = {v.id(g.pickup_task ? "pickup" : "goto"), v.id(kGridColors[t.color]),
                               v.id(kGridTypes[t.type])};
  } else if (kind == EnvKind::ShopSim) {
    const auto s = generate_shop(params_.shop, seed);
    task.id = "shop-" + std::to_string(seed);
    task.instruction_tokens = {v.id("find")};
    auto attrs = shop_attribute_tokens(s.target);
    task.instruction_tokens.insert(task.instruction_tokens.end(), attrs.begin(), attrs.end());
  } else {
    throw ConfigError("unknown env_kind " + std::to_string(static_cast<int>(kind)));
  }
  return task;
}

ResetResult Environment::reset(const Task& task) const {
  EnvState state;
  state.kind = task.env_kind;
  if (task.env_kind == EnvKind::GridWorld) {
    state.detail = generate_grid(params_.grid, task.seed);
    state.max_steps = params_.grid.max_steps;
  } else if (task.env_kind == EnvKind::ShopSim) {
    state.detail = generate_shop(params_.shop, task.seed);
    state.max_steps = params_.shop.max_steps;
  } else {
    throw ConfigError("unknown env_kind " + std::to_string(static_cast<int>(task.env_kind)));
  }
  Observation obs = observe(state);
  return {std::move(state), std::move(obs)};
}

Observation Environment::observe(const EnvState& state) const {
  if (state.kind == EnvKind::GridWorld) return {render_grid(grid(state))};
  return {render_shop(shop(state))};
}

std::vector<EnvAction> Environment::legal_actions(const EnvState& state) const {
  if (state.terminal) return {};
  if (state.kind == EnvKind::GridWorld) return grid_legal(grid(state));
  return shop_legal(shop(state));
}

StepResult Environment::step(const EnvState& state, const EnvAction& action) const {
  if (state.terminal) throw ContractViolation("step called on a terminal state");
  StepResult r{state, {}, false, false};
  const auto legal = legal_actions(state);
  r.legal = std::find(legal.begin(), legal.end(), action) != legal.end();
  EnvState& next = r.state;
  next.step_counter += 1;
  if (r.legal) {
    if (next.kind == EnvKind::GridWorld) {
      apply_grid(std::get<GridState>(next.detail), action);
    } else {
      apply_shop(std::get<ShopState>(next.detail), action);
    }
  }
  const bool done = next.kind == EnvKind::GridWorld
                        ? grid(next).success
                        : shop(next).purchased.has_value();
  next.terminal = done || next.step_counter >= next.max_steps;
  r.terminal = next.terminal;
  r.observation = observe(next);
  if (!r.legal) {
    Tokens prefix = {vocab().id("nothing"), vocab().id("happened")};
    r.observation.tokens.insert(r.observation.tokens.begin(), prefix.begin(), prefix.end());
  }
  return r;
}

bool Environment::success(const EnvState& state) const {
  if (state.kind == EnvKind::GridWorld) return grid(state).success;
  return shop_match_count(shop(state)) == kShopAttributes;
}

double Environment::truncated_reward(const EnvState& state) const {
  if (state.kind == EnvKind::GridWorld) {
    const auto& g = grid(state);
    if (!g.pickup_task) return 0.0;
    const int satisfied = (g.reached_target ? 1 : 0) + (g.held == 0 ? 1 : 0);
    return 0.5 * (static_cast<double>(satisfied) / 2.0);
  }
  return 0.0;
}

double Environment::final_reward(const EnvState& state) const {
  if (!state.terminal) throw ContractViolation("final_reward called on a non-terminal state");
  if (state.kind == EnvKind::GridWorld) {
    if (grid(state).success) {
      return 1.0 - 0.9 * (static_cast<double>(state.step_counter) / static_cast<double>(state.max_steps));
    }
    return truncated_reward(state);
  }
  return static_cast<double>(shop_match_count(shop(state))) / static_cast<double>(kShopAttributes);
}

}  // namespace depo

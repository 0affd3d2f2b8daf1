#pragma once

// Simulated POMDP environments: a BabyAI-like grid world and a WebShop-like
// item search. States are plain values, so a snapshot is a copy.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "depo/vocab.hpp"

namespace depo {

enum class EnvKind { GridWorld = 0, ShopSim = 1 };

std::string_view to_string(EnvKind kind);
EnvKind parse_env_kind(std::string_view name);  // throws ConfigError

enum class Verb { Move, Pickup, Drop, Noop, Search, Click, Buy, Back };

std::string_view to_string(Verb verb);
std::optional<Verb> parse_verb(std::string_view name);

struct EnvAction {
  Verb verb = Verb::Noop;
  Tokens args;

  bool operator==(const EnvAction&) const = default;
};

struct Task {
  std::string id;
  Tokens instruction_tokens;
  EnvKind env_kind = EnvKind::GridWorld;
  std::uint64_t seed = 0;

  bool operator==(const Task&) const = default;
};

struct Observation {
  Tokens tokens;
  bool operator==(const Observation&) const = default;
};

struct GridObject {
  int color = 0;
  int type = 0;
  int x = 0;
  int y = 0;
  bool held = false;
  bool operator==(const GridObject&) const = default;
};

struct GridState {
  int width = 0;
  int height = 0;
  int view_radius = 0;
  int agent_x = 0;
  int agent_y = 0;
  std::vector<GridObject> objects;  // objects[0] is the task target
  bool pickup_task = false;
  int held = -1;  // index into objects
  bool reached_target = false;
  bool success = false;
  bool operator==(const GridState&) const = default;
};

inline constexpr int kShopAttributes = 4;  // category, color, size, price
using ShopAttributes = std::array<int, kShopAttributes>;

enum class ShopPage { Home, Results, Item };

struct ShopState {
  ShopAttributes target{};
  std::vector<ShopAttributes> catalog;  // index = display id
  int page_size = 0;
  ShopPage page = ShopPage::Home;
  int query = -1;  // index of the active query template
  std::vector<int> results;
  int viewing = -1;
  std::optional<int> purchased;
  bool operator==(const ShopState&) const = default;
};

struct EnvState {
  EnvKind kind = EnvKind::GridWorld;
  std::variant<GridState, ShopState> detail;
  int step_counter = 0;
  int max_steps = 0;
  bool terminal = false;
  bool operator==(const EnvState&) const = default;
};

struct GridParams {
  int width = 5;
  int height = 5;
  int num_objects = 3;
  int view_radius = 2;
  int max_steps = 64;
  double pickup_prob = 0.3;
};

struct ShopParams {
  int catalog_size = 12;
  int page_size = 4;
  int max_steps = 15;
};

struct EnvParams {
  GridParams grid;
  ShopParams shop;
};

struct ResetResult {
  EnvState state;
  Observation observation;
};

struct StepResult {
  EnvState state;
  Observation observation;
  bool terminal = false;
  bool legal = true;
};

class Environment {
 public:
  explicit Environment(EnvParams params = {});

  const EnvParams& params() const { return params_; }

  // Builds the task (instruction) for a seed; reset() rebuilds the same hidden
  // state from the seed.
  Task make_task(EnvKind kind, std::uint64_t seed) const;

  ResetResult reset(const Task& task) const;
  StepResult step(const EnvState& state, const EnvAction& action) const;
  double final_reward(const EnvState& state) const;
  // Reward of the failure branch evaluated at a non-terminal state; used when
  // a search is cut off by a depth cap before the horizon.
  double truncated_reward(const EnvState& state) const;
  bool success(const EnvState& state) const;
  std::vector<EnvAction> legal_actions(const EnvState& state) const;
  EnvState snapshot(const EnvState& state) const { return state; }
  Observation observe(const EnvState& state) const;

 private:
  EnvParams params_;
};

// Action grammar shared with the policy: verb token followed by arguments.
Tokens serialize_action(const EnvAction& action);
std::optional<EnvAction> parse_action(EnvKind kind, std::span<const TokenId> tokens);

// Symbol tables used by the environments and the scripted actors.
std::span<const std::string_view> grid_colors();
std::span<const std::string_view> grid_types();
std::span<const std::string_view> shop_categories();
std::span<const std::string_view> shop_colors();
std::span<const std::string_view> shop_sizes();
std::span<const std::string_view> shop_prices();
std::span<const std::string_view> grid_directions();  // north south east west

// Token for a signed horizontal/vertical offset, e.g. +2 -> "e2", -1 -> "s1".
TokenId horizontal_offset_token(int dx);
TokenId vertical_offset_token(int dy);
TokenId item_token(int display_id);
Tokens shop_attribute_tokens(const ShopAttributes& attrs);
// Query templates: [category], [color category], [color category size].
inline constexpr int kShopQueryTemplates = 3;
Tokens shop_query(const ShopAttributes& target, int template_index);

}  // namespace depo

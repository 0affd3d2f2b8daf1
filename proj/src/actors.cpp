#include "depo/actors.hpp"

#include <cstdlib>

namespace depo {
namespace {

struct GoalPoint {
  int x = 0;
  int y = 0;
  bool target_visible = false;
};

bool target_visible(const GridState& g) {
  const auto& t = g.objects[0];
  if (t.held) return false;
  return std::max(std::abs(t.x - g.agent_x), std::abs(t.y - g.agent_y)) <= g.view_radius;
}

GoalPoint goal_point(const GridState& g) {
  if (target_visible(g)) return {g.objects[0].x, g.objects[0].y, true};
  return {(g.width - 1) / 2, (g.height - 1) / 2, false};
}

// 0 north, 1 south, 2 east, 3 west; -1 when already at the point.
int direction_toward(const GridState& g, int x, int y) {
  const int dx = x - g.agent_x;
  const int dy = y - g.agent_y;
  if (dx == 0 && dy == 0) return -1;
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? 2 : 3;
  return dy > 0 ? 0 : 1;
}

int direction_index(const EnvAction& a) {
  const auto dirs = grid_directions();
  for (std::size_t d = 0; d < dirs.size(); ++d) {
    if (!a.args.empty() && a.args[0] == vocab().id(dirs[d])) return static_cast<int>(d);
  }
  return -1;
}

int manhattan(int x0, int y0, int x1, int y1) { return std::abs(x0 - x1) + std::abs(y0 - y1); }

Tokens grid_thought(const GridState& g, const EnvAction& action, ThoughtStyle style) {
  const auto& v = vocab();
  const bool verbose = style == ThoughtStyle::Verbose;
  const auto& t = g.objects[0];
  const TokenId color = v.id(grid_colors()[t.color]);
  const TokenId type = v.id(grid_types()[t.type]);
  const GoalPoint goal = goal_point(g);
  if (action.verb == Verb::Move) {
    const int d = direction_index(action);
    const TokenId dir = action.args.empty() ? v.id("north") : action.args[0];
    const int nx = g.agent_x + (d == 2 ? 1 : d == 3 ? -1 : 0);
    const int ny = g.agent_y + (d == 0 ? 1 : d == 1 ? -1 : 0);
    const bool good = manhattan(nx, ny, goal.x, goal.y) < manhattan(g.agent_x, g.agent_y, goal.x, goal.y);
    if (!good) {
      if (!verbose) return {v.id("maybe"), v.id("go"), dir};
      return {v.id("hmm"), v.id("not"), v.id("sure"), v.id(";"), v.id("maybe"), v.id("i"),
              v.id("should"), v.id("try"), v.id("going"), dir};
    }
    if (goal.target_visible) {
      const TokenId ew = horizontal_offset_token(t.x - g.agent_x);
      const TokenId ns = vertical_offset_token(t.y - g.agent_y);
      const bool near = manhattan(g.agent_x, g.agent_y, t.x, t.y) <= 2;
      if (!verbose) return {color, type, ew, ns, v.id("go"), dir};
      return {v.id("i"), v.id("see"), v.id("the"), color, type, v.id("at"), ew, ns, v.id(";"),
              v.id("it"), v.id("is"), v.id(near ? "near" : "far"), v.id(";"), v.id("so"),
              v.id("i"), v.id("will"), v.id("go"), dir, v.id("now")};
    }
    if (!verbose) return {v.id("explore"), v.id("go"), dir};
    return {v.id("i"), v.id("can"), v.id("not"), v.id("see"), v.id("the"), color, type, v.id(";"),
            v.id("i"), v.id("will"), v.id("explore"), v.id(";"), v.id("go"), dir, v.id("now")};
  }
  if (action.verb == Verb::Pickup) {
    const bool on_target = !t.held && t.x == g.agent_x && t.y == g.agent_y;
    if (on_target) {
      if (!verbose) return {v.id("on"), color, type, v.id("take")};
      return {v.id("i"), v.id("am"), v.id("on"), v.id("the"), color, type, v.id(";"), v.id("it"),
              v.id("is"), v.id("here"), v.id(";"), v.id("i"), v.id("will"), v.id("take"), v.id("it")};
    }
    if (!verbose) return {v.id("maybe"), v.id("take"), v.id("this")};
    return {v.id("hmm"), v.id("maybe"), v.id("i"), v.id("should"), v.id("take"), v.id("this"),
            v.id("item"), v.id("now")};
  }
  if (action.verb == Verb::Drop) {
    if (!verbose) return {v.id("wrong"), v.id("item")};
    return {v.id("this"), v.id("is"), v.id("the"), v.id("wrong"), v.id("item"), v.id(";"), v.id("let"),
            v.id("me"), v.id("drop"), v.id("it")};
  }
  return {v.id("hmm")};
}

bool is_target_item(const ShopState& s, int id) {
  return id >= 0 && s.catalog[static_cast<std::size_t>(id)] == s.target;
}

int clicked_item(const ShopState& s, const EnvAction& a) {
  for (int id : s.results) {
    if (!a.args.empty() && a.args[0] == item_token(id)) return id;
  }
  return -1;
}

Tokens shop_thought(const ShopState& s, const EnvAction& action, ThoughtStyle style) {
  const auto& v = vocab();
  const bool verbose = style == ThoughtStyle::Verbose;
  const auto target = shop_attribute_tokens(s.target);  // category color size price
  switch (action.verb) {
    case Verb::Search: {
      const bool narrow = action.args.size() == 3;
      if (!verbose) return narrow ? Tokens{v.id("look"), v.id("for"), target[0]} : Tokens{v.id("maybe"), target[0]};
      Tokens out = {v.id("i"), v.id("need"), v.id("a"), target[1], target[2], target[0], target[3], v.id(";")};
      if (!narrow) out.insert(out.end(), {v.id("not"), v.id("sure"), v.id(";")});
      out.insert(out.end(), {v.id("let"), v.id("me"), v.id("look"), v.id("for"), v.id("it")});
      return out;
    }
    case Verb::Click: {
      const int id = clicked_item(s, action);
      const TokenId item = id >= 0 ? item_token(id) : v.id("item");
      if (is_target_item(s, id)) {
        if (!verbose) return {item, v.id("matches")};
        return {v.id("i"), v.id("see"), item, v.id(";"), v.id("i"), v.id("think"), v.id("it"),
                v.id("matches"), v.id("the"), v.id("target"), v.id(";"), v.id("check"), v.id("it")};
      }
      if (!verbose) return {v.id("maybe"), item};
      return {v.id("hmm"), v.id("not"), v.id("sure"), v.id(";"), v.id("maybe"), v.id("check"), item};
    }
    case Verb::Buy:
      if (is_target_item(s, s.viewing)) {
        if (!verbose) return {v.id("this"), v.id("matches")};
        return {v.id("this"), v.id("item"), v.id("matches"), v.id("the"), v.id("target"), v.id(";"),
                v.id("i"), v.id("will"), v.id("buy"), v.id("it"), v.id("now")};
      }
      if (!verbose) return {v.id("maybe"), v.id("this")};
      return {v.id("hmm"), v.id("maybe"), v.id("this"), v.id("is"), v.id("good")};
    case Verb::Back:
      if (!verbose) return {v.id("go"), v.id("back")};
      return {v.id("this"), v.id("is"), v.id("wrong"), v.id(";"), v.id("let"), v.id("me"), v.id("go"),
              v.id("back"), v.id("now")};
    default:
      return {v.id("hmm")};
  }
}

EnvAction random_legal(const Environment& env, const EnvState& state, Rng& rng) {
  const auto legal = env.legal_actions(state);
  if (legal.empty()) return {Verb::Noop, {}};
  return legal[static_cast<std::size_t>(uniform_below(rng, legal.size()))];
}

EnvAction scripted_grid(const GridState& g, Rng& rng, const Environment& env, const EnvState& state) {
  const auto& v = vocab();
  const auto& t = g.objects[0];
  const auto move = [&](int d) { return EnvAction{Verb::Move, {v.id(grid_directions()[static_cast<std::size_t>(d)])}}; };
  if (g.pickup_task && g.held > 0) {
    bool occupied = false;
    for (const auto& o : g.objects) occupied |= !o.held && o.x == g.agent_x && o.y == g.agent_y;
    if (!occupied) return {Verb::Drop, {}};
  }
  const GoalPoint goal = goal_point(g);
  if (goal.target_visible && t.x == g.agent_x && t.y == g.agent_y && g.pickup_task && g.held < 0) {
    return {Verb::Pickup, {}};
  }
  const int d = direction_toward(g, goal.x, goal.y);
  if (d >= 0) return move(d);
  return random_legal(env, state, rng);
}

EnvAction scripted_shop(const ShopState& s) {
  switch (s.page) {
    case ShopPage::Home:
      return {Verb::Search, shop_query(s.target, kShopQueryTemplates - 1)};
    case ShopPage::Results:
      for (int id : s.results) {
        if (is_target_item(s, id)) return {Verb::Click, {item_token(id)}};
      }
      return {Verb::Back, {}};
    case ShopPage::Item:
      return is_target_item(s, s.viewing) ? EnvAction{Verb::Buy, {}} : EnvAction{Verb::Back, {}};
  }
  return {Verb::Noop, {}};
}

}  // namespace

Tokens templated_thought(const Environment&, const EnvState& state, const EnvAction& action,
                         ThoughtStyle style) {
  if (state.kind == EnvKind::GridWorld) return grid_thought(std::get<GridState>(state.detail), action, style);
  return shop_thought(std::get<ShopState>(state.detail), action, style);
}

EnvAction scripted_action(const Environment& env, const EnvState& state, Rng& rng) {
  if (state.kind == EnvKind::GridWorld) {
    return scripted_grid(std::get<GridState>(state.detail), rng, env, state);
  }
  return scripted_shop(std::get<ShopState>(state.detail));
}

ActorDecision UniformRandomActor::act(const EpisodeView& ep, Rng& rng) {
  ActorDecision d;
  d.action = random_legal(ep.env, ep.state, rng);
  d.thought = templated_thought(ep.env, ep.state, d.action, ThoughtStyle::Concise);
  d.action_tokens = action_segment(d.action);
  return d;
}

ActorDecision HeuristicActor::act(const EpisodeView& ep, Rng& rng) {
  ActorDecision d;
  const bool explore = uniform01(rng) < noise_;
  d.action = explore ? random_legal(ep.env, ep.state, rng) : scripted_action(ep.env, ep.state, rng);
  const auto style = uniform01(rng) < verbose_prob_ ? ThoughtStyle::Verbose : ThoughtStyle::Concise;
  d.thought = templated_thought(ep.env, ep.state, d.action, style);
  d.action_tokens = action_segment(d.action);
  return d;
}

ActorDecision NoopActor::act(const EpisodeView&, Rng&) {
  ActorDecision d;
  d.action = {Verb::Noop, {}};
  d.action_tokens = action_segment(d.action);
  return d;
}

}  // namespace depo

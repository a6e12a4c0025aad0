#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "advpol/errors.hpp"
#include "advpol/rng.hpp"

namespace advpol {

enum class Outcome { none, adv_win, vic_win, tie };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::adv_win: return "adv_win";
    case Outcome::vic_win: return "vic_win";
    case Outcome::tie: return "tie";
    default: return "none";
  }
}

struct Successor {
  int state = 0;
  double prob = 0.0;
};

// Named slice of the dense observation vector.
struct FeatureBlock {
  std::string name;
  int offset = 0;
  int size = 0;
};

// Finite two-player simultaneous-move game with state rewards. Absorbing
// states carry an outcome label and self-loop forever.
struct MarkovGame {
  std::string name;
  int num_states = 0;
  int num_adv_actions = 0;
  int num_vic_actions = 0;
  std::vector<std::vector<Successor>> kernel;  // (s * A + a) * V + v
  std::vector<double> adv_reward;
  std::vector<double> vic_reward;
  double discount = 0.95;
  int initial_state = 0;
  int horizon = 1;  // rollout step budget
  std::vector<Outcome> outcome;

  // Observation features: every state switches on a few unit coordinates.
  int feature_dim = 0;
  std::vector<FeatureBlock> feature_blocks;
  std::vector<std::vector<int>> active_features;

  const std::vector<Successor>& successors(int s, int a, int v) const {
    return kernel[(static_cast<std::size_t>(s) * num_adv_actions + a) * num_vic_actions + v];
  }
  std::vector<Successor>& successors(int s, int a, int v) {
    return kernel[(static_cast<std::size_t>(s) * num_adv_actions + a) * num_vic_actions + v];
  }
  bool absorbing(int s) const { return outcome[s] != Outcome::none; }

  const FeatureBlock* block(std::string_view block_name) const {
    for (const auto& b : feature_blocks)
      if (b.name == block_name) return &b;
    return nullptr;
  }

  std::vector<double> features(int s) const {
    std::vector<double> x(feature_dim, 0.0);
    for (int i : active_features[s]) x[i] = 1.0;
    return x;
  }

  double max_abs_reward() const {
    double m = 0.0;
    for (int s = 0; s < num_states; ++s)
      m = std::max({m, std::abs(adv_reward[s]), std::abs(vic_reward[s])});
    return m;
  }
};

inline void validate(const MarkovGame& g) {
  require(g.num_states > 0 && g.num_adv_actions > 0 && g.num_vic_actions > 0,
          "game needs at least one state and one action per player");
  require(g.discount >= 0.0 && g.discount < 1.0, "discount must lie in [0, 1)");
  require(g.initial_state >= 0 && g.initial_state < g.num_states, "initial state out of range");
  require(g.horizon >= 1, "horizon must be positive");
  require(static_cast<int>(g.adv_reward.size()) == g.num_states &&
              static_cast<int>(g.vic_reward.size()) == g.num_states &&
              static_cast<int>(g.outcome.size()) == g.num_states &&
              static_cast<int>(g.active_features.size()) == g.num_states,
          "per-state tables have the wrong length");
  require(g.kernel.size() == static_cast<std::size_t>(g.num_states) * g.num_adv_actions *
                                 g.num_vic_actions,
          "transition tensor has the wrong size");
  for (int s = 0; s < g.num_states; ++s) {
    require(std::isfinite(g.adv_reward[s]) && std::isfinite(g.vic_reward[s]),
            "rewards must be finite");
    for (int f : g.active_features[s])
      require(f >= 0 && f < g.feature_dim, "feature index out of range");
    for (int a = 0; a < g.num_adv_actions; ++a) {
      for (int v = 0; v < g.num_vic_actions; ++v) {
        double total = 0.0;
        for (const auto& [t, p] : g.successors(s, a, v)) {
          require(t >= 0 && t < g.num_states, "successor out of range");
          require(p >= 0.0, "negative transition probability");
          total += p;
        }
        require(std::abs(total - 1.0) <= 1e-12, "transition row does not sum to 1");
        if (g.absorbing(s)) {
          const auto& row = g.successors(s, a, v);
          require(row.size() == 1 && row[0].state == s, "absorbing state must self-loop");
        }
      }
    }
  }
}

struct EnvSpec {
  std::string name = "markov_rps";
  int width = 4;
  int height = 3;
  int length = 7;
  int horizon = 0;  // 0 picks the environment default
  double slip = 0.1;
  double discount = 0.95;
};

inline void to_json(nlohmann::json& j, const EnvSpec& e) {
  j = {{"name", e.name},         {"width", e.width}, {"height", e.height},
       {"length", e.length},     {"horizon", e.horizon}, {"slip", e.slip},
       {"discount", e.discount}};
}

inline void from_json(const nlohmann::json& j, EnvSpec& e) {
  EnvSpec d;
  e.name = j.value("name", d.name);
  e.width = j.value("width", d.width);
  e.height = j.value("height", d.height);
  e.length = j.value("length", d.length);
  e.horizon = j.value("horizon", d.horizon);
  e.slip = j.value("slip", d.slip);
  e.discount = j.value("discount", d.discount);
}

namespace detail {

inline void add_mass(std::map<int, double>& m, int s, double p) {
  if (p > 0.0) m[s] += p;
}

inline std::vector<Successor> to_row(const std::map<int, double>& m) {
  std::vector<Successor> row;
  row.reserve(m.size());
  double total = 0.0;
  for (const auto& [s, p] : m) total += p;
  for (const auto& [s, p] : m) row.push_back({s, p / total});
  return row;
}

inline void make_absorbing(MarkovGame& g, int s, Outcome o, double r_adv, double r_vic) {
  g.outcome[s] = o;
  g.adv_reward[s] = r_adv;
  g.vic_reward[s] = r_vic;
  for (int a = 0; a < g.num_adv_actions; ++a)
    for (int v = 0; v < g.num_vic_actions; ++v) g.successors(s, a, v) = {{s, 1.0}};
}

inline void allocate(MarkovGame& g) {
  g.kernel.assign(static_cast<std::size_t>(g.num_states) * g.num_adv_actions * g.num_vic_actions,
                  {});
  g.adv_reward.assign(g.num_states, 0.0);
  g.vic_reward.assign(g.num_states, 0.0);
  g.outcome.assign(g.num_states, Outcome::none);
  g.active_features.assign(g.num_states, {});
}

inline MarkovGame build_rps(const EnvSpec& spec) {
  MarkovGame g;
  g.name = "markov_rps";
  g.num_states = 4;
  g.num_adv_actions = 3;
  g.num_vic_actions = 3;
  g.discount = spec.discount;
  g.horizon = spec.horizon > 0 ? spec.horizon : 1;
  allocate(g);
  constexpr int play = 0, win = 1, lose = 2, tie = 3;
  make_absorbing(g, win, Outcome::adv_win, 1.0, -1.0);
  make_absorbing(g, lose, Outcome::vic_win, -1.0, 1.0);
  make_absorbing(g, tie, Outcome::tie, 0.0, 0.0);
  // 0 rock, 1 paper, 2 scissors; x beats y when x - y = 1 (mod 3)
  for (int a = 0; a < 3; ++a)
    for (int v = 0; v < 3; ++v) {
      const int d = (a - v + 3) % 3;
      g.successors(play, a, v) = {{d == 0 ? tie : (d == 1 ? win : lose), 1.0}};
    }
  g.feature_dim = 4;
  g.feature_blocks = {{"state", 0, 4}};
  for (int s = 0; s < 4; ++s) g.active_features[s] = {s};
  return g;
}

inline MarkovGame build_grid_pass(const EnvSpec& spec) {
  const int w = spec.width, h = spec.height, cells = w * h;
  require(w >= 3 && w <= 9, "grid_pass width must lie in [3, 9]");
  require(h >= 1 && h <= 9, "grid_pass height must lie in [1, 9]");
  require(spec.slip >= 0.0 && spec.slip <= 0.5, "slip must lie in [0, 0.5]");
  MarkovGame g;
  g.name = "grid_pass";
  g.num_states = cells * cells + 2;
  g.num_adv_actions = 5;
  g.num_vic_actions = 5;
  g.discount = spec.discount;
  g.horizon = spec.horizon > 0 ? spec.horizon : 3 * w;
  allocate(g);
  const int win = cells * cells, lose = win + 1;
  make_absorbing(g, win, Outcome::adv_win, 1.0, -1.0);
  make_absorbing(g, lose, Outcome::vic_win, -1.0, 1.0);

  // 0 stay, 1 up, 2 down, 3 left, 4 right; walls turn a move into stay
  auto move = [&](int cell, int action) {
    int x = cell % w, y = cell / w;
    if (action == 1 && y > 0) --y;
    if (action == 2 && y < h - 1) ++y;
    if (action == 3 && x > 0) --x;
    if (action == 4 && x < w - 1) ++x;
    return x + w * y;
  };
  for (int b = 0; b < cells; ++b) {
    for (int r = 0; r < cells; ++r) {
      const int s = b * cells + r;
      for (int a = 0; a < 5; ++a) {
        for (int v = 0; v < 5; ++v) {
          std::map<int, double> mass;
          for (int bs = 0; bs < 2; ++bs) {
            for (int rs = 0; rs < 2; ++rs) {
              const double p = (bs ? spec.slip : 1.0 - spec.slip) *
                               (rs ? spec.slip : 1.0 - spec.slip);
              const int nb = bs ? b : move(b, a);
              const int nr = rs ? r : move(r, v);
              int next;
              if (nb == nr || (nb == r && nr == b))
                next = win;
              else if (nr % w == w - 1)
                next = lose;
              else
                next = nb * cells + nr;
              add_mass(mass, next, p);
            }
          }
          g.successors(s, a, v) = to_row(mass);
        }
      }
      g.active_features[s] = {b, cells + r};
    }
  }
  const int runner0 = w * (h / 2);
  const int blocker0 = (w - 2) + w * (h / 2);
  g.initial_state = blocker0 * cells + runner0;
  g.feature_dim = 2 * cells;
  g.feature_blocks = {{"adversary_position", 0, cells}, {"victim_position", cells, cells}};
  return g;
}

inline MarkovGame build_push_duel(const EnvSpec& spec) {
  const int len = spec.length;
  require(len >= 4 && len <= 99, "push_duel length must lie in [4, 99]");
  MarkovGame g;
  g.name = "push_duel";
  const int pairs = len * (len - 1) / 2;
  g.num_states = pairs + 3;
  g.num_adv_actions = 3;
  g.num_vic_actions = 3;
  g.discount = spec.discount;
  g.horizon = spec.horizon > 0 ? spec.horizon : 50;
  allocate(g);
  const int win = pairs, lose = pairs + 1, tie = pairs + 2;
  make_absorbing(g, win, Outcome::adv_win, 1.0, -1.0);
  make_absorbing(g, lose, Outcome::vic_win, -1.0, 1.0);
  make_absorbing(g, tie, Outcome::tie, 0.0, 0.0);

  std::vector<int> index(len * len, -1);
  std::vector<std::pair<int, int>> pos;
  for (int a = 0; a < len; ++a)
    for (int v = a + 1; v < len; ++v) {
      index[a * len + v] = static_cast<int>(pos.size());
      pos.emplace_back(a, v);
    }
  auto resolve = [&](int a, int v) {
    const bool adv_fell = a < 0, vic_fell = v > len - 1;
    if (adv_fell && vic_fell) return tie;
    if (adv_fell) return lose;
    if (vic_fell) return win;
    return index[a * len + v];
  };
  // actions: 0 push (toward the opponent), 1 hold, 2 retreat
  for (int s = 0; s < pairs; ++s) {
    const auto [a, v] = pos[s];
    for (int aa = 0; aa < 3; ++aa) {
      for (int va = 0; va < 3; ++va) {
        std::map<int, double> mass;
        if (v - a == 1) {
          const bool ap = aa == 0, vp = va == 0;
          if (ap && vp) {
            add_mass(mass, resolve(a + 1, v + 1), 0.5);
            add_mass(mass, resolve(a - 1, v - 1), 0.5);
          } else if (ap && va == 1) {
            add_mass(mass, resolve(a + 1, v + 1), 0.5);
            add_mass(mass, s, 0.5);
          } else if (ap) {
            add_mass(mass, resolve(a + 1, v + 1), 1.0);
          } else if (vp && aa == 1) {
            add_mass(mass, resolve(a - 1, v - 1), 0.5);
            add_mass(mass, s, 0.5);
          } else if (vp) {
            add_mass(mass, resolve(a - 1, v - 1), 1.0);
          } else {
            add_mass(mass, resolve(a - (aa == 2), v + (va == 2)), 1.0);
          }
        } else {
          const int na = a + (aa == 0 ? 1 : aa == 2 ? -1 : 0);
          const int nv = v + (va == 0 ? -1 : va == 2 ? 1 : 0);
          if (na >= nv) {  // both stepped into the single free cell
            add_mass(mass, resolve(a + 1, v), 0.5);
            add_mass(mass, resolve(a, v - 1), 0.5);
          } else {
            add_mass(mass, resolve(na, nv), 1.0);
          }
        }
        g.successors(s, aa, va) = to_row(mass);
      }
    }
    g.active_features[s] = {a, len + v};
  }
  const int a0 = (len - 1) / 2 - 1;
  g.initial_state = index[a0 * len + (len - 1 - a0)];
  g.feature_dim = 2 * len;
  g.feature_blocks = {{"adversary_position", 0, len}, {"victim_position", len, len}};
  return g;
}

}  // namespace detail

inline MarkovGame make_env(const EnvSpec& spec) {
  require(spec.discount >= 0.0 && spec.discount < 1.0, "discount must lie in [0, 1)");
  require(spec.horizon >= 0 && spec.horizon <= 1000, "horizon must lie in [0, 1000]");
  MarkovGame g;
  if (spec.name == "markov_rps")
    g = detail::build_rps(spec);
  else if (spec.name == "grid_pass")
    g = detail::build_grid_pass(spec);
  else if (spec.name == "push_duel")
    g = detail::build_push_duel(spec);
  else
    throw ValidationError("unknown environment '" + spec.name +
                          "' (expected markov_rps, grid_pass or push_duel)");
  require(g.num_states <= 10000, "environment exceeds 10000 states");
  validate(g);
  return g;
}

// Random general-sum game with one-hot state features, for oracle checks.
struct RandomGameSpec {
  int states = 6;
  int absorbing = 2;
  int adv_actions = 2;
  int vic_actions = 2;
  int branching = 3;
  double absorb_prob = 0.3;  // extra mass routed to an absorbing state
  double discount = 0.9;
  int horizon = 400;
};

inline MarkovGame make_random_game(const RandomGameSpec& spec, std::uint64_t seed) {
  require(spec.states > spec.absorbing && spec.absorbing >= 1, "need transient and absorbing states");
  require(spec.branching >= 1, "branching must be positive");
  require(spec.absorb_prob >= 0.0 && spec.absorb_prob < 1.0, "absorb_prob must lie in [0, 1)");
  Rng rng(seed);
  MarkovGame g;
  g.name = "random";
  g.num_states = spec.states;
  g.num_adv_actions = spec.adv_actions;
  g.num_vic_actions = spec.vic_actions;
  g.discount = spec.discount;
  g.horizon = spec.horizon;
  detail::allocate(g);
  const int transient = spec.states - spec.absorbing;
  for (int s = 0; s < spec.states; ++s) {
    g.adv_reward[s] = 2.0 * uniform01(rng) - 1.0;
    g.vic_reward[s] = 2.0 * uniform01(rng) - 1.0;
  }
  static constexpr Outcome cycle[] = {Outcome::adv_win, Outcome::vic_win, Outcome::tie};
  for (int s = transient; s < spec.states; ++s)
    detail::make_absorbing(g, s, cycle[(s - transient) % 3], g.adv_reward[s], g.vic_reward[s]);
  for (int s = 0; s < transient; ++s)
    for (int a = 0; a < spec.adv_actions; ++a)
      for (int v = 0; v < spec.vic_actions; ++v) {
        std::map<int, double> mass;
        for (int k = 0; k < spec.branching; ++k) {
          const int t = static_cast<int>(uniform01(rng) * spec.states);
          detail::add_mass(mass, t, (0.05 + uniform01(rng)) * (1.0 - spec.absorb_prob));
        }
        const int sink = transient + static_cast<int>(uniform01(rng) * spec.absorbing);
        double total = 0.0;
        for (const auto& [t, p] : mass) total += p;
        detail::add_mass(mass, sink, spec.absorb_prob * total / (1.0 - spec.absorb_prob));
        g.successors(s, a, v) = detail::to_row(mass);
      }
  g.feature_dim = spec.states;
  g.feature_blocks = {{"state", 0, spec.states}};
  for (int s = 0; s < spec.states; ++s) g.active_features[s] = {s};
  validate(g);
  return g;
}

// q(s'|s,a) = sum_v pi_v(v|s) P(s'|s,a,v)
inline std::vector<double> marginalize_transition(const MarkovGame& g, std::span<const double> vic_dist,
                                                  int s, int a) {
  require(static_cast<int>(vic_dist.size()) == g.num_vic_actions, "victim distribution size mismatch");
  std::vector<double> q(g.num_states, 0.0);
  for (int v = 0; v < g.num_vic_actions; ++v) {
    if (vic_dist[v] == 0.0) continue;
    for (const auto& [t, p] : g.successors(s, a, v)) q[t] += vic_dist[v] * p;
  }
  return q;
}

struct StepResult {
  int next_state = 0;
  double adv_reward = 0.0;
  double vic_reward = 0.0;
  bool done = false;
};

inline StepResult step(const MarkovGame& g, int s, int a, int v, Rng& rng) {
  const auto& row = g.successors(s, a, v);
  int next = row.back().state;
  if (row.size() > 1) {
    const double u = uniform01(rng);
    double acc = 0.0;
    for (const auto& [t, p] : row) {
      acc += p;
      if (u < acc) {
        next = t;
        break;
      }
    }
  }
  return {next, g.adv_reward[next], g.vic_reward[next], g.absorbing(next)};
}

}  // namespace advpol

#pragma once

#include <span>
#include <vector>

#include "advpol/game.hpp"
#include "advpol/policy.hpp"
#include "advpol/rng.hpp"

namespace advpol {

struct Transition {
  int state = 0;
  int adv_action = 0;
  int vic_action = 0;
  int imit_action = kNoImitAction;
  double adv_reward = 0.0;  // r_adv(next_state)
  double vic_reward = 0.0;  // r_vic(next_state)
  int next_state = 0;
  bool done = false;
};

struct Trajectory {
  int start_state = 0;
  std::vector<Transition> transitions;
  Outcome outcome = Outcome::tie;
  bool primary = true;  // which mixture member acted (per-episode mixing)
};

enum class ImitatorInput { sampled, distribution };

struct RolloutOptions {
  int horizon = 0;  // 0 uses the game's budget
  bool feed_imitator = true;
  ImitatorInput imitator_input = ImitatorInput::sampled;
  const ObservationMask* adv_mask = nullptr;
};

// Adversary observation at s given the imitator's prediction. Policies
// without an imitator block, or runs with feeding switched off, see zeros.
inline Observation adversary_observation(const MarkovGame& g, const Policy& adv, int s,
                                         int imit_action, std::span<const double> imit_dist,
                                         const RolloutOptions& opt) {
  const bool feed = adv.layout().imit_actions > 0 && opt.feed_imitator;
  Observation o;
  if (feed && opt.imitator_input == ImitatorInput::distribution && !imit_dist.empty())
    o = observe_distribution(g, adv.layout(), s, imit_dist);
  else
    o = observe(g, adv.layout(), s, feed ? imit_action : kNoImitAction);
  return opt.adv_mask ? blind(std::move(o), *opt.adv_mask) : o;
}

namespace detail {

template <typename PickAdversary>
Trajectory rollout_impl(const MarkovGame& g, PickAdversary&& pick, const Policy& vic,
                        const Policy* imitator, Rng& rng, const RolloutOptions& opt) {
  const int horizon = opt.horizon > 0 ? opt.horizon : g.horizon;
  Trajectory tr;
  tr.start_state = g.initial_state;
  int s = g.initial_state;
  for (int t = 0; t < horizon && !g.absorbing(s); ++t) {
    Transition x;
    x.state = s;
    x.vic_action = sample_categorical(vic.action_dist(observe(g, vic.layout(), s)), rng);
    std::vector<double> imit_dist;
    if (imitator != nullptr) {
      imit_dist = imitator->action_dist(observe(g, imitator->layout(), s));
      x.imit_action = sample_categorical(imit_dist, rng);
    }
    const Policy& adv = pick(rng);
    const auto obs = adversary_observation(g, adv, s, x.imit_action, imit_dist, opt);
    x.adv_action = sample_categorical(adv.action_dist(obs), rng);
    const auto r = step(g, s, x.adv_action, x.vic_action, rng);
    x.next_state = r.next_state;
    x.adv_reward = r.adv_reward;
    x.vic_reward = r.vic_reward;
    x.done = r.done;
    tr.transitions.push_back(x);
    s = r.next_state;
  }
  tr.outcome = g.absorbing(s) ? g.outcome[s] : Outcome::tie;
  return tr;
}

}  // namespace detail

inline Trajectory rollout(const MarkovGame& g, const Policy& adv, const Policy& vic,
                          const Policy* imitator, Rng& rng, const RolloutOptions& opt = {}) {
  return detail::rollout_impl(g, [&](Rng&) -> const Policy& { return adv; }, vic, imitator, rng, opt);
}

inline Trajectory rollout(const MarkovGame& g, const PolicyMixture& mix, const Policy& vic,
                          const Policy* imitator, Rng& rng, const RolloutOptions& opt = {}) {
  bool episode_primary = true;
  if (mix.granularity == MixGranularity::episode) episode_primary = pick_primary(mix.p_primary, rng);
  auto pick = [&](Rng& r) -> const Policy& {
    const bool primary = mix.granularity == MixGranularity::episode ? episode_primary
                                                                    : pick_primary(mix.p_primary, r);
    return primary ? mix.primary : mix.secondary;
  };
  auto tr = detail::rollout_impl(g, pick, vic, imitator, rng, opt);
  tr.primary = episode_primary;
  return tr;
}

// Per-transition credit k_t so that sum_t gamma^t c(s_t) = c(s_0) + sum_t gamma^t k_t.
// An absorbed trajectory keeps collecting c on the absorbing state, summed in
// closed form.
inline std::vector<double> state_reward_credits(const MarkovGame& g, const Trajectory& tr,
                                                std::span<const double> c) {
  const double gamma = g.discount;
  std::vector<double> k(tr.transitions.size());
  for (std::size_t t = 0; t < k.size(); ++t) {
    const int next = tr.transitions[t].next_state;
    k[t] = gamma * c[next];
    if (g.absorbing(next)) k[t] /= 1.0 - gamma;
  }
  return k;
}

inline double discounted_return(const MarkovGame& g, const Trajectory& tr, std::span<const double> c) {
  const int s0 = tr.start_state;
  if (g.absorbing(s0)) return c[s0] / (1.0 - g.discount);
  const auto k = state_reward_credits(g, tr, c);
  double total = c[s0], w = 1.0;
  for (double x : k) {
    total += w * x;
    w *= g.discount;
  }
  return total;
}

inline std::vector<double> delta_reward_table(const MarkovGame& g) {
  std::vector<double> d(g.num_states);
  for (int s = 0; s < g.num_states; ++s) d[s] = g.adv_reward[s] - g.vic_reward[s];
  return d;
}

}  // namespace advpol

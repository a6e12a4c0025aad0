#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/oracle.hpp"
#include "advpol/policy.hpp"
#include "advpol/rollout.hpp"
#include "advpol/update.hpp"

namespace advpol {

inline double differentiated_reward(double r_adv, double r_vic) { return r_adv - r_vic; }

struct AdversaryState {
  Policy policy;
  double clip_eps = 0.2;
  bool use_imitator_input = true;
  ImitatorInput imitator_input = ImitatorInput::sampled;
};

// State features followed by the predicted victim action one-hot; the block
// stays present (all zeros) when the imitator is switched off.
inline Observation augment_observation(const MarkovGame& g, int s, int imit_action, bool use_imitator) {
  if (use_imitator)
    require(imit_action >= 0 && imit_action < g.num_vic_actions, "imitator action out of range");
  return observe(g, augmented_layout(g), s, use_imitator ? imit_action : kNoImitAction);
}

inline Policy adv_update(const AdversaryState& state, const PolicyBatch& batch, UpdateMethod method, Adam& opt,
                         double entropy_coeff = 0.0) {
  require(state.clip_eps > 0.0, "clip_eps must be positive");
  return policy_step(state.policy, batch, method, state.clip_eps, entropy_coeff, opt);
}

// V_adv(s0) - V_vic(s0) under the joint kernel.
inline double enhanced_objective_value(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& vic) {
  return value_function(g, adv, vic, Side::adversary).values[g.initial_state] -
         value_function(g, adv, vic, Side::victim).values[g.initial_state];
}

inline double enhanced_objective_value(const MarkovGame& g, const Policy& adv, const Policy& vic) {
  return enhanced_objective_value(g, adversary_table(g, adv), victim_table(g, vic));
}

// Delta_R(tau) * sum_t grad log adv(a_t | s_t, imit_t), the literal
// full-trajectory form.
inline std::vector<double> prop3_sample(const MarkovGame& g, const Policy& adv, const Trajectory& tr) {
  std::vector<double> score(adv.num_params(), 0.0);
  const int n = adv.action_count();
  std::vector<double> dl(n);
  for (const auto& x : tr.transitions) {
    const auto obs = observe(g, adv.layout(), x.state, adv.layout().imit_actions > 0 ? x.imit_action : kNoImitAction);
    const auto p = adv.action_dist(obs);
    for (int k = 0; k < n; ++k) dl[k] = (k == x.adv_action ? 1.0 : 0.0) - p[k];
    adv.backprop(obs, dl, 1.0, score);
  }
  const double ret = discounted_return(g, tr, delta_reward_table(g));
  for (auto& x : score) x *= ret;
  return score;
}

// G_t = sum_{k >= t} gamma^(k - t) credit_k
inline std::vector<double> returns_to_go(const std::vector<double>& credits, double gamma) {
  std::vector<double> g(credits.size());
  double acc = 0.0;
  for (std::size_t i = credits.size(); i-- > 0;) {
    acc = credits[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

// Reward-to-go samples for the adversary. Credits are Delta_r (enhanced) or
// r_adv; the baseline is the batch mean. `imitator` is only read for
// distribution-valued inputs.
inline PolicyBatch adversary_batch(const MarkovGame& g, const AdversaryState& state, const std::vector<Trajectory>& trs,
                                   bool enhanced, bool discount_weights, const Policy* imitator = nullptr,
                                   const ObservationMask* mask = nullptr) {
  const auto c = enhanced ? delta_reward_table(g) : g.adv_reward;
  RolloutOptions opt;
  opt.feed_imitator = state.use_imitator_input;
  opt.imitator_input = state.imitator_input;
  opt.adv_mask = mask;
  PolicyBatch batch;
  batch.tag = fingerprint(state.policy);
  batch.normalizer = static_cast<double>(std::max<std::size_t>(trs.size(), 1));
  double total = 0.0;
  for (const auto& tr : trs) {
    const auto ret = returns_to_go(state_reward_credits(g, tr, c), g.discount);
    double w = 1.0;
    for (std::size_t t = 0; t < tr.transitions.size(); ++t) {
      const auto& x = tr.transitions[t];
      std::vector<double> q;
      if (imitator != nullptr && state.imitator_input == ImitatorInput::distribution)
        q = state_dist(g, *imitator, x.state);
      PolicySample ps;
      ps.obs = adversary_observation(g, state.policy, x.state, x.imit_action, q, opt);
      ps.action = x.adv_action;
      ps.advantage = ret[t];
      ps.weight = discount_weights ? w : 1.0;
      ps.logp_old = state.policy.log_prob(ps.obs, x.adv_action);
      batch.samples.push_back(std::move(ps));
      total += ret[t];
      w *= g.discount;
    }
  }
  if (!batch.samples.empty()) {
    const double mean = total / static_cast<double>(batch.samples.size());
    for (auto& x : batch.samples) x.advantage -= mean;
  }
  return batch;
}

inline nlohmann::json adversary_to_json(const AdversaryState& a) {
  auto j = policy_to_json(a.policy);
  j["use_imitator_input"] = a.use_imitator_input;
  j["clip_eps"] = a.clip_eps;
  j["imitator_input"] = a.imitator_input == ImitatorInput::distribution ? "distribution" : "sampled";
  return j;
}

inline AdversaryState adversary_from_json(const nlohmann::json& j) {
  try {
    AdversaryState a;
    a.policy = policy_from_json(j);
    a.use_imitator_input = j.value("use_imitator_input", a.policy.layout().imit_actions > 0);
    a.clip_eps = j.value("clip_eps", 0.2);
    a.imitator_input =
        j.value("imitator_input", std::string("sampled")) == "distribution" ? ImitatorInput::distribution
                                                                             : ImitatorInput::sampled;
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed adversary: ") + e.what());
  }
}

}  // namespace advpol

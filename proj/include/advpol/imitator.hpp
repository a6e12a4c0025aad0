#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/optim.hpp"
#include "advpol/oracle.hpp"
#include "advpol/policy.hpp"
#include "advpol/rollout.hpp"
#include "advpol/update.hpp"

namespace advpol {

enum class DiscArch { linear, mlp };

inline std::string_view to_string(DiscArch a) { return a == DiscArch::mlp ? "mlp" : "linear"; }

inline DiscArch disc_arch_from_string(const std::string& s) {
  if (s == "linear") return DiscArch::linear;
  if (s == "mlp") return DiscArch::mlp;
  throw ValidationError("unknown discriminator architecture '" + s + "' (expected linear or mlp)");
}

// Training loss. Both push D toward 0 on imitator pairs and toward 1 on
// expert pairs. `phi` is plain descent on phi(w), which is concave in each
// D(s, a), so weights run to the clamp and stay there once imitator and
// expert pairs overlap; `logistic` minimizes the cross-entropy
// -E_expert[log D] - E_imit[log(1 - D)] and has an interior optimum.
enum class DiscLoss { logistic, phi };

inline std::string_view to_string(DiscLoss l) { return l == DiscLoss::phi ? "phi" : "logistic"; }

inline DiscLoss disc_loss_from_string(const std::string& s) {
  if (s == "logistic") return DiscLoss::logistic;
  if (s == "phi") return DiscLoss::phi;
  throw ValidationError("unknown discriminator loss '" + s + "' (expected logistic or phi)");
}

// D(s, a) = clamp(sigmoid(score(s, a)), d_lo, d_hi). The linear model keeps
// one weight per (state, victim action) pair; the mlp reads state features
// concatenated with the action one-hot.
struct Discriminator {
  DiscArch arch = DiscArch::linear;
  int num_states = 0;
  int num_actions = 0;
  int feature_dim = 0;
  int hidden = 0;
  double d_lo = 0.01;
  double d_hi = 0.99;
  DiscLoss loss = DiscLoss::logistic;
  std::vector<double> params;

  int input_dim() const { return feature_dim + num_actions; }
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

inline Discriminator make_discriminator(const MarkovGame& g, DiscArch arch, double d_lo, double d_hi, Rng& rng,
                                        int hidden = 32) {
  require(d_lo > 0.0 && d_lo <= d_hi && d_hi < 1.0, "clamp must satisfy 0 < D_L <= D_U < 1");
  Discriminator d;
  d.arch = arch;
  d.num_states = g.num_states;
  d.num_actions = g.num_vic_actions;
  d.feature_dim = g.feature_dim;
  d.d_lo = d_lo;
  d.d_hi = d_hi;
  if (arch == DiscArch::linear) {
    d.params.assign(static_cast<std::size_t>(g.num_states) * g.num_vic_actions, 0.0);
  } else {
    d.hidden = hidden;
    d.params.resize(static_cast<std::size_t>(hidden) * d.input_dim() + 2 * hidden + 1);
    for (auto& w : d.params) w = 0.2 * uniform01(rng) - 0.1;
  }
  return d;
}

namespace detail {

inline std::vector<double> disc_input(const MarkovGame& g, const Discriminator& d, int s, int a) {
  std::vector<double> x(d.input_dim(), 0.0);
  for (int f : g.active_features[s]) x[f] = 1.0;
  x[d.feature_dim + a] = 1.0;
  return x;
}

}  // namespace detail

inline double disc_score(const MarkovGame& g, const Discriminator& d, int s, int a) {
  require(s >= 0 && s < d.num_states && a >= 0 && a < d.num_actions, "discriminator input out of range");
  if (d.arch == DiscArch::linear) return d.params[static_cast<std::size_t>(s) * d.num_actions + a];
  const auto x = detail::disc_input(g, d, s, a);
  const int n = d.input_dim(), h = d.hidden;
  const double* w1 = d.params.data();
  const double* b1 = w1 + h * n;
  const double* w2 = b1 + h;
  double score = w2[h];
  for (int j = 0; j < h; ++j) {
    double acc = b1[j];
    for (int i = 0; i < n; ++i)
      if (x[i] != 0.0) acc += w1[j * n + i] * x[i];
    score += w2[j] * std::tanh(acc);
  }
  return score;
}

inline double disc_forward(const MarkovGame& g, const Discriminator& d, int s, int a) {
  return std::clamp(sigmoid(disc_score(g, d, s, a)), d.d_lo, d.d_hi);
}

// grad += scale * d score / d params
inline void disc_score_backprop(const MarkovGame& g, const Discriminator& d, int s, int a, double scale,
                                std::vector<double>& grad) {
  if (d.arch == DiscArch::linear) {
    grad[static_cast<std::size_t>(s) * d.num_actions + a] += scale;
    return;
  }
  const auto x = detail::disc_input(g, d, s, a);
  const int n = d.input_dim(), h = d.hidden;
  const double* w1 = d.params.data();
  const double* b1 = w1 + h * n;
  const double* w2 = b1 + h;
  double* gw1 = grad.data();
  double* gb1 = gw1 + h * n;
  double* gw2 = gb1 + h;
  gw2[h] += scale;
  for (int j = 0; j < h; ++j) {
    double acc = b1[j];
    for (int i = 0; i < n; ++i)
      if (x[i] != 0.0) acc += w1[j * n + i] * x[i];
    const double hj = std::tanh(acc);
    gw2[j] += scale * hj;
    const double dpre = scale * w2[j] * (1.0 - hj * hj);
    gb1[j] += dpre;
    for (int i = 0; i < n; ++i)
      if (x[i] != 0.0) gw1[j * n + i] += dpre * x[i];
  }
}

struct PairSample {
  int state = 0;
  int action = 0;
  int t = 0;
};

struct PairBatch {
  std::vector<PairSample> samples;
  int episodes = 0;
};

// Gradient of the loss being minimized: phi(w) = E_imit[sum_t gamma^t log D]
// + E_expert[sum_t gamma^t log(1 - D)], or the discounted cross-entropy for
// the logistic loss. The clamp passes gradients straight through.
inline std::vector<double> disc_gradient(const MarkovGame& g, const Discriminator& d, const PairBatch& imit,
                                         const PairBatch& expert, bool discounted) {
  require(!imit.samples.empty() && !expert.samples.empty(), "discriminator update needs nonempty batches");
  require(imit.episodes > 0 && expert.episodes > 0, "batch episode count must be positive");
  std::vector<double> grad(d.params.size(), 0.0);
  auto weight = [&](int t) { return discounted ? std::pow(g.discount, t) : 1.0; };
  for (const auto& x : imit.samples) {
    const double p = sigmoid(disc_score(g, d, x.state, x.action));
    const double c = d.loss == DiscLoss::phi ? 1.0 - p : p;
    disc_score_backprop(g, d, x.state, x.action, weight(x.t) * c / imit.episodes, grad);
  }
  for (const auto& x : expert.samples) {
    const double p = sigmoid(disc_score(g, d, x.state, x.action));
    const double c = d.loss == DiscLoss::phi ? p : 1.0 - p;
    disc_score_backprop(g, d, x.state, x.action, -weight(x.t) * c / expert.episodes, grad);
  }
  return grad;
}

// One descent step on the discriminator loss. Linear weights are projected back into the clamp's logit
// range. Without an optimizer a plain gradient step of size lr is taken.
inline Discriminator disc_update(const MarkovGame& g, const Discriminator& d, const PairBatch& imit,
                                 const PairBatch& expert, double lr, Adam* opt = nullptr, bool discounted = true) {
  const auto grad = disc_gradient(g, d, imit, expert, discounted);
  Discriminator out = d;
  if (opt != nullptr) {
    out.params = opt->step(d.params, grad, false);
  } else {
    for (std::size_t i = 0; i < grad.size(); ++i) out.params[i] -= lr * grad[i];
  }
  if (out.arch == DiscArch::linear) {
    const double lo = logit(out.d_lo), hi = logit(out.d_hi);
    for (auto& w : out.params) w = std::clamp(w, lo, hi);
  }
  return out;
}

// eta = log D - r_adv (enhanced) or log D (plain).
inline double eta_reward(const MarkovGame& g, const Discriminator& d, int s, int a_vic, double r_adv, bool enhanced) {
  return std::log(disc_forward(g, d, s, a_vic)) - (enhanced ? r_adv : 0.0);
}

struct ImitatorState {
  Policy policy;
  Discriminator disc;
  double entropy_coeff = 0.01;
  bool enhanced = true;
};

// Ascent on the eta return plus entropy_coeff times the entropy.
inline Policy imit_policy_update(const ImitatorState& state, const PolicyBatch& batch, UpdateMethod method,
                                 double clip_eps, Adam& opt) {
  require(state.entropy_coeff >= 0.0, "entropy coefficient must be nonnegative");
  return policy_step(state.policy, batch, method, clip_eps, state.entropy_coeff, opt);
}

enum class ImitatorReturn { step, to_go };

inline std::string_view to_string(ImitatorReturn r) { return r == ImitatorReturn::to_go ? "to_go" : "step"; }

inline ImitatorReturn imitator_return_from_string(const std::string& s) {
  if (s == "step") return ImitatorReturn::step;
  if (s == "to_go") return ImitatorReturn::to_go;
  throw ValidationError("unknown imitator return '" + s + "' (expected step or to_go)");
}

// The victim drives every rollout, so the imitator's prediction at t only
// changes eta_t. `step` uses eta_t itself as the return; `to_go` sums the
// discounted etas that follow.
inline PolicyBatch imitator_batch(const MarkovGame& g, const ImitatorState& state, const std::vector<Trajectory>& trs,
                                  ImitatorReturn mode, bool discount_weights, double* eta_mean = nullptr) {
  PolicyBatch batch;
  batch.tag = fingerprint(state.policy);
  batch.normalizer = static_cast<double>(std::max<std::size_t>(trs.size(), 1));
  double total = 0.0, eta_total = 0.0;
  std::size_t eta_count = 0;
  for (const auto& tr : trs) {
    std::vector<double> eta(tr.transitions.size());
    for (std::size_t t = 0; t < eta.size(); ++t) {
      const auto& x = tr.transitions[t];
      require(x.imit_action >= 0, "trajectory carries no imitator predictions");
      eta[t] = eta_reward(g, state.disc, x.state, x.imit_action, g.adv_reward[x.state], state.enhanced);
      eta_total += eta[t];
      ++eta_count;
    }
    if (mode == ImitatorReturn::to_go) {
      double acc = 0.0;
      for (std::size_t t = eta.size(); t-- > 0;) {
        acc = eta[t] + g.discount * acc;
        eta[t] = acc;
      }
    }
    double w = 1.0;
    for (std::size_t t = 0; t < eta.size(); ++t) {
      const auto& x = tr.transitions[t];
      PolicySample ps;
      ps.obs = observe(g, state.policy.layout(), x.state);
      ps.action = x.imit_action;
      ps.advantage = eta[t];
      ps.weight = discount_weights ? w : 1.0;
      ps.logp_old = state.policy.log_prob(ps.obs, x.imit_action);
      batch.samples.push_back(std::move(ps));
      total += eta[t];
      w *= g.discount;
    }
  }
  if (!batch.samples.empty()) {
    const double mean = total / static_cast<double>(batch.samples.size());
    for (auto& x : batch.samples) x.advantage -= mean;
  }
  if (eta_mean != nullptr) *eta_mean = eta_count > 0 ? eta_total / static_cast<double>(eta_count) : 0.0;
  return batch;
}

// (s, predicted action) and (s, victim action) pairs along the same rollouts.
inline PairBatch imitator_pairs(const std::vector<Trajectory>& trs) {
  PairBatch b;
  b.episodes = static_cast<int>(trs.size());
  for (const auto& tr : trs)
    for (std::size_t t = 0; t < tr.transitions.size(); ++t)
      b.samples.push_back({tr.transitions[t].state, tr.transitions[t].imit_action, static_cast<int>(t)});
  return b;
}

inline PairBatch expert_pairs(const std::vector<Trajectory>& trs) {
  PairBatch b;
  b.episodes = static_cast<int>(trs.size());
  for (const auto& tr : trs)
    for (std::size_t t = 0; t < tr.transitions.size(); ++t)
      b.samples.push_back({tr.transitions[t].state, tr.transitions[t].vic_action, static_cast<int>(t)});
  return b;
}

// Occupancy-weighted total variation over non-absorbing states.
inline double imitation_gap(const MarkovGame& g, const PolicyTable& imit, const PolicyTable& vic,
                            std::span<const double> occupancy) {
  double num = 0.0, den = 0.0;
  for (int s = 0; s < g.num_states; ++s) {
    if (g.absorbing(s) || occupancy[s] <= 0.0) continue;
    num += occupancy[s] * total_variation(imit[s], vic[s]);
    den += occupancy[s];
  }
  return den > 0.0 ? num / den : 0.0;
}

inline double imitation_gap(const MarkovGame& g, const Policy& imit, const Policy& vic,
                            std::span<const double> occupancy) {
  return imitation_gap(g, victim_table(g, imit), victim_table(g, vic), occupancy);
}

// Per-(s, a) table of log D, or log(1 - D) for the expert term.
inline std::vector<double> log_disc_table(const MarkovGame& g, const Discriminator& d, bool complement) {
  std::vector<double> t(static_cast<std::size_t>(g.num_states) * g.num_vic_actions, 0.0);
  for (int s = 0; s < g.num_states; ++s) {
    if (g.absorbing(s)) continue;
    for (int a = 0; a < g.num_vic_actions; ++a) {
      const double p = disc_forward(g, d, s, a);
      t[static_cast<std::size_t>(s) * g.num_vic_actions + a] = complement ? std::log1p(-p) : std::log(p);
    }
  }
  return t;
}

// Objective of the victim-seat policy with per-step reward eta, plus
// entropy_weight times its occupancy-weighted entropy.
inline ObjectiveSpec eta_objective(const MarkovGame& g, const Discriminator& d, bool enhanced,
                                   double entropy_weight) {
  return {enhanced ? -1.0 : 0.0, 0.0, log_disc_table(g, d, false), entropy_weight};
}

inline ObjectiveSpec expert_objective(const MarkovGame& g, const Discriminator& d) {
  return {0.0, 0.0, log_disc_table(g, d, true), 0.0};
}

// GAIL saddle objective computed from discounted occupancies:
// E_imit[sum gamma^t log D] + E_victim[sum gamma^t log(1 - D)] - lambda H(imit),
// minus V_adv(s0) under the imitator when enhanced.
inline double gail_objective(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& imit,
                             const PolicyTable& vic, const Discriminator& d, double lambda, bool enhanced) {
  const auto d_imit = occupancy(g, adv, imit);
  const auto d_vic = occupancy(g, adv, vic);
  double phi = 0.0;
  for (int s = 0; s < g.num_states; ++s) {
    if (g.absorbing(s)) continue;
    double log_d = 0.0, log_1md = 0.0;
    for (int a = 0; a < g.num_vic_actions; ++a) {
      const double p = disc_forward(g, d, s, a);
      log_d += imit[s][a] * std::log(p);
      log_1md += vic[s][a] * std::log1p(-p);
    }
    phi += d_imit[s] * (log_d - lambda * entropy(imit[s])) + d_vic[s] * log_1md;
  }
  if (enhanced) phi -= value_function(g, adv, imit, Side::adversary).values[g.initial_state];
  return phi;
}

// Score-function samples with the imitator in the victim seat (one vector per
// trajectory, full-trajectory return times the full score sum).
inline std::vector<double> seat_score_sum(const MarkovGame& g, const Policy& seat, const Trajectory& tr) {
  std::vector<double> score(seat.num_params(), 0.0);
  const int n = seat.action_count();
  std::vector<double> dl(n);
  for (const auto& x : tr.transitions) {
    const auto obs = observe(g, seat.layout(), x.state);
    const auto p = seat.action_dist(obs);
    for (int k = 0; k < n; ++k) dl[k] = (k == x.vic_action ? 1.0 : 0.0) - p[k];
    seat.backprop(obs, dl, 1.0, score);
  }
  return score;
}

// R_adv(tau) * sum_t grad log imit(a_t | s_t)
inline std::vector<double> lemma1_sample(const MarkovGame& g, const Policy& imit, const Trajectory& tr) {
  auto score = seat_score_sum(g, imit, tr);
  const double ret = discounted_return(g, tr, g.adv_reward);
  for (auto& x : score) x *= ret;
  return score;
}

// Sample of the gradient of the eta_objective(d, enhanced, entropy_weight)
// value with respect to the imitator's parameters.
inline std::vector<double> prop1_sample(const MarkovGame& g, const Policy& imit, const Discriminator& d,
                                        bool enhanced, double entropy_weight, const Trajectory& tr) {
  auto grad = seat_score_sum(g, imit, tr);
  double ret = enhanced ? -discounted_return(g, tr, g.adv_reward) : 0.0;
  double w = 1.0;
  const int n = imit.action_count();
  std::vector<double> direct(imit.num_params(), 0.0), dl(n);
  for (const auto& x : tr.transitions) {
    const auto obs = observe(g, imit.layout(), x.state);
    const auto p = imit.action_dist(obs);
    const double h = entropy(p);
    ret += w * (std::log(disc_forward(g, d, x.state, x.vic_action)) + entropy_weight * h);
    if (entropy_weight != 0.0) {
      for (int k = 0; k < n; ++k) dl[k] = -entropy_weight * p[k] * (safe_log(p[k]) + h);
      imit.backprop(obs, dl, w, direct);
    }
    w *= g.discount;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = grad[i] * ret + direct[i];
  return grad;
}

inline nlohmann::json discriminator_to_json(const Discriminator& d) {
  return {{"schema_version", kSchemaVersion}, {"arch", to_string(d.arch)}, {"num_states", d.num_states},
          {"num_actions", d.num_actions},     {"feature_dim", d.feature_dim}, {"hidden", d.hidden},
          {"clamp", {d.d_lo, d.d_hi}},        {"loss", to_string(d.loss)}, {"params", d.params}};
}

inline Discriminator discriminator_from_json(const nlohmann::json& j) {
  try {
    check_schema(j);
    Discriminator d;
    d.arch = disc_arch_from_string(j.at("arch").get<std::string>());
    d.num_states = j.at("num_states").get<int>();
    d.num_actions = j.at("num_actions").get<int>();
    d.feature_dim = j.at("feature_dim").get<int>();
    d.hidden = j.at("hidden").get<int>();
    d.d_lo = j.at("clamp").at(0).get<double>();
    d.d_hi = j.at("clamp").at(1).get<double>();
    d.loss = disc_loss_from_string(j.value("loss", std::string("logistic")));
    d.params = j.at("params").get<std::vector<double>>();
    const std::size_t expected = d.arch == DiscArch::linear
                                     ? static_cast<std::size_t>(d.num_states) * d.num_actions
                                     : static_cast<std::size_t>(d.hidden) * d.input_dim() + 2 * d.hidden + 1;
    require(d.params.size() == expected, "discriminator parameter count mismatch");
    require(d.d_lo > 0.0 && d.d_lo <= d.d_hi && d.d_hi < 1.0, "discriminator clamp out of range");
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed discriminator: ") + e.what());
  }
}

inline nlohmann::json imitator_to_json(const ImitatorState& s) {
  return {{"schema_version", kSchemaVersion}, {"policy", policy_to_json(s.policy)},
          {"discriminator", discriminator_to_json(s.disc)}, {"entropy_coeff", s.entropy_coeff},
          {"enhanced", s.enhanced}};
}

inline ImitatorState imitator_from_json(const nlohmann::json& j) {
  try {
    check_schema(j);
    return {policy_from_json(j.at("policy")), discriminator_from_json(j.at("discriminator")),
            j.at("entropy_coeff").get<double>(), j.at("enhanced").get<bool>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed imitator: ") + e.what());
  }
}

}  // namespace advpol

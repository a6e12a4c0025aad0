#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/rng.hpp"

namespace advpol {

inline constexpr double kLogFloor = 1e-12;
inline constexpr int kSchemaVersion = 1;
inline constexpr int kNoImitAction = -1;

inline double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }

inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.size());
  if (z.empty()) return p;
  const double m = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (p[i] = std::exp(z[i] - m));
  for (auto& x : p) x /= total;
  return p;
}

// KL(p || q) in nats; +inf when q misses support of p.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "distribution sizes differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  require(p.size() == q.size(), "distribution sizes differ");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

// Observation layout: state features followed by an optional block that
// carries the imitator's predicted victim action.
struct ObsLayout {
  int num_states = 0;
  int state_dim = 0;
  int imit_actions = 0;
  std::vector<FeatureBlock> blocks;

  int dim() const { return state_dim + imit_actions; }
  int contexts() const { return num_states * (imit_actions > 0 ? imit_actions + 1 : 1); }
  const FeatureBlock* block(std::string_view name) const {
    for (const auto& b : blocks)
      if (b.name == name) return &b;
    return nullptr;
  }
  bool operator==(const ObsLayout& o) const {
    return num_states == o.num_states && state_dim == o.state_dim && imit_actions == o.imit_actions;
  }
};

inline ObsLayout state_layout(const MarkovGame& g) {
  return {g.num_states, g.feature_dim, 0, g.feature_blocks};
}

inline ObsLayout augmented_layout(const MarkovGame& g) {
  ObsLayout l = state_layout(g);
  l.imit_actions = g.num_vic_actions;
  l.blocks.push_back({"imitator_action", g.feature_dim, g.num_vic_actions});
  return l;
}

struct Observation {
  int state = -1;
  int imit_action = kNoImitAction;
  std::vector<double> x;
};

// Dense observation of state s; imit_action fills the trailing one-hot block
// (zeros for the sentinel).
inline Observation observe(const MarkovGame& g, const ObsLayout& layout, int s,
                           int imit_action = kNoImitAction) {
  require(s >= 0 && s < g.num_states, "state out of range");
  require(layout.state_dim == g.feature_dim, "observation layout does not match the game");
  Observation o{s, kNoImitAction, std::vector<double>(layout.dim(), 0.0)};
  for (int f : g.active_features[s]) o.x[f] = 1.0;
  if (layout.imit_actions > 0 && imit_action != kNoImitAction) {
    require(imit_action >= 0 && imit_action < layout.imit_actions, "imitator action out of range");
    o.imit_action = imit_action;
    o.x[layout.state_dim + imit_action] = 1.0;
  }
  return o;
}

// Variant that feeds the imitator's full distribution instead of a sample.
inline Observation observe_distribution(const MarkovGame& g, const ObsLayout& layout, int s,
                                        std::span<const double> imit_dist) {
  Observation o = observe(g, layout, s);
  require(static_cast<int>(imit_dist.size()) == layout.imit_actions, "imitator block size mismatch");
  std::copy(imit_dist.begin(), imit_dist.end(), o.x.begin() + layout.state_dim);
  return o;
}

struct ObservationMask {
  std::vector<int> zeroed;
};

inline ObservationMask block_mask(const ObsLayout& layout, std::string_view name) {
  const FeatureBlock* b = layout.block(name);
  require(b != nullptr, "observation layout has no block named '" + std::string(name) + "'");
  ObservationMask m;
  for (int i = 0; i < b->size; ++i) m.zeroed.push_back(b->offset + i);
  return m;
}

inline Observation blind(Observation obs, const ObservationMask& mask) {
  for (int i : mask.zeroed) {
    require(i >= 0 && i < static_cast<int>(obs.x.size()), "mask index outside the observation");
    obs.x[i] = 0.0;
  }
  return obs;
}

enum class PolicyKind { tabular_softmax, mlp };

inline std::string_view to_string(PolicyKind k) {
  return k == PolicyKind::mlp ? "mlp" : "tabular_softmax";
}

// Immutable parametric policy. Tabular policies keep one logit row per
// (state, imitator action or sentinel) context and ignore the dense features;
// MLP policies read only the dense features.
class Policy {
 public:
  Policy() = default;

  static Policy tabular(ObsLayout layout, int actions) {
    require(actions > 0, "policy needs at least one action");
    Policy p;
    p.kind_ = PolicyKind::tabular_softmax;
    p.layout_ = std::move(layout);
    p.actions_ = actions;
    p.params_.assign(static_cast<std::size_t>(p.layout_.contexts()) * actions, 0.0);
    return p;
  }

  static Policy mlp(ObsLayout layout, int actions, int hidden, Rng& rng) {
    require(actions > 0 && hidden > 0, "mlp needs positive widths");
    Policy p;
    p.kind_ = PolicyKind::mlp;
    p.layout_ = std::move(layout);
    p.actions_ = actions;
    p.hidden_ = hidden;
    p.params_.resize(p.mlp_size());
    for (auto& w : p.params_) w = 0.2 * uniform01(rng) - 0.1;
    return p;
  }

  PolicyKind kind() const { return kind_; }
  const ObsLayout& layout() const { return layout_; }
  int action_count() const { return actions_; }
  int hidden() const { return hidden_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t num_params() const { return params_.size(); }

  Policy with_params(std::vector<double> params) const {
    require(params.size() == params_.size(), "parameter vector has the wrong length");
    Policy p = *this;
    p.params_ = std::move(params);
    return p;
  }

  int context(const Observation& obs) const {
    require(obs.state >= 0 && obs.state < layout_.num_states, "observation state out of range");
    if (layout_.imit_actions == 0) return obs.state;
    const int k = obs.imit_action == kNoImitAction ? layout_.imit_actions : obs.imit_action;
    return obs.state * (layout_.imit_actions + 1) + k;
  }

  std::vector<double> logits(const Observation& obs) const {
    check(obs);
    if (kind_ == PolicyKind::tabular_softmax) {
      const auto* row = params_.data() + static_cast<std::size_t>(context(obs)) * actions_;
      return {row, row + actions_};
    }
    const auto h = hidden_activations(obs.x);
    const int d = layout_.dim();
    const double* w2 = params_.data() + hidden_ * d + hidden_;
    const double* b2 = w2 + actions_ * hidden_;
    std::vector<double> z(actions_);
    for (int k = 0; k < actions_; ++k) {
      double acc = b2[k];
      for (int j = 0; j < hidden_; ++j) acc += w2[k * hidden_ + j] * h[j];
      z[k] = acc;
    }
    return z;
  }

  std::vector<double> action_dist(const Observation& obs) const { return softmax(logits(obs)); }

  double log_prob(const Observation& obs, int action) const {
    return safe_log(action_dist(obs).at(action));
  }

  // grad += scale * J^T dlogits, J = d logits / d params
  void backprop(const Observation& obs, std::span<const double> dlogits, double scale,
                std::span<double> grad) const {
    check(obs);
    require(static_cast<int>(dlogits.size()) == actions_, "dlogits has the wrong length");
    require(grad.size() == params_.size(), "gradient buffer has the wrong length");
    if (kind_ == PolicyKind::tabular_softmax) {
      double* row = grad.data() + static_cast<std::size_t>(context(obs)) * actions_;
      for (int k = 0; k < actions_; ++k) row[k] += scale * dlogits[k];
      return;
    }
    const int d = layout_.dim();
    const auto h = hidden_activations(obs.x);
    const double* w2 = params_.data() + hidden_ * d + hidden_;
    double* gw1 = grad.data();
    double* gb1 = gw1 + hidden_ * d;
    double* gw2 = gb1 + hidden_;
    double* gb2 = gw2 + actions_ * hidden_;
    std::vector<double> dh(hidden_, 0.0);
    for (int k = 0; k < actions_; ++k) {
      const double g = scale * dlogits[k];
      if (g == 0.0) continue;
      gb2[k] += g;
      for (int j = 0; j < hidden_; ++j) {
        gw2[k * hidden_ + j] += g * h[j];
        dh[j] += g * w2[k * hidden_ + j];
      }
    }
    for (int j = 0; j < hidden_; ++j) {
      const double dpre = dh[j] * (1.0 - h[j] * h[j]);
      if (dpre == 0.0) continue;
      gb1[j] += dpre;
      for (int i = 0; i < d; ++i)
        if (obs.x[i] != 0.0) gw1[j * d + i] += dpre * obs.x[i];
    }
  }

  std::vector<double> log_prob_grad(const Observation& obs, int action) const {
    require(action >= 0 && action < actions_, "action out of range");
    auto dl = action_dist(obs);
    for (auto& x : dl) x = -x;
    dl[action] += 1.0;
    std::vector<double> g(params_.size(), 0.0);
    backprop(obs, dl, 1.0, g);
    return g;
  }

 private:
  std::size_t mlp_size() const {
    const std::size_t d = layout_.dim();
    return hidden_ * d + hidden_ + actions_ * hidden_ + actions_;
  }

  void check(const Observation& obs) const {
    if (static_cast<int>(obs.x.size()) != layout_.dim())
      throw ValidationError("observation has " + std::to_string(obs.x.size()) +
                            " coordinates, policy expects " + std::to_string(layout_.dim()));
  }

  std::vector<double> hidden_activations(const std::vector<double>& x) const {
    const int d = layout_.dim();
    const double* w1 = params_.data();
    const double* b1 = w1 + hidden_ * d;
    std::vector<double> h(hidden_);
    for (int j = 0; j < hidden_; ++j) {
      double acc = b1[j];
      for (int i = 0; i < d; ++i)
        if (x[i] != 0.0) acc += w1[j * d + i] * x[i];
      h[j] = std::tanh(acc);
    }
    return h;
  }

  PolicyKind kind_ = PolicyKind::tabular_softmax;
  ObsLayout layout_;
  int actions_ = 0;
  int hidden_ = 0;
  std::vector<double> params_;
};

// Near-deterministic tabular policy: `logit` on one action everywhere.
inline Policy constant_policy(ObsLayout layout, int actions, int action, double logit = 50.0) {
  require(action >= 0 && action < actions, "constant action out of range");
  Policy p = Policy::tabular(std::move(layout), actions);
  auto params = p.params();
  for (std::size_t i = action; i < params.size(); i += actions) params[i] = logit;
  return p.with_params(std::move(params));
}

inline std::vector<double> state_dist(const MarkovGame& g, const Policy& p, int s) {
  return p.action_dist(observe(g, p.layout(), s));
}

inline std::vector<double> marginalize_transition(const MarkovGame& g, const Policy& vic, int s,
                                                  int a) {
  require(vic.action_count() == g.num_vic_actions, "victim action count mismatch");
  return marginalize_transition(g, state_dist(g, vic, s), s, a);
}

inline double kl_divergence(const MarkovGame& g, const Policy& p, const Policy& q, int s) {
  return kl_divergence(state_dist(g, p, s), state_dist(g, q, s));
}

inline double max_state_kl(const MarkovGame& g, const Policy& p, const Policy& q) {
  double m = 0.0;
  for (int s = 0; s < g.num_states; ++s)
    if (!g.absorbing(s)) m = std::max(m, kl_divergence(g, p, q, s));
  return m;
}

// Occupancy-weighted action entropy over non-absorbing states.
inline double entropy(const MarkovGame& g, const Policy& p, std::span<const double> occupancy) {
  require(static_cast<int>(occupancy.size()) == g.num_states, "occupancy has the wrong length");
  double h = 0.0;
  for (int s = 0; s < g.num_states; ++s) {
    if (g.absorbing(s) || occupancy[s] == 0.0) continue;
    require(occupancy[s] >= 0.0, "occupancy must be nonnegative");
    h += occupancy[s] * entropy(state_dist(g, p, s));
  }
  return h;
}

enum class MixGranularity { episode, step };

// Adversary mixture used for victim retraining. With per-episode granularity
// the acting policy is drawn once at episode start.
struct PolicyMixture {
  Policy primary;
  Policy secondary;
  double p_primary = 1.0;
  MixGranularity granularity = MixGranularity::episode;
};

inline PolicyMixture mix_policies(const Policy& new_policy, const Policy& base, double p_new,
                                  MixGranularity granularity = MixGranularity::episode) {
  require(p_new >= 0.0 && p_new <= 1.0, "mixture probability must lie in [0, 1]");
  require(new_policy.action_count() == base.action_count(), "mixed policies need the same action set");
  return {new_policy, base, p_new, granularity};
}

// Draws nothing when the choice is forced so p in {0, 1} reproduces the
// unmixed stream exactly.
inline bool pick_primary(double p_primary, Rng& rng) {
  if (p_primary >= 1.0) return true;
  if (p_primary <= 0.0) return false;
  return uniform01(rng) < p_primary;
}

inline void to_json(nlohmann::json& j, const ObsLayout& l) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : l.blocks) blocks.push_back({{"name", b.name}, {"offset", b.offset}, {"size", b.size}});
  j = {{"num_states", l.num_states},
       {"state_dim", l.state_dim},
       {"imit_actions", l.imit_actions},
       {"blocks", blocks}};
}

inline void from_json(const nlohmann::json& j, ObsLayout& l) {
  l.num_states = j.at("num_states").get<int>();
  l.state_dim = j.at("state_dim").get<int>();
  l.imit_actions = j.at("imit_actions").get<int>();
  l.blocks.clear();
  for (const auto& b : j.at("blocks"))
    l.blocks.push_back({b.at("name").get<std::string>(), b.at("offset").get<int>(), b.at("size").get<int>()});
}

inline nlohmann::json policy_to_json(const Policy& p) {
  return {{"schema_version", kSchemaVersion},
          {"kind", to_string(p.kind())},
          {"obs_layout", p.layout()},
          {"action_count", p.action_count()},
          {"hidden", p.hidden()},
          {"params", p.params()}};
}

inline void check_schema(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw SchemaError("missing schema_version");
  const int v = j.at("schema_version").get<int>();
  if (v != kSchemaVersion)
    throw SchemaError("schema_version " + std::to_string(v) + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");
}

inline Policy policy_from_json(const nlohmann::json& j) {
  try {
    check_schema(j);
    const auto kind = j.at("kind").get<std::string>();
    const auto layout = j.at("obs_layout").get<ObsLayout>();
    const int actions = j.at("action_count").get<int>();
    auto params = j.at("params").get<std::vector<double>>();
    Policy p;
    if (kind == "tabular_softmax") {
      p = Policy::tabular(layout, actions);
    } else if (kind == "mlp") {
      Rng unused(0);
      p = Policy::mlp(layout, actions, j.at("hidden").get<int>(), unused);
    } else {
      throw ValidationError("unknown policy kind '" + kind + "'");
    }
    if (params.size() != p.num_params())
      throw ValidationError("policy has " + std::to_string(params.size()) + " parameters, expected " +
                            std::to_string(p.num_params()));
    return p.with_params(std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed policy: ") + e.what());
  }
}

}  // namespace advpol

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <json.hpp>

#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/policy.hpp"
#include "advpol/rollout.hpp"

namespace advpol {

// Per-state action distributions; rows of absorbing states are empty.
using PolicyTable = std::vector<std::vector<double>>;

inline PolicyTable victim_table(const MarkovGame& g, const Policy& vic) {
  require(vic.action_count() == g.num_vic_actions, "victim action count mismatch");
  PolicyTable t(g.num_states);
  for (int s = 0; s < g.num_states; ++s)
    if (!g.absorbing(s)) t[s] = state_dist(g, vic, s);
  return t;
}

// Effective adversary distribution per state. With an imitator the sampled
// prediction is summed out: pi(a|s) = sum_k imit(k|s) adv(a|s,k).
inline PolicyTable adversary_table(const MarkovGame& g, const Policy& adv, const Policy* imitator = nullptr,
                                   const RolloutOptions& opt = {}) {
  require(adv.action_count() == g.num_adv_actions, "adversary action count mismatch");
  PolicyTable t(g.num_states);
  for (int s = 0; s < g.num_states; ++s) {
    if (g.absorbing(s)) continue;
    const bool feed = imitator != nullptr && adv.layout().imit_actions > 0 && opt.feed_imitator;
    if (!feed) {
      t[s] = adv.action_dist(adversary_observation(g, adv, s, kNoImitAction, {}, opt));
      continue;
    }
    const auto q = state_dist(g, *imitator, s);
    if (opt.imitator_input == ImitatorInput::distribution) {
      t[s] = adv.action_dist(adversary_observation(g, adv, s, kNoImitAction, q, opt));
      continue;
    }
    t[s].assign(g.num_adv_actions, 0.0);
    for (int k = 0; k < static_cast<int>(q.size()); ++k) {
      const auto p = adv.action_dist(adversary_observation(g, adv, s, k, {}, opt));
      for (int a = 0; a < g.num_adv_actions; ++a) t[s][a] += q[k] * p[a];
    }
  }
  return t;
}

using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

// State-to-state kernel induced by both seats' tables.
inline SparseRows joint_kernel(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& vic) {
  std::vector<Eigen::Triplet<double>> trip;
  for (int s = 0; s < g.num_states; ++s) {
    if (g.absorbing(s)) {
      trip.emplace_back(s, s, 1.0);
      continue;
    }
    std::map<int, double> row;
    for (int a = 0; a < g.num_adv_actions; ++a) {
      if (adv[s][a] == 0.0) continue;
      for (int v = 0; v < g.num_vic_actions; ++v) {
        const double w = adv[s][a] * vic[s][v];
        if (w == 0.0) continue;
        for (const auto& [t, p] : g.successors(s, a, v)) row[t] += w * p;
      }
    }
    for (const auto& [t, p] : row) trip.emplace_back(s, t, p);
  }
  SparseRows m(g.num_states, g.num_states);
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

// Smallest T with gamma^T * max(1, max|r|) / (1 - gamma) below 1e-12.
inline int oracle_horizon(const MarkovGame& g) {
  const double gamma = g.discount;
  if (gamma == 0.0) return 1;
  const double scale = std::max(1.0, g.max_abs_reward()) / (1.0 - gamma);
  return static_cast<int>(std::ceil(std::log(1e-12 / scale) / std::log(gamma)));
}

// Solves (I - gamma M) x = b.
inline std::vector<double> solve_discounted(const SparseRows& m, double gamma, const std::vector<double>& b,
                                            bool transpose = false) {
  const int n = static_cast<int>(m.rows());
  Eigen::SparseMatrix<double> a(n, n);
  a.setIdentity();
  if (transpose)
    a -= gamma * Eigen::SparseMatrix<double>(m.transpose());
  else
    a -= gamma * Eigen::SparseMatrix<double>(m);
  a.makeCompressed();
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  lu.compute(a);
  if (lu.info() != Eigen::Success) throw RuntimeFailure("sparse LU factorization failed");
  Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(b.data(), n);
  Eigen::VectorXd x = lu.solve(rhs);
  if (lu.info() != Eigen::Success) throw RuntimeFailure("sparse LU solve failed");
  return {x.data(), x.data() + n};
}

enum class Side { adversary, victim };

struct ValueTable {
  std::vector<double> values;
  int horizon_used = 0;  // Bellman sweeps performed
  double residual = 0.0;
};

// V(s) = c(s) + gamma * sum_s' M(s, s') V(s'): the discounted sum of state
// rewards starting at s, counting s itself. Absorbing states keep paying.
inline ValueTable bellman_iterate(const SparseRows& m, double gamma, const std::vector<double>& c,
                                  int max_sweeps = 1000000) {
  const int n = static_cast<int>(c.size());
  double cmax = 0.0;
  for (double x : c) cmax = std::max(cmax, std::abs(x));
  const double tol = 1e-13 * std::max(1.0, cmax / (1.0 - gamma));
  ValueTable vt;
  vt.values.assign(n, 0.0);
  Eigen::Map<Eigen::VectorXd> v(vt.values.data(), n);
  const Eigen::Map<const Eigen::VectorXd> cv(c.data(), n);
  for (int k = 1; k <= max_sweeps; ++k) {
    Eigen::VectorXd next = cv + gamma * (m * v);
    vt.residual = (next - v).cwiseAbs().maxCoeff();
    v = next;
    vt.horizon_used = k;
    if (vt.residual <= tol) {
      Eigen::VectorXd check = cv + gamma * (m * v) - v;
      vt.residual = check.cwiseAbs().maxCoeff();
      return vt;
    }
  }
  throw RuntimeFailure("value iteration did not converge within " + std::to_string(max_sweeps) +
                       " sweeps (discount too close to 1)");
}

inline std::vector<double> side_rewards(const MarkovGame& g, Side side) {
  return side == Side::adversary ? g.adv_reward : g.vic_reward;
}

inline ValueTable value_function(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& vic, Side side) {
  return bellman_iterate(joint_kernel(g, adv, vic), g.discount, side_rewards(g, side));
}

inline ValueTable value_function(const MarkovGame& g, const Policy& adv, const Policy& vic, Side side) {
  return value_function(g, adversary_table(g, adv), victim_table(g, vic), side);
}

inline std::vector<double> value_function_linear(const MarkovGame& g, const PolicyTable& adv,
                                                 const PolicyTable& vic, const std::vector<double>& c) {
  return solve_discounted(joint_kernel(g, adv, vic), g.discount, c);
}

// d(s) = sum_{t=0}^{T} gamma^t Pr(s_t = s), forward propagation from s0.
// A negative horizon uses the oracle horizon.
inline std::vector<double> occupancy(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& vic,
                                     int horizon = -1) {
  const int T = horizon >= 0 ? horizon : oracle_horizon(g);
  const SparseRows m = joint_kernel(g, adv, vic);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(g.num_states);
  mu[g.initial_state] = 1.0;
  Eigen::VectorXd d = mu;
  double w = 1.0;
  for (int t = 1; t <= T; ++t) {
    mu = m.transpose() * mu;
    w *= g.discount;
    if (w == 0.0) break;
    d += w * mu;
  }
  return {d.data(), d.data() + g.num_states};
}

// Untruncated occupancy by a linear solve.
inline std::vector<double> occupancy_linear(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& vic) {
  std::vector<double> e(g.num_states, 0.0);
  e[g.initial_state] = 1.0;
  return solve_discounted(joint_kernel(g, adv, vic), g.discount, e, true);
}

// Victim's expected return under the kernel the adversary induces.
inline double gamma_of_adversary(const MarkovGame& g, const PolicyTable& vic, const PolicyTable& adv) {
  return value_function(g, adv, vic, Side::victim).values[g.initial_state];
}

// A(s, s_bar) = r_vic(s) + gamma V(s_bar) - V(s), V the victim value table.
inline double competitive_advantage(const MarkovGame& g, const ValueTable& vic_values, int s, int s_bar) {
  return g.vic_reward[s] + g.discount * vic_values.values[s_bar] - vic_values.values[s];
}

inline double competitive_advantage(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& vic, int s,
                                    int s_bar) {
  return competitive_advantage(g, value_function(g, adv, vic, Side::victim), s, s_bar);
}

struct BoundReport {
  std::string check_name;
  double measured = 0.0;
  double bound = 0.0;
  double margin = 0.0;
  bool passed = false;
  bool degenerate = false;
  nlohmann::json context = nlohmann::json::object();
};

inline BoundReport make_report(std::string name, double measured, double bound, nlohmann::json context = {}) {
  BoundReport r;
  r.check_name = std::move(name);
  r.measured = measured;
  r.bound = bound;
  r.margin = bound - measured;
  r.passed = r.margin >= -1e-9 || std::isinf(bound);
  r.degenerate = std::isinf(bound);
  r.context = context.is_null() ? nlohmann::json::object() : std::move(context);
  return r;
}

inline void to_json(nlohmann::json& j, const BoundReport& r) {
  auto num = [](double x) -> nlohmann::json {
    if (std::isfinite(x)) return x;
    return x > 0 ? "inf" : (x < 0 ? "-inf" : "nan");
  };
  j = {{"check_name", r.check_name}, {"measured", num(r.measured)}, {"bound", num(r.bound)},
       {"margin", num(r.margin)},    {"passed", r.passed},          {"degenerate", r.degenerate},
       {"context", r.context}};
}

// Constant in ||p - q||_1 <= c sqrt(KL). The default keeps sqrt(2 ln 2);
// `tight` uses Pinsker's sqrt(2) for KL in nats.
inline double pinsker_constant(bool tight) { return tight ? std::sqrt(2.0) : std::sqrt(2.0 * std::numbers::ln2); }

inline double max_state_kl(const MarkovGame& g, const PolicyTable& p, const PolicyTable& q) {
  double m = 0.0;
  for (int s = 0; s < g.num_states; ++s)
    if (!g.absorbing(s)) m = std::max(m, kl_divergence(p[s], q[s]));
  return m;
}

inline double max_state_l1(const MarkovGame& g, const PolicyTable& p, const PolicyTable& q) {
  double m = 0.0;
  for (int s = 0; s < g.num_states; ++s)
    if (!g.absorbing(s)) m = std::max(m, 2.0 * total_variation(p[s], q[s]));
  return m;
}

// gamma H c / (1 - gamma) * sqrt(max_kl)
inline double lemma2_bound(double gamma, double h, double max_kl, bool tight_pinsker = false) {
  if (std::isinf(max_kl)) return std::numeric_limits<double>::infinity();
  return gamma * h * pinsker_constant(tight_pinsker) / (1.0 - gamma) * std::sqrt(max_kl);
}

struct Lemma2Result {
  BoundReport kl;         // sqrt(KL) form
  BoundReport lipschitz;  // L1 form
};

// |Gamma(b) - Gamma(a)| against gamma H c / (1 - gamma) * max_s sqrt(KL(a || b)),
// with H = max_s |V_victim(s)| under adv_a's kernel.
inline Lemma2Result lemma2_check(const MarkovGame& g, const PolicyTable& vic, const PolicyTable& adv_a,
                                 const PolicyTable& adv_b, bool tight_pinsker = false) {
  const double gamma = g.discount;
  const auto va = value_function(g, adv_a, vic, Side::victim);
  const auto vb = value_function(g, adv_b, vic, Side::victim);
  double h = 0.0;
  for (double x : va.values) h = std::max(h, std::abs(x));
  const double measured = std::abs(vb.values[g.initial_state] - va.values[g.initial_state]);
  const double kl = max_state_kl(g, adv_a, adv_b);
  const double l1 = max_state_l1(g, adv_a, adv_b);
  const double kl_bound = lemma2_bound(gamma, h, kl, tight_pinsker);
  const double lip_bound = gamma * h / (1.0 - gamma) * l1;
  nlohmann::json ctx = {{"H", h}, {"H_policy", "adv_a"}, {"max_kl", std::isinf(kl) ? -1.0 : kl},
                        {"max_l1", l1}, {"gamma", gamma}, {"tight_pinsker", tight_pinsker}};
  return {make_report("lemma2_kl", measured, kl_bound, ctx), make_report("lemma2_lipschitz", measured, lip_bound, ctx)};
}

// K = gamma c (max r_vic - log(D_L (1 - D_U))) / (1 - gamma)^2
inline double theorem1_constant(double gamma, double max_vic_reward, double d_lo, double d_hi,
                                bool tight_pinsker = false) {
  require(gamma >= 0.0 && gamma < 1.0, "gamma must lie in [0, 1)");
  require(d_lo > 0.0 && d_lo <= d_hi && d_hi < 1.0, "clamp must satisfy 0 < D_L <= D_U < 1");
  const double log_term = std::log(d_lo) + std::log1p(-d_hi);
  return gamma * pinsker_constant(tight_pinsker) * (max_vic_reward - log_term) / ((1.0 - gamma) * (1.0 - gamma));
}

struct BestResponse {
  PolicyTable policy;  // deterministic adversary
  std::vector<double> values;
  int iterations = 0;
};

// Exact best response of the adversary to a fixed victim table on per-state
// reward c, by policy iteration.
inline BestResponse best_response(const MarkovGame& g, const PolicyTable& vic, const std::vector<double>& c) {
  std::vector<int> choice(g.num_states, 0);
  auto table_of = [&] {
    PolicyTable t(g.num_states);
    for (int s = 0; s < g.num_states; ++s) {
      if (g.absorbing(s)) continue;
      t[s].assign(g.num_adv_actions, 0.0);
      t[s][choice[s]] = 1.0;
    }
    return t;
  };
  BestResponse br;
  for (int it = 1; it <= 1000; ++it) {
    br.policy = table_of();
    br.values = value_function_linear(g, br.policy, vic, c);
    br.iterations = it;
    bool changed = false;
    for (int s = 0; s < g.num_states; ++s) {
      if (g.absorbing(s)) continue;
      std::vector<double> q(g.num_adv_actions, 0.0);
      for (int a = 0; a < g.num_adv_actions; ++a)
        for (int v = 0; v < g.num_vic_actions; ++v)
          for (const auto& [t, p] : g.successors(s, a, v)) q[a] += vic[s][v] * p * br.values[t];
      int best = choice[s];
      for (int a = 0; a < g.num_adv_actions; ++a)
        if (q[a] > q[best] + 1e-12 * std::max(1.0, std::abs(q[best]))) best = a;
      if (best != choice[s]) {
        choice[s] = best;
        changed = true;
      }
    }
    if (!changed) return br;
  }
  throw RuntimeFailure("policy iteration did not converge");
}

struct Theorem2Result {
  BoundReport report;       // |Y_est - Y*|
  BoundReport per_sample;   // worst single-sample gap
};

// Samples victims in the max-state KL ball around vic0 by per-state rejection
// of Gaussian logit perturbations, and compares min_i max_adv J(adv, vic_i)
// with Y* = max_adv J(adv, vic0), J the Delta-reward return. Sampling gives
// Y_est >= Y(eps), so passing is necessary, not sufficient.
inline Theorem2Result theorem2_probe(const MarkovGame& g, const PolicyTable& vic0, double epsilon, int n_samples,
                                     Rng& rng, bool tight_pinsker = false, int max_attempts = 100000) {
  require(epsilon >= 0.0, "epsilon must be nonnegative");
  require(n_samples >= 0, "sample count must be nonnegative");
  const double gamma = g.discount;
  const auto delta = delta_reward_table(g);
  double dmax = 0.0;
  for (double x : delta) dmax = std::max(dmax, std::abs(x));
  const double y_star = best_response(g, vic0, delta).values[g.initial_state];
  const double bound = gamma * pinsker_constant(tight_pinsker) * dmax / ((1.0 - gamma) * (1.0 - gamma)) *
                       std::sqrt(epsilon);
  const double sigma = std::sqrt(2.0 * epsilon);
  double y_est = y_star, worst = 0.0, max_kl = 0.0;
  long rejections = 0;
  for (int i = 0; i < n_samples; ++i) {
    PolicyTable vic = vic0;
    for (int s = 0; s < g.num_states && epsilon > 0.0; ++s) {
      if (g.absorbing(s)) continue;
      std::vector<double> z(vic0[s].size());
      for (int attempt = 0;; ++attempt) {
        if (attempt >= max_attempts)
          throw RuntimeFailure("rejection sampling stalled for epsilon " + std::to_string(epsilon));
        for (std::size_t k = 0; k < z.size(); ++k) z[k] = safe_log(vic0[s][k]) + sigma * standard_normal(rng);
        auto p = softmax(z);
        const double kl = kl_divergence(p, vic0[s]);
        if (kl <= epsilon) {
          vic[s] = std::move(p);
          max_kl = std::max(max_kl, kl);
          break;
        }
        ++rejections;
      }
    }
    const double y = best_response(g, vic, delta).values[g.initial_state];
    y_est = std::min(y_est, y);
    worst = std::max(worst, std::abs(y - y_star));
  }
  nlohmann::json ctx = {{"epsilon", epsilon}, {"n_samples", n_samples}, {"Y_star", y_star},
                        {"Y_est", y_est},     {"max_sample_gap", worst},  {"max_sample_kl", max_kl},
                        {"rejections", rejections}, {"tight_pinsker", tight_pinsker}};
  return {make_report("theorem2", std::abs(y_est - y_star), bound, ctx),
          make_report("theorem2_per_sample", worst, bound, ctx)};
}

// Objective over the joint process. Every visited state pays
// adv_weight r_adv + vic_weight r_vic (absorbing states forever); every
// non-absorbing step also pays action_reward(s, a_seat) and entropy_weight
// times the entropy of the victim-seat policy at s.
struct ObjectiveSpec {
  double adv_weight = 0.0;
  double vic_weight = 0.0;
  std::vector<double> action_reward;  // flat [s * V + v], empty for none
  double entropy_weight = 0.0;
};

inline ObjectiveSpec objective_adv() { return {1.0, 0.0, {}, 0.0}; }
inline ObjectiveSpec objective_vic() { return {0.0, 1.0, {}, 0.0}; }
inline ObjectiveSpec objective_delta() { return {1.0, -1.0, {}, 0.0}; }

inline std::vector<double> objective_state_reward(const MarkovGame& g, const PolicyTable& seat,
                                                  const ObjectiveSpec& spec) {
  std::vector<double> r(g.num_states);
  const int nv = g.num_vic_actions;
  for (int s = 0; s < g.num_states; ++s) {
    r[s] = spec.adv_weight * g.adv_reward[s] + spec.vic_weight * g.vic_reward[s];
    if (g.absorbing(s)) continue;
    if (!spec.action_reward.empty())
      for (int v = 0; v < nv; ++v) r[s] += seat[s][v] * spec.action_reward[static_cast<std::size_t>(s) * nv + v];
    if (spec.entropy_weight != 0.0) r[s] += spec.entropy_weight * entropy(seat[s]);
  }
  return r;
}

inline std::vector<double> objective_values(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& seat,
                                            const ObjectiveSpec& spec) {
  require(spec.action_reward.empty() ||
              spec.action_reward.size() == static_cast<std::size_t>(g.num_states) * g.num_vic_actions,
          "action reward table has the wrong size");
  return value_function_linear(g, adv, seat, objective_state_reward(g, seat, spec));
}

inline double exact_objective(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& seat,
                              const ObjectiveSpec& spec) {
  return objective_values(g, adv, seat, spec)[g.initial_state];
}

enum class GradientTarget { adversary, seat };

// Gradient of exact_objective with respect to one tabular policy's logits,
// via the policy-gradient theorem on exact occupancies and Q tables.
// `seat` is the policy in the victim seat (victim or imitator); `adv_imitator`
// optionally feeds predictions to an augmented adversary and is held fixed.
inline std::vector<double> exact_policy_gradient(const MarkovGame& g, const Policy& adv, const Policy& seat,
                                                 const ObjectiveSpec& spec, GradientTarget wrt,
                                                 const Policy* adv_imitator = nullptr) {
  const Policy& target = wrt == GradientTarget::adversary ? adv : seat;
  if (target.kind() != PolicyKind::tabular_softmax)
    throw ValidationError("exact policy gradient needs a tabular policy");
  const auto adv_t = adversary_table(g, adv, adv_imitator);
  const auto seat_t = victim_table(g, seat);
  const auto values = objective_values(g, adv_t, seat_t, spec);
  const auto d = occupancy_linear(g, adv_t, seat_t);
  const double gamma = g.discount;
  const int na = g.num_adv_actions, nv = g.num_vic_actions;
  std::vector<double> grad(target.num_params(), 0.0);
  for (int s = 0; s < g.num_states; ++s) {
    if (g.absorbing(s) || d[s] == 0.0) continue;
    std::vector<double> cont(static_cast<std::size_t>(na) * nv, 0.0);
    for (int a = 0; a < na; ++a)
      for (int v = 0; v < nv; ++v)
        for (const auto& [t, p] : g.successors(s, a, v)) cont[a * nv + v] += gamma * p * values[t];
    auto seat_reward = [&](int v) {
      return spec.action_reward.empty() ? 0.0 : spec.action_reward[static_cast<std::size_t>(s) * nv + v];
    };
    if (wrt == GradientTarget::adversary) {
      std::vector<double> q(na, 0.0);
      for (int a = 0; a < na; ++a)
        for (int v = 0; v < nv; ++v) q[a] += seat_t[s][v] * (seat_reward(v) + cont[a * nv + v]);
      auto push = [&](const Observation& obs, double weight) {
        const auto p = adv.action_dist(obs);
        double qbar = 0.0;
        for (int a = 0; a < na; ++a) qbar += p[a] * q[a];
        std::vector<double> dl(na);
        for (int a = 0; a < na; ++a) dl[a] = p[a] * (q[a] - qbar);
        adv.backprop(obs, dl, d[s] * weight, grad);
      };
      if (adv_imitator != nullptr && adv.layout().imit_actions > 0) {
        const auto pred = state_dist(g, *adv_imitator, s);
        for (int k = 0; k < nv; ++k) push(observe(g, adv.layout(), s, k), pred[k]);
      } else {
        push(observe(g, adv.layout(), s), 1.0);
      }
    } else {
      std::vector<double> q(nv, 0.0);
      for (int v = 0; v < nv; ++v) {
        q[v] = seat_reward(v);
        for (int a = 0; a < na; ++a) q[v] += adv_t[s][a] * cont[a * nv + v];
      }
      const auto& p = seat_t[s];
      double qbar = 0.0;
      for (int v = 0; v < nv; ++v) qbar += p[v] * q[v];
      const double h = entropy(p);
      std::vector<double> dl(nv);
      for (int v = 0; v < nv; ++v)
        dl[v] = p[v] * (q[v] - qbar) - spec.entropy_weight * p[v] * (safe_log(p[v]) + h);
      seat.backprop(observe(g, seat.layout(), s), dl, d[s], grad);
    }
  }
  return grad;
}

}  // namespace advpol

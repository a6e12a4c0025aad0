#include <cmath>
#include <numeric>

#include "advpol/game.hpp"
#include "advpol/policy.hpp"
#include "gtest/gtest.h"

namespace advpol {
namespace {

MarkovGame grid() {
  EnvSpec e;
  e.name = "grid_pass";
  return make_env(e);
}

MarkovGame rps() { return make_env(EnvSpec{}); }

Policy random_tabular(const ObsLayout& layout, int actions, Rng& rng, double scale = 1.0) {
  auto p = Policy::tabular(layout, actions);
  auto params = p.params();
  for (auto& x : params) x = scale * standard_normal(rng);
  return p.with_params(params);
}

TEST(PolicyTest, zero_logits_are_uniform) {
  const auto g = rps();
  const auto p = Policy::tabular(state_layout(g), 3);
  for (double x : state_dist(g, p, 0)) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(PolicyTest, softmax_of_ten_zero_zero) {
  const std::vector<double> z{10.0, 0.0, 0.0};
  const auto p = softmax(z);
  const double e10 = std::exp(10.0);
  EXPECT_NEAR(p[0], e10 / (e10 + 2.0), 1e-15);
  EXPECT_NEAR(p[0], 0.99991, 1e-5);
  EXPECT_NEAR(p[1], 4.5396e-5, 1e-8);
  EXPECT_DOUBLE_EQ(p[1], p[2]);
}

TEST(PolicyTest, zero_weight_mlp_is_uniform) {
  const auto g = grid();
  Rng rng(0);
  auto p = Policy::mlp(augmented_layout(g), 5, 32, rng);
  p = p.with_params(std::vector<double>(p.num_params(), 0.0));
  for (double x : p.action_dist(observe(g, p.layout(), g.initial_state, 3))) EXPECT_DOUBLE_EQ(x, 0.2);
}

TEST(PolicyTest, mlp_init_in_range_and_mlp_shape) {
  const auto g = grid();
  Rng rng(1);
  const auto p = Policy::mlp(augmented_layout(g), 5, 32, rng);
  const std::size_t d = g.feature_dim + 5;
  EXPECT_EQ(p.num_params(), 32 * d + 32 + 5 * 32 + 5);
  for (double w : p.params()) {
    EXPECT_GE(w, -0.1);
    EXPECT_LT(w, 0.1);
  }
}

TEST(PolicyTest, dimension_mismatch_throws) {
  const auto g = grid();
  const auto p = Policy::tabular(augmented_layout(g), 5);
  Observation obs = observe(g, state_layout(g), 0);
  EXPECT_THROW(p.action_dist(obs), ValidationError);
}

TEST(PolicyTest, tabular_log_prob_grad_closed_form) {
  const auto g = rps();
  const auto p = Policy::tabular(state_layout(g), 3);
  const auto grad = p.log_prob_grad(observe(g, p.layout(), 0), 0);
  EXPECT_NEAR(grad[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(grad[1], -1.0 / 3.0, 1e-15);
  EXPECT_NEAR(grad[2], -1.0 / 3.0, 1e-15);
  for (std::size_t i = 3; i < grad.size(); ++i) EXPECT_EQ(grad[i], 0.0);
}

TEST(PolicyTest, augmented_tabular_keys_on_prediction) {
  const auto g = rps();
  const auto p = Policy::tabular(augmented_layout(g), 3);
  EXPECT_EQ(p.context(observe(g, p.layout(), 0, 2)), 2);
  EXPECT_EQ(p.context(observe(g, p.layout(), 0)), 3);
  EXPECT_EQ(p.context(observe(g, p.layout(), 1, 0)), 4);
}

TEST(PolicyTest, score_identity_holds) {
  const auto g = grid();
  Rng rng(3);
  const auto tab = random_tabular(augmented_layout(g), 5, rng, 2.0);
  const auto net = Policy::mlp(augmented_layout(g), 5, 32, rng);
  for (const auto* p : {&tab, &net}) {
    for (int s : {0, 17, 77, g.initial_state}) {
      const auto obs = observe(g, p->layout(), s, s % 5);
      const auto pi = p->action_dist(obs);
      std::vector<double> total(p->num_params(), 0.0);
      for (int a = 0; a < 5; ++a) {
        const auto gr = p->log_prob_grad(obs, a);
        for (std::size_t i = 0; i < total.size(); ++i) total[i] += pi[a] * gr[i];
      }
      for (double x : total) ASSERT_LE(std::abs(x), 1e-9);
    }
  }
}

TEST(PolicyTest, log_prob_grad_matches_central_differences) {
  const auto g = grid();
  Rng rng(4);
  const double h = 1e-5;
  for (int draw = 0; draw < 100; ++draw) {
    auto p = Policy::mlp(augmented_layout(g), 5, 32, rng);
    auto params = p.params();
    for (auto& w : params) w *= 10.0;  // leave the near-linear regime
    p = p.with_params(params);
    const int s = static_cast<int>(uniform01(rng) * 144);
    const int a = draw % 5;
    const auto obs = observe(g, p.layout(), s, draw % 6 == 5 ? -1 : draw % 5);
    const auto grad = p.log_prob_grad(obs, a);
    // spot-check a spread of coordinates, including every output weight
    for (std::size_t i = draw % 7; i < params.size(); i += 37) {
      auto up = params, dn = params;
      up[i] += h;
      dn[i] -= h;
      const double fd = (std::log(p.with_params(up).action_dist(obs)[a]) -
                         std::log(p.with_params(dn).action_dist(obs)[a])) /
                        (2.0 * h);
      ASSERT_NEAR(grad[i], fd, 1e-6) << "draw " << draw << " coordinate " << i;
    }
  }
}

TEST(PolicyTest, kl_properties) {
  const std::vector<double> point{1.0, 0.0, 0.0}, uniform{1.0 / 3, 1.0 / 3, 1.0 / 3};
  EXPECT_NEAR(kl_divergence(point, uniform), std::log(3.0), 1e-15);
  EXPECT_EQ(kl_divergence(uniform, uniform), 0.0);
  const std::vector<double> p{0.9, 0.1}, q{0.5, 0.5};
  const double pq = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
  const double qp = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(5.0);
  EXPECT_NEAR(kl_divergence(p, q), pq, 1e-15);
  EXPECT_NEAR(kl_divergence(q, p), qp, 1e-15);
  EXPECT_GT(std::abs(pq - qp), 0.1);
  EXPECT_TRUE(std::isinf(kl_divergence(uniform, point)));
}

TEST(PolicyTest, policy_kl_is_zero_on_self_and_nonnegative) {
  const auto g = grid();
  Rng rng(6);
  for (int i = 0; i < 20; ++i) {
    const auto a = random_tabular(state_layout(g), 5, rng);
    const auto b = random_tabular(state_layout(g), 5, rng);
    EXPECT_EQ(max_state_kl(g, a, a), 0.0);
    EXPECT_GE(kl_divergence(g, a, b, g.initial_state), 0.0);
    EXPECT_GT(max_state_kl(g, a, b), 0.0);
  }
}

TEST(PolicyTest, entropy_values) {
  const auto g = rps();
  std::vector<double> occ{1.0, 0.0, 0.0, 0.0};
  EXPECT_NEAR(entropy(g, Policy::tabular(state_layout(g), 3), occ), std::log(3.0), 1e-15);
  EXPECT_NEAR(entropy(g, constant_policy(state_layout(g), 3, 1, 800.0), occ), 0.0, 1e-15);
}

TEST(PolicyTest, uniform_maximizes_entropy) {
  Rng rng(7);
  const std::vector<double> uniform(4, 0.25);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> z(4);
    for (auto& x : z) x = 0.3 * standard_normal(rng);
    EXPECT_LT(entropy(softmax(z)), entropy(uniform));
  }
}

TEST(PolicyTest, blind_masks) {
  const auto g = grid();
  const auto layout = augmented_layout(g);
  const auto obs = observe(g, layout, g.initial_state, 1);
  EXPECT_EQ(blind(obs, {}).x, obs.x);
  ObservationMask all;
  all.zeroed.resize(layout.dim());
  std::iota(all.zeroed.begin(), all.zeroed.end(), 0);
  for (double x : blind(obs, all).x) EXPECT_EQ(x, 0.0);

  const auto mask = block_mask(layout, "victim_position");
  const auto blinded = blind(obs, mask);
  const auto* own = layout.block("adversary_position");
  for (int i = own->offset; i < own->offset + own->size; ++i) EXPECT_EQ(blinded.x[i], obs.x[i]);
  for (int i = layout.state_dim; i < layout.dim(); ++i) EXPECT_EQ(blinded.x[i], obs.x[i]);
  double victim_mass = 0.0;
  for (int i : mask.zeroed) victim_mass += blinded.x[i];
  EXPECT_EQ(victim_mass, 0.0);
  EXPECT_EQ(blind(blinded, mask).x, blinded.x);
}

TEST(PolicyTest, mixture_rejects_bad_inputs) {
  const auto g = grid();
  const auto a = Policy::tabular(state_layout(g), 5);
  const auto b = Policy::tabular(state_layout(g), 4);
  EXPECT_THROW(mix_policies(a, b, 0.5), ValidationError);
  EXPECT_THROW(mix_policies(a, a, 1.5), ValidationError);
}

TEST(PolicyTest, json_round_trip_is_bit_exact) {
  const auto g = grid();
  Rng rng(9);
  const auto net = Policy::mlp(augmented_layout(g), 5, 32, rng);
  const auto tab = random_tabular(augmented_layout(g), 5, rng);
  for (const auto* p : {&net, &tab}) {
    const auto text = policy_to_json(*p).dump();
    const auto back = policy_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(back.params(), p->params());
    EXPECT_EQ(back.kind(), p->kind());
    EXPECT_TRUE(back.layout() == p->layout());
  }
}

TEST(PolicyTest, old_schema_is_rejected) {
  const auto g = rps();
  auto j = policy_to_json(Policy::tabular(state_layout(g), 3));
  j["schema_version"] = 0;
  EXPECT_THROW(policy_from_json(j), SchemaError);
  j["schema_version"] = kSchemaVersion;
  j["params"] = std::vector<double>{1.0};
  EXPECT_THROW(policy_from_json(j), ValidationError);
}

}  // namespace
}  // namespace advpol

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "advpol/game.hpp"
#include "advpol/policy.hpp"
#include "advpol/rng.hpp"

namespace advpol::testing {

inline MarkovGame env(const std::string& name, double discount = 0.95) {
  EnvSpec e;
  e.name = name;
  e.discount = discount;
  return make_env(e);
}

inline Policy random_tabular(const ObsLayout& layout, int actions, Rng& rng, double scale = 1.0) {
  auto p = Policy::tabular(layout, actions);
  auto params = p.params();
  for (auto& x : params) x = scale * standard_normal(rng);
  return p.with_params(params);
}

// max |a - b| / max(1e-8, |b|) style check used by gradient comparisons
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a[i] - b[i]));
    den = std::max(den, std::abs(b[i]));
  }
  return num / std::max(den, 1e-8);
}

}  // namespace advpol::testing

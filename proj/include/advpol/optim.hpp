#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "advpol/errors.hpp"

namespace advpol {

struct Adam {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;

  // Returns params moved along +grad (ascent) or -grad.
  std::vector<double> step(std::vector<double> params, const std::vector<double>& grad, bool ascend) {
    require(params.size() == grad.size(), "gradient and parameters differ in length");
    if (m.size() != params.size()) {
      m.assign(params.size(), 0.0);
      v.assign(params.size(), 0.0);
      t = 0;
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const double sign = ascend ? 1.0 : -1.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      params[i] += sign * lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
    return params;
  }
};

inline void to_json(nlohmann::json& j, const Adam& a) {
  j = {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps},
       {"m", a.m},   {"v", a.v},         {"t", a.t}};
}

inline void from_json(const nlohmann::json& j, Adam& a) {
  a.lr = j.at("lr").get<double>();
  a.beta1 = j.at("beta1").get<double>();
  a.beta2 = j.at("beta2").get<double>();
  a.eps = j.at("eps").get<double>();
  a.m = j.at("m").get<std::vector<double>>();
  a.v = j.at("v").get<std::vector<double>>();
  a.t = j.at("t").get<long>();
}

}  // namespace advpol

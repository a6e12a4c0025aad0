#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "advpol/errors.hpp"
#include "advpol/optim.hpp"
#include "advpol/policy.hpp"

namespace advpol {

enum class UpdateMethod { reinforce, ppo_clip };

inline std::string_view to_string(UpdateMethod m) {
  return m == UpdateMethod::reinforce ? "reinforce" : "ppo_clip";
}

inline UpdateMethod update_method_from_string(const std::string& s) {
  if (s == "reinforce") return UpdateMethod::reinforce;
  if (s == "ppo_clip") return UpdateMethod::ppo_clip;
  throw ValidationError("unknown update method '" + s + "' (expected reinforce or ppo_clip)");
}

// FNV-1a over the parameter bytes; tags batches with the policy that made them.
inline std::uint64_t fingerprint(std::span<const double> params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double x : params) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

inline std::uint64_t fingerprint(const Policy& p) { return fingerprint(p.params()); }

struct PolicySample {
  Observation obs;
  int action = 0;
  double advantage = 0.0;
  double weight = 1.0;  // gamma^t when discounting is on
  double logp_old = 0.0;
};

struct PolicyBatch {
  std::vector<PolicySample> samples;
  std::uint64_t tag = 0;    // fingerprint of the sampling policy
  double normalizer = 1.0;  // episodes in the batch
};

// Ascent direction of the sampled surrogate plus the entropy bonus
// entropy_coeff * sum_i weight_i * grad h(pi(.|obs_i)).
inline std::vector<double> surrogate_gradient(const Policy& policy, const PolicyBatch& batch, UpdateMethod method,
                                              double clip_eps, double entropy_coeff) {
  require(!batch.samples.empty(), "empty batch");
  require(batch.normalizer > 0.0, "batch normalizer must be positive");
  if (method == UpdateMethod::reinforce && fingerprint(policy) != batch.tag)
    throw ValidationError("stale batch: sampled by different parameters than the policy being updated");
  std::vector<double> grad(policy.num_params(), 0.0);
  const int n = policy.action_count();
  std::vector<double> dl(n);
  for (const auto& x : batch.samples) {
    const auto p = policy.action_dist(x.obs);
    double coef = x.advantage;
    if (method == UpdateMethod::ppo_clip) {
      const double ratio = std::exp(safe_log(p[x.action]) - x.logp_old);
      const bool clipped = (x.advantage >= 0.0 && ratio > 1.0 + clip_eps) ||
                           (x.advantage < 0.0 && ratio < 1.0 - clip_eps);
      coef = clipped ? 0.0 : ratio * x.advantage;
    }
    const double h = entropy(p);
    for (int k = 0; k < n; ++k) {
      dl[k] = coef * ((k == x.action ? 1.0 : 0.0) - p[k]);
      if (entropy_coeff != 0.0) dl[k] -= entropy_coeff * p[k] * (safe_log(p[k]) + h);
    }
    policy.backprop(x.obs, dl, x.weight / batch.normalizer, grad);
  }
  return grad;
}

inline Policy policy_step(const Policy& policy, const PolicyBatch& batch, UpdateMethod method, double clip_eps,
                          double entropy_coeff, Adam& opt) {
  auto grad = surrogate_gradient(policy, batch, method, clip_eps, entropy_coeff);
  return policy.with_params(opt.step(policy.params(), grad, true));
}

// Running mean and standard error per coordinate.
struct GradientEstimate {
  long n = 0;
  std::vector<double> mean;
  std::vector<double> m2;

  void add(const std::vector<double>& x) {
    if (mean.empty()) {
      mean.assign(x.size(), 0.0);
      m2.assign(x.size(), 0.0);
    }
    ++n;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = x[i] - mean[i];
      mean[i] += d / static_cast<double>(n);
      m2[i] += d * (x[i] - mean[i]);
    }
  }

  std::vector<double> standard_error() const {
    std::vector<double> se(mean.size(), 0.0);
    if (n < 2) return se;
    for (std::size_t i = 0; i < se.size(); ++i)
      se[i] = std::sqrt(m2[i] / static_cast<double>(n - 1) / static_cast<double>(n));
    return se;
  }
};

}  // namespace advpol

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/imitator.hpp"
#include "advpol/io.hpp"
#include "advpol/oracle.hpp"
#include "advpol/parallel.hpp"
#include "advpol/policy.hpp"
#include "advpol/rollout.hpp"
#include "advpol/update.hpp"

namespace advpol {

inline constexpr std::uint64_t kEvalStream = 0x6576616cULL;

struct WinTieReport {
  int episodes = 0;
  int wins = 0;
  int ties = 0;
  int losses = 0;
  double win_rate = 0.0;
  double tie_rate = 0.0;
  double loss_rate = 0.0;
  double ci95 = 0.0;          // on win_rate
  double win_tie_ci95 = 0.0;  // on win_rate + tie_rate
  std::string config;         // fingerprint of the evaluation setup

  double win_tie_rate() const { return win_rate + tie_rate; }
};

inline double binomial_ci95(double p, int n) { return n > 0 ? 1.96 * std::sqrt(p * (1.0 - p) / n) : 0.0; }

// Half-width for the difference of two independent rates.
inline double joint_ci95(double p1, int n1, double p2, int n2) {
  return 1.96 * std::sqrt(p1 * (1.0 - p1) / n1 + p2 * (1.0 - p2) / n2);
}

inline void to_json(nlohmann::json& j, const WinTieReport& r) {
  j = {{"episodes", r.episodes}, {"wins", r.wins},           {"ties", r.ties},
       {"losses", r.losses},     {"win_rate", r.win_rate},   {"tie_rate", r.tie_rate},
       {"loss_rate", r.loss_rate}, {"ci95", r.ci95},         {"win_tie_rate", r.win_tie_rate()},
       {"win_tie_ci95", r.win_tie_ci95}, {"config", r.config}};
}

struct EvalOptions {
  int episodes = 1000;
  const Policy* imitator = nullptr;
  const ObservationMask* blind_mask = nullptr;
  ImitatorInput imitator_input = ImitatorInput::sampled;
  std::uint64_t seed = 0;
  int workers = 1;
  int horizon = 0;
};

namespace detail {

inline std::string hex64(std::uint64_t x) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(x));
  return buf;
}

inline WinTieReport tally(const std::vector<Outcome>& outcomes, std::string config) {
  WinTieReport r;
  r.episodes = static_cast<int>(outcomes.size());
  for (Outcome o : outcomes) {
    if (o == Outcome::adv_win)
      ++r.wins;
    else if (o == Outcome::vic_win)
      ++r.losses;
    else
      ++r.ties;
  }
  const double n = r.episodes;
  r.win_rate = r.wins / n;
  r.tie_rate = r.ties / n;
  r.loss_rate = r.losses / n;
  r.ci95 = binomial_ci95(r.win_rate, r.episodes);
  r.win_tie_ci95 = binomial_ci95(r.win_tie_rate(), r.episodes);
  r.config = std::move(config);
  return r;
}

inline std::string eval_fingerprint(const MarkovGame& g, const Policy& adv, const Policy& vic,
                                    const EvalOptions& o, std::uint64_t extra = 0) {
  std::vector<double> key{static_cast<double>(o.episodes), static_cast<double>(o.seed),
                          static_cast<double>(o.horizon), o.blind_mask ? 1.0 : 0.0,
                          static_cast<double>(static_cast<int>(o.imitator_input)), g.discount,
                          static_cast<double>(g.num_states)};
  std::uint64_t h = fingerprint(key) ^ fingerprint(adv) * 3 ^ fingerprint(vic) * 5 ^ extra;
  if (o.imitator != nullptr) h ^= fingerprint(*o.imitator) * 7;
  if (o.blind_mask != nullptr)
    for (int i : o.blind_mask->zeroed) h = h * 31 + static_cast<std::uint64_t>(i);
  return hex64(h);
}

}  // namespace detail

// Seeded rollouts with no learning; episode i draws from its own stream, so
// two evaluations with the same seed are paired episode by episode.
inline WinTieReport evaluate(const MarkovGame& g, const Policy& adv, const Policy& vic, const EvalOptions& o) {
  require(o.episodes >= 1, "episodes must be at least 1");
  RolloutOptions ro;
  ro.horizon = o.horizon;
  ro.feed_imitator = o.imitator != nullptr;
  ro.imitator_input = o.imitator_input;
  ro.adv_mask = o.blind_mask;
  std::vector<Outcome> outcomes(o.episodes);
  parallel_for(o.episodes, o.workers, [&](int i) {
    Rng rng(derive_seed(o.seed, kEvalStream, static_cast<std::uint64_t>(i)));
    outcomes[i] = rollout(g, adv, vic, o.imitator, rng, ro).outcome;
  });
  return detail::tally(outcomes, detail::eval_fingerprint(g, adv, vic, o));
}

inline WinTieReport evaluate(const MarkovGame& g, const PolicyMixture& mix, const Policy& vic, const EvalOptions& o) {
  require(o.episodes >= 1, "episodes must be at least 1");
  RolloutOptions ro;
  ro.horizon = o.horizon;
  ro.feed_imitator = o.imitator != nullptr;
  ro.imitator_input = o.imitator_input;
  ro.adv_mask = o.blind_mask;
  std::vector<Outcome> outcomes(o.episodes);
  parallel_for(o.episodes, o.workers, [&](int i) {
    Rng rng(derive_seed(o.seed, kEvalStream, static_cast<std::uint64_t>(i)));
    outcomes[i] = rollout(g, mix, vic, o.imitator, rng, ro).outcome;
  });
  std::uint64_t extra = fingerprint(mix.secondary) ^ fingerprint(std::vector<double>{mix.p_primary});
  return detail::tally(outcomes, detail::eval_fingerprint(g, mix.primary, vic, o, extra));
}

struct SweepConfig {
  int lemma2_pairs = 200;
  int theorem2_samples = 100;
  std::vector<double> epsilons{0.005, 0.02, 0.08};
  int theorem1_pairs = 20;
  int interpolation_points = 11;
  bool tight_pinsker = false;
  int workers = 1;
};

struct BoundSweep {
  std::vector<BoundReport> lemma2;
  std::vector<BoundReport> theorem1;
  std::vector<BoundReport> theorem2;
  std::vector<BoundReport> interpolation;  // logged, not asserted

  std::vector<BoundReport> all() const {
    std::vector<BoundReport> out = lemma2;
    out.insert(out.end(), theorem1.begin(), theorem1.end());
    out.insert(out.end(), theorem2.begin(), theorem2.end());
    return out;
  }
  int violations() const {
    int n = 0;
    for (const auto& r : all()) n += r.passed ? 0 : 1;
    return n;
  }
};

namespace detail {

inline PolicyTable random_table(const MarkovGame& g, int actions, Rng& rng, double scale,
                                const PolicyTable* center = nullptr) {
  PolicyTable t(g.num_states);
  std::vector<double> z(actions);
  for (int s = 0; s < g.num_states; ++s) {
    if (g.absorbing(s)) continue;
    for (int k = 0; k < actions; ++k)
      z[k] = (center ? safe_log((*center)[s][k]) : 0.0) + scale * standard_normal(rng);
    t[s] = softmax(z);
  }
  return t;
}

inline PolicyTable interpolate(const MarkovGame& g, const PolicyTable& a, const PolicyTable& b, double t) {
  PolicyTable out(g.num_states);
  for (int s = 0; s < g.num_states; ++s) {
    if (g.absorbing(s)) continue;
    std::vector<double> z(a[s].size());
    for (std::size_t k = 0; k < z.size(); ++k) z[k] = (1.0 - t) * safe_log(a[s][k]) + t * safe_log(b[s][k]);
    out[s] = softmax(z);
  }
  return out;
}

// phi with lambda = 0, read off the exact objectives: imitator log D term,
// expert log(1 - D) term and -V_adv under the imitator.
inline double enhanced_phi(const MarkovGame& g, const PolicyTable& adv, const PolicyTable& imit,
                           const PolicyTable& vic, const Discriminator& d) {
  return exact_objective(g, adv, imit, eta_objective(g, d, true, 0.0)) +
         exact_objective(g, adv, vic, expert_objective(g, d));
}

}  // namespace detail

// Random-policy sweeps of the perturbation bounds. Every pair draws from its
// own seeded stream, so results do not depend on the worker count.
inline BoundSweep verify_bounds(const MarkovGame& g, const SweepConfig& sw, std::uint64_t seed) {
  require(sw.lemma2_pairs >= 0 && sw.theorem2_samples >= 0 && sw.theorem1_pairs >= 0, "sweep sizes must be >= 0");
  BoundSweep out;
  const int na = g.num_adv_actions, nv = g.num_vic_actions;

  out.lemma2.resize(2 * static_cast<std::size_t>(sw.lemma2_pairs));
  parallel_for(sw.lemma2_pairs, sw.workers, [&](int i) {
    Rng rng(derive_seed(seed, 21, static_cast<std::uint64_t>(i)));
    const auto vic = detail::random_table(g, nv, rng, 1.0);
    const auto a = detail::random_table(g, na, rng, 1.0);
    // alternate far pairs with near ones so both regimes are covered
    const auto b = i % 2 == 0 ? detail::random_table(g, na, rng, 1.0)
                              : detail::random_table(g, na, rng, 0.05 * (1 + i % 7), &a);
    auto r = lemma2_check(g, vic, a, b, sw.tight_pinsker);
    r.kl.context["pair"] = i;
    r.lipschitz.context["pair"] = i;
    out.lemma2[2 * i] = std::move(r.kl);
    out.lemma2[2 * i + 1] = std::move(r.lipschitz);
  });

  // Constant arithmetic on a grid, plus the perturbation step behind the
  // guarantee: |phi(.|adv_b) - phi(.|adv_a)| <= K max_s sqrt(KL(adv_a || adv_b))
  // for a fixed imitator and discriminator.
  double r_max = 0.0;
  for (double r : g.adv_reward) r_max = std::max(r_max, std::abs(r));
  for (double gamma : {0.0, 0.5, 0.9, 0.95, 0.99}) {
    if (sw.theorem1_pairs == 0) break;
    for (auto [lo, hi] : {std::pair{0.01, 0.99}, std::pair{0.1, 0.9}, std::pair{0.2, 0.6}}) {
      const double k = theorem1_constant(gamma, 1.0, lo, hi, sw.tight_pinsker);
      const double literal = gamma * pinsker_constant(sw.tight_pinsker) * (1.0 - std::log(lo - lo * hi)) /
                             ((1.0 - gamma) * (1.0 - gamma));
      out.theorem1.push_back(make_report("theorem1_constant", std::abs(k - literal), 1e-12 * std::max(1.0, literal),
                                         {{"gamma", gamma}, {"d_lo", lo}, {"d_hi", hi}, {"K", k}}));
    }
  }
  std::vector<BoundReport> perturb(sw.theorem1_pairs);
  parallel_for(sw.theorem1_pairs, sw.workers, [&](int i) {
    Rng rng(derive_seed(seed, 22, static_cast<std::uint64_t>(i)));
    const auto vic = detail::random_table(g, nv, rng, 1.0);
    const auto imit = detail::random_table(g, nv, rng, 1.0);
    const auto a = detail::random_table(g, na, rng, 1.0);
    const auto b = detail::random_table(g, na, rng, 0.1 * (1 + i % 5), &a);
    Discriminator d;
    d.num_states = g.num_states;
    d.num_actions = nv;
    d.feature_dim = g.feature_dim;
    d.params.resize(static_cast<std::size_t>(g.num_states) * nv);
    for (auto& w : d.params) w = 3.0 * standard_normal(rng);
    const double k = theorem1_constant(g.discount, r_max, d.d_lo, d.d_hi, sw.tight_pinsker);
    const double measured = std::abs(detail::enhanced_phi(g, b, imit, vic, d) - detail::enhanced_phi(g, a, imit, vic, d));
    const double kl = max_state_kl(g, a, b);
    perturb[i] = make_report("theorem1_perturbation", measured, k * std::sqrt(kl),
                             {{"pair", i}, {"K", k}, {"max_kl", kl}, {"clamp", {d.d_lo, d.d_hi}}, {"lambda", 0.0}});
  });
  out.theorem1.insert(out.theorem1.end(), perturb.begin(), perturb.end());

  for (std::size_t e = 0; e < sw.epsilons.size() && sw.theorem2_samples > 0; ++e) {
    Rng rng(derive_seed(seed, 23, e));
    const auto vic0 = detail::random_table(g, nv, rng, 1.0);
    auto r = theorem2_probe(g, vic0, sw.epsilons[e], sw.theorem2_samples, rng, sw.tight_pinsker);
    out.theorem2.push_back(std::move(r.report));
    out.theorem2.push_back(std::move(r.per_sample));
  }

  if (sw.interpolation_points >= 2) {
    Rng rng(derive_seed(seed, 24));
    const auto vic = detail::random_table(g, nv, rng, 1.0);
    const auto a = detail::random_table(g, na, rng, 1.0);
    const auto b = detail::random_table(g, na, rng, 1.0);
    for (int k = 0; k < sw.interpolation_points; ++k) {
      const double t = static_cast<double>(k) / (sw.interpolation_points - 1);
      auto r = lemma2_check(g, vic, a, detail::interpolate(g, a, b, t), sw.tight_pinsker).kl;
      r.check_name = "lemma2_interpolation";
      r.context["t"] = t;
      out.interpolation.push_back(std::move(r));
    }
  }
  return out;
}

inline std::string summary_table(const BoundSweep& s) {
  std::ostringstream os;
  os << "check\tcount\tpassed\tmin_margin\n";
  auto row = [&](const std::string& name, const std::vector<BoundReport>& rs) {
    std::vector<const BoundReport*> sel;
    for (const auto& r : rs)
      if (r.check_name == name) sel.push_back(&r);
    if (sel.empty()) return;
    int passed = 0;
    double m = std::numeric_limits<double>::infinity();
    for (const auto* r : sel) {
      passed += r->passed ? 1 : 0;
      if (!std::isnan(r->margin)) m = std::min(m, r->margin);
    }
    os << name << '\t' << sel.size() << '\t' << passed << '\t' << format_double(m) << '\n';
  };
  row("lemma2_kl", s.lemma2);
  row("lemma2_lipschitz", s.lemma2);
  row("theorem1_constant", s.theorem1);
  row("theorem1_perturbation", s.theorem1);
  row("theorem2", s.theorem2);
  row("theorem2_per_sample", s.theorem2);
  return os.str();
}

inline std::string to_jsonl(const std::vector<BoundReport>& rs) {
  std::string out;
  for (const auto& r : rs) out += nlohmann::json(r).dump() + "\n";
  return out;
}

// lemma2/theorem1/theorem2 files, the combined bounds.jsonl, the
// interpolation trace and a tab-separated summary.
inline void write_bound_reports(const BoundSweep& s, const std::filesystem::path& dir) {
  write_text(dir / "lemma2.jsonl", to_jsonl(s.lemma2));
  write_text(dir / "theorem1.jsonl", to_jsonl(s.theorem1));
  write_text(dir / "theorem2.jsonl", to_jsonl(s.theorem2));
  write_text(dir / "bounds.jsonl", to_jsonl(s.all()));
  write_text(dir / "interpolation.jsonl", to_jsonl(s.interpolation));
  write_text(dir / "summary.tsv", summary_table(s));
}

// ---- plots ----

struct MetricsTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

inline MetricsTable parse_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  MetricsTable t;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path + ":1: missing header");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.columns.push_back(cell);
  }
  if (t.columns.size() < 2 || t.columns[0] != "step") throw ValidationError(path + ":1: header must start with step");
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      if (cell == "nan") {
        row.push_back(std::nan(""));
        continue;
      }
      std::size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != cell.size())
        throw ValidationError(path + ":" + std::to_string(lineno) + ": malformed value '" + cell + "'");
      row.push_back(x);
    }
    if (row.size() != t.columns.size())
      throw ValidationError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(t.columns.size()) +
                            " fields, got " + std::to_string(row.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace detail {

inline std::string num6(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

inline std::string svg_plot(const std::string& title, const std::vector<double>& xs, const std::vector<double>& ys,
                            int window) {
  constexpr double W = 640, H = 400, L = 70, R = 20, T = 40, B = 50;
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (std::isfinite(xs[i]) && std::isfinite(ys[i])) pts.emplace_back(xs[i], ys[i]);
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!pts.empty()) {
    x0 = x1 = pts[0].first;
    y0 = y1 = pts[0].second;
    for (auto [x, y] : pts) {
      x0 = std::min(x0, x), x1 = std::max(x1, x);
      y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
    if (x1 == x0) x0 -= 0.5, x1 += 0.5;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 400\" width=\"640\" height=\"400\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"400\" fill=\"white\"/>\n";
  os << "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">" << title
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  auto label = [&](double x, double y, const std::string& anchor, const std::string& text) {
    os << "<text x=\"" << num6(x) << "\" y=\"" << num6(y) << "\" text-anchor=\"" << anchor
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << text << "</text>\n";
  };
  label(L, H - B + 16, "start", num6(x0));
  label(W - R, H - B + 16, "end", num6(x1));
  label(L - 6, H - B, "end", num6(y0));
  label(L - 6, T + 4, "end", num6(y1));
  label((L + W - R) / 2, H - 12, "middle", "step");
  if (pts.size() == 1) {
    os << "<circle cx=\"" << num6(px(pts[0].first)) << "\" cy=\"" << num6(py(pts[0].second))
       << "\" r=\"3\" fill=\"steelblue\"/>\n";
  } else if (pts.size() > 1) {
    auto polyline = [&](const std::vector<std::pair<double, double>>& p, const std::string& style) {
      os << "<polyline fill=\"none\" " << style << " points=\"";
      for (std::size_t i = 0; i < p.size(); ++i)
        os << (i ? " " : "") << num6(px(p[i].first)) << "," << num6(py(p[i].second));
      os << "\"/>\n";
    };
    polyline(pts, "stroke=\"steelblue\" stroke-width=\"1\"");
    std::vector<std::pair<double, double>> smooth;
    double acc = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      acc += pts[i].second;
      if (i >= static_cast<std::size_t>(window)) acc -= pts[i - window].second;
      const double n = static_cast<double>(std::min<std::size_t>(i + 1, window));
      smooth.emplace_back(pts[i].first, acc / n);
    }
    polyline(smooth, "stroke=\"darkorange\" stroke-width=\"2\"");
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace detail

// One SVG per metric column with a rolling-mean overlay. Returns the files.
inline std::vector<std::filesystem::path> emit_plots(const std::string& metrics_csv, const std::filesystem::path& out_dir,
                                                     int window = 5) {
  require(window >= 1, "rolling window must be positive");
  const auto t = parse_metrics_csv(metrics_csv);
  std::vector<double> xs;
  for (const auto& r : t.rows) xs.push_back(r[0]);
  std::vector<std::filesystem::path> files;
  for (std::size_t c = 1; c < t.columns.size(); ++c) {
    std::vector<double> ys;
    for (const auto& r : t.rows) ys.push_back(r[c]);
    const auto path = out_dir / (t.columns[c] + ".svg");
    write_text(path, detail::svg_plot(t.columns[c], xs, ys, window));
    files.push_back(path);
  }
  return files;
}

}  // namespace advpol

#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "advpol/errors.hpp"
#include "advpol/io.hpp"
#include "advpol/log.hpp"
#include "advpol/report.hpp"
#include "advpol/trainer.hpp"

namespace advpol::cli {

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2 };

// Flags shared by the subcommands that build a TrainConfig.
struct CommonFlags {
  std::string config;
  std::string out = "advpol_out";
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> env;
  std::optional<int> width, height, length, horizon;
  std::optional<double> slip, gamma;
  std::optional<long> steps;
  std::optional<int> batch_size;

  void add(CLI::App* app) {
    app->add_option("--config", config, "JSON config file");
    app->add_option("--out", out, "output directory")->capture_default_str();
    app->add_option("--seed", seed, "base seed");
    app->add_option("--workers", workers, "rollout threads (default: machine cores)");
    app->add_option("--env", env, "markov_rps, grid_pass or push_duel");
    app->add_option("--width", width, "grid_pass width");
    app->add_option("--height", height, "grid_pass height");
    app->add_option("--length", length, "push_duel track length");
    app->add_option("--horizon", horizon, "rollout step budget (0 = environment default)");
    app->add_option("--slip", slip, "grid_pass slip probability");
    app->add_option("--gamma", gamma, "discount");
    app->add_option("--steps", steps, "total environment steps");
    app->add_option("--batch-size", batch_size, "steps per collection cycle");
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!config.empty()) c = read_json(config).get<TrainConfig>();
    if (seed) c.seed = *seed;
    if (workers) c.workers = *workers;
    if (env) c.env.name = *env;
    if (width) c.env.width = *width;
    if (height) c.env.height = *height;
    if (length) c.env.length = *length;
    if (horizon) c.env.horizon = *horizon;
    if (slip) c.env.slip = *slip;
    if (gamma) c.env.discount = *gamma;
    if (steps) c.total_steps = *steps;
    if (batch_size) c.batch_size = *batch_size;
    c.output_dir = out;
    return c;
  }
};

inline MarkovGame game_for(const std::optional<std::string>& env, const std::string& config,
                           const nlohmann::json& fallback, std::optional<double> gamma) {
  EnvSpec spec;
  if (!config.empty())
    spec = read_json(config).get<TrainConfig>().env;
  else if (fallback.is_object() && fallback.contains("env"))
    spec = fallback.at("env").get<EnvSpec>();
  if (env) spec.name = *env;
  if (gamma) spec.discount = *gamma;
  return make_env(spec);
}

// Hides the victim's position when the environment has that block, the
// whole state block otherwise.
inline ObservationMask default_blind_mask(const ObsLayout& layout) {
  if (layout.block("victim_position") != nullptr) return block_mask(layout, "victim_position");
  ObservationMask m;
  for (int i = 0; i < layout.state_dim; ++i) m.zeroed.push_back(i);
  return m;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Adversarial policy imitation lab"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  auto* mk = app.add_subcommand("make-victim", "pretrain a fixed victim by self-play policy gradient");
  CommonFlags mk_flags;
  mk_flags.add(mk);
  std::optional<int> victim_action;
  mk->add_option("--victim-action", victim_action, "write a constant victim playing this action");

  auto* train = app.add_subcommand("train", "train an adversary against a fixed victim");
  CommonFlags tr_flags;
  tr_flags.add(train);
  std::optional<std::string> tr_victim;
  std::optional<bool> enhanced;
  bool tr_no_imit = false;
  std::optional<std::string> resume_from;
  train->add_option("--victim", tr_victim, "victim policy checkpoint");
  train->add_flag("--enhanced,!--no-enhanced", enhanced, "E-APIL (default) or plain APIL");
  train->add_flag("--no-imitator", tr_no_imit, "ablation: no imitator");
  train->add_option("--resume", resume_from, "continue from a ckpt_<step>.json");

  auto* retrain = app.add_subcommand("retrain-victim", "retrain the victim against a mixed adversary");
  CommonFlags rt_flags;
  rt_flags.add(retrain);
  std::optional<std::string> rt_victim, rt_adv, rt_imit, rt_base;
  std::optional<double> mix_p;
  retrain->add_option("--victim", rt_victim, "victim policy checkpoint");
  retrain->add_option("--adv", rt_adv, "trained adversary checkpoint");
  retrain->add_option("--imitator", rt_imit, "imitator checkpoint feeding the adversary");
  retrain->add_option("--baseline", rt_base, "baseline adversary checkpoint");
  retrain->add_option("--mix-p", mix_p, "probability of the new adversary per episode");

  auto* eval = app.add_subcommand("evaluate", "win/tie evaluation without learning");
  std::string ev_out = "advpol_out", ev_config;
  std::string ev_adv, ev_vic;
  std::optional<std::string> ev_imit, ev_env;
  std::optional<double> ev_gamma;
  int episodes = 1000, ev_workers = 0;
  std::uint64_t ev_seed = 0;
  bool blind = false, ev_no_imit = false;
  eval->add_option("--adv", ev_adv, "adversary checkpoint")->required();
  eval->add_option("--vic", ev_vic, "victim checkpoint")->required();
  eval->add_option("--imitator", ev_imit, "imitator checkpoint");
  eval->add_option("--episodes", episodes, "episodes")->capture_default_str();
  eval->add_option("--seed", ev_seed, "base seed")->capture_default_str();
  eval->add_option("--workers", ev_workers, "threads (0 = machine cores)");
  eval->add_option("--env", ev_env, "environment (default: read from the adversary checkpoint)");
  eval->add_option("--gamma", ev_gamma, "discount");
  eval->add_option("--config", ev_config, "JSON config providing the environment");
  eval->add_option("--out", ev_out, "output directory")->capture_default_str();
  eval->add_flag("--blind", blind, "hide the victim's features from the adversary");
  eval->add_flag("--no-imitator", ev_no_imit, "do not feed imitator predictions");

  auto* vb = app.add_subcommand("verify-bounds", "oracle sweeps of the perturbation bounds");
  std::string vb_out = "advpol_out";
  std::string vb_env = "markov_rps";
  std::optional<double> vb_gamma;
  std::uint64_t vb_seed = 0;
  SweepConfig sweep;
  int vb_workers = 0;
  vb->add_option("--env", vb_env, "environment")->capture_default_str();
  vb->add_option("--gamma", vb_gamma, "discount");
  vb->add_option("--seed", vb_seed, "base seed")->capture_default_str();
  vb->add_option("--out", vb_out, "output directory")->capture_default_str();
  vb->add_option("--pairs", sweep.lemma2_pairs, "random adversary pairs")->capture_default_str();
  vb->add_option("--samples", sweep.theorem2_samples, "sampled victims per epsilon")->capture_default_str();
  vb->add_option("--epsilons", sweep.epsilons, "KL radii")->capture_default_str();
  vb->add_option("--workers", vb_workers, "threads (0 = machine cores)");
  vb->add_flag("--tight", sweep.tight_pinsker, "use sqrt(2) instead of sqrt(2 ln 2)");

  auto* plot = app.add_subcommand("plot", "SVG learning curves from metrics.csv");
  std::string metrics, plot_out = "advpol_out";
  int window = 5;
  plot->add_option("--metrics", metrics, "metrics CSV")->required();
  plot->add_option("--out", plot_out, "output directory")->capture_default_str();
  plot->add_option("--window", window, "rolling-mean window")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kValidation;
  }

  try {
    if (mk->parsed()) {
      auto c = mk_flags.resolve();
      if (victim_action) c.victim_action = *victim_action;
      log::info("config ", nlohmann::json(c).dump());
      const auto r = make_victim(c);
      std::cout << "victim written to " << (std::filesystem::path(c.output_dir) / "victim.json").string() << "\n";
      return kOk;
    }
    if (train->parsed()) {
      if (resume_from) {
        const auto r = resume(*resume_from, tr_flags.out);
        std::cout << "resumed to step " << r.state.step << "\n";
        return kOk;
      }
      auto c = tr_flags.resolve();
      if (tr_victim) c.victim_path = *tr_victim;
      if (enhanced) c.enhanced = *enhanced;
      if (tr_no_imit) c.mode = TrainMode::ablation_no_imitator;
      log::info("config ", nlohmann::json(c).dump());
      const auto r = train_apil(c);
      std::cout << "trained to step " << r.state.step;
      if (r.report) std::cout << ", win rate " << r.report->win_rate;
      std::cout << "\n";
      return kOk;
    }
    if (retrain->parsed()) {
      auto c = rt_flags.resolve();
      if (rt_victim) c.victim_path = *rt_victim;
      if (rt_adv) c.adversary_path = *rt_adv;
      if (rt_imit) c.imitator_path = *rt_imit;
      if (rt_base) c.baseline_path = *rt_base;
      if (mix_p) c.mix_p = *mix_p;
      log::info("config ", nlohmann::json(c).dump());
      const auto r = retrain_victim(c);
      // reports are from the adversary's side; the victim's win+tie is 1 - win_rate
      std::cout << "victim win+tie vs new adversary: " << 1.0 - r.before_new.win_rate << " -> "
                << 1.0 - r.after_new.win_rate << "\nvictim win+tie vs baseline adversary: "
                << 1.0 - r.before_baseline.win_rate << " -> " << 1.0 - r.after_baseline.win_rate << "\n";
      return kOk;
    }
    if (eval->parsed()) {
      const auto adv_json = read_json(ev_adv);
      const auto adv = adversary_from_json(adv_json);
      const auto vic = policy_from_json(read_json(ev_vic));
      const auto g = game_for(ev_env, ev_config, adv_json, ev_gamma);
      std::optional<ImitatorState> imit;
      if (ev_imit && !ev_no_imit) imit = imitator_from_json(read_json(*ev_imit));
      check_layout(vic, state_layout(g), g.num_vic_actions, "victim");
      require(adv.policy.action_count() == g.num_adv_actions, "adversary action count mismatch");
      ObservationMask mask;
      if (blind) mask = default_blind_mask(adv.policy.layout());
      EvalOptions eo;
      eo.episodes = episodes;
      eo.imitator = imit ? &imit->policy : nullptr;
      eo.imitator_input = adv.imitator_input;
      eo.blind_mask = blind ? &mask : nullptr;
      eo.seed = ev_seed;
      eo.workers = ev_workers > 0 ? ev_workers : default_workers();
      const nlohmann::json resolved = {{"adv", ev_adv}, {"vic", ev_vic}, {"imitator", ev_imit ? *ev_imit : ""},
                                       {"episodes", episodes}, {"seed", ev_seed}, {"blind", blind},
                                       {"no_imitator", ev_no_imit}, {"env", g.name}, {"gamma", g.discount}};
      log::info("config ", resolved.dump());
      const auto r = evaluate(g, adv.policy, vic, eo);
      const std::filesystem::path out = ev_out;
      write_json(out / "config.json", resolved);
      write_json(out / "report.json", r);
      std::cout << nlohmann::json(r).dump() << "\n";
      return kOk;
    }
    if (vb->parsed()) {
      EnvSpec spec;
      spec.name = vb_env;
      if (vb_gamma) spec.discount = *vb_gamma;
      const auto g = make_env(spec);
      sweep.workers = vb_workers > 0 ? vb_workers : default_workers();
      const nlohmann::json resolved = {{"env", spec},         {"seed", vb_seed},
                                       {"pairs", sweep.lemma2_pairs}, {"samples", sweep.theorem2_samples},
                                       {"epsilons", sweep.epsilons},  {"tight", sweep.tight_pinsker}};
      log::info("config ", resolved.dump());
      const auto s = verify_bounds(g, sweep, vb_seed);
      const std::filesystem::path out = vb_out;
      write_json(out / "config.json", resolved);
      write_bound_reports(s, out);
      std::cout << summary_table(s);
      if (s.violations() > 0) log::warn(s.violations(), " bound checks failed");
      return kOk;
    }
    if (plot->parsed()) {
      const std::filesystem::path out = plot_out;
      write_json(out / "config.json", {{"metrics", metrics}, {"window", window}});
      for (const auto& f : emit_plots(metrics, out, window)) std::cout << f.string() << "\n";
      return kOk;
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kRuntime;
  }
  return kValidation;
}

}  // namespace advpol::cli

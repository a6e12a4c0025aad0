#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "advpol/adversary.hpp"
#include "advpol/errors.hpp"
#include "advpol/game.hpp"
#include "advpol/imitator.hpp"
#include "advpol/io.hpp"
#include "advpol/log.hpp"
#include "advpol/optim.hpp"
#include "advpol/oracle.hpp"
#include "advpol/parallel.hpp"
#include "advpol/policy.hpp"
#include "advpol/report.hpp"
#include "advpol/rollout.hpp"
#include "advpol/update.hpp"

namespace advpol {

enum class TrainMode { train_adversary, retrain_victim, ablation_no_imitator };

inline std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::retrain_victim: return "retrain_victim";
    case TrainMode::ablation_no_imitator: return "ablation_no_imitator";
    default: return "train_adversary";
  }
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "train_adversary") return TrainMode::train_adversary;
  if (s == "retrain_victim") return TrainMode::retrain_victim;
  if (s == "ablation_no_imitator") return TrainMode::ablation_no_imitator;
  throw ValidationError("unknown mode '" + s + "' (expected train_adversary, retrain_victim or ablation_no_imitator)");
}

struct LearningRates {
  double adversary = 3e-3;
  double imitator = 3e-3;
  double discriminator = 1e-2;
  double victim = 3e-3;
};

struct TrainConfig {
  EnvSpec env;
  TrainMode mode = TrainMode::train_adversary;
  bool enhanced = true;
  long total_steps = 500000;
  int batch_size = 2048;
  int inner_epochs = 4;
  int warmup_cycles = 5;
  LearningRates lr;
  double entropy_coeff = 0.01;  // imitator lambda
  double adv_entropy_coeff = 0.0;
  double clamp_lo = 0.01;
  double clamp_hi = 0.99;
  double clip_eps = 0.2;
  double mix_p = 0.5;
  MixGranularity mix_granularity = MixGranularity::episode;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::string adversary_kind = "mlp";
  std::string imitator_kind = "tabular";
  std::string victim_kind = "tabular";
  int hidden = 32;
  ImitatorInput imitator_input = ImitatorInput::sampled;
  UpdateMethod method = UpdateMethod::ppo_clip;
  DiscArch disc_arch = DiscArch::linear;
  DiscLoss disc_loss = DiscLoss::logistic;
  bool disc_discount = true;
  bool pg_discount = true;
  ImitatorReturn imitator_return = ImitatorReturn::step;
  std::string blind;  // adversary feature block hidden during training
  long checkpoint_every = 0;
  int eval_episodes = 1000;
  bool verify_on_finish = false;
  int workers = 0;  // 0 = machine cores
  int victim_action = -1;  // make-victim: >= 0 writes a constant victim
  std::string victim_path;
  std::string adversary_path;
  std::string imitator_path;
  std::string baseline_path;
};

namespace detail {

inline std::string_view to_string(MixGranularity m) { return m == MixGranularity::step ? "step" : "episode"; }

inline MixGranularity mix_granularity_from_string(const std::string& s) {
  if (s == "episode") return MixGranularity::episode;
  if (s == "step") return MixGranularity::step;
  throw ValidationError("unknown mix granularity '" + s + "' (expected episode or step)");
}

inline ImitatorInput imitator_input_from_string(const std::string& s) {
  if (s == "sampled") return ImitatorInput::sampled;
  if (s == "distribution") return ImitatorInput::distribution;
  throw ValidationError("unknown imitator input '" + s + "' (expected sampled or distribution)");
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"env", c.env},
       {"mode", to_string(c.mode)},
       {"enhanced", c.enhanced},
       {"total_steps", c.total_steps},
       {"batch_size", c.batch_size},
       {"inner_epochs", c.inner_epochs},
       {"warmup_cycles", c.warmup_cycles},
       {"lr", {{"adversary", c.lr.adversary}, {"imitator", c.lr.imitator},
               {"discriminator", c.lr.discriminator}, {"victim", c.lr.victim}}},
       {"entropy_coeff", c.entropy_coeff},
       {"adv_entropy_coeff", c.adv_entropy_coeff},
       {"clamp", {c.clamp_lo, c.clamp_hi}},
       {"clip_eps", c.clip_eps},
       {"mix_p", c.mix_p},
       {"mix_granularity", detail::to_string(c.mix_granularity)},
       {"seed", c.seed},
       {"output_dir", c.output_dir},
       {"adversary_kind", c.adversary_kind},
       {"imitator_kind", c.imitator_kind},
       {"victim_kind", c.victim_kind},
       {"hidden", c.hidden},
       {"imitator_input", c.imitator_input == ImitatorInput::distribution ? "distribution" : "sampled"},
       {"method", to_string(c.method)},
       {"disc_arch", to_string(c.disc_arch)},
       {"disc_loss", to_string(c.disc_loss)},
       {"disc_discount", c.disc_discount},
       {"pg_discount", c.pg_discount},
       {"imitator_return", to_string(c.imitator_return)},
       {"blind", c.blind},
       {"checkpoint_every", c.checkpoint_every},
       {"eval_episodes", c.eval_episodes},
       {"verify_on_finish", c.verify_on_finish},
       {"workers", c.workers},
       {"victim_action", c.victim_action},
       {"victim_path", c.victim_path},
       {"adversary_path", c.adversary_path},
       {"imitator_path", c.imitator_path},
       {"baseline_path", c.baseline_path}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  static const std::set<std::string> known = {
      "env", "mode", "enhanced", "total_steps", "batch_size", "inner_epochs", "warmup_cycles", "lr",
      "entropy_coeff", "adv_entropy_coeff", "clamp", "clip_eps", "mix_p", "mix_granularity", "seed",
      "output_dir", "adversary_kind", "imitator_kind", "victim_kind", "hidden", "imitator_input", "method",
      "disc_arch", "disc_loss", "disc_discount", "pg_discount", "imitator_return", "blind", "checkpoint_every",
      "eval_episodes", "verify_on_finish", "workers", "victim_action", "victim_path", "adversary_path",
      "imitator_path", "baseline_path"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ValidationError("unknown config key '" + key + "'");
  try {
    if (j.contains("env")) c.env = j.at("env").get<EnvSpec>();
    if (j.contains("mode")) c.mode = train_mode_from_string(j.at("mode").get<std::string>());
    c.enhanced = j.value("enhanced", c.enhanced);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.inner_epochs = j.value("inner_epochs", c.inner_epochs);
    c.warmup_cycles = j.value("warmup_cycles", c.warmup_cycles);
    if (j.contains("lr")) {
      const auto& l = j.at("lr");
      c.lr.adversary = l.value("adversary", c.lr.adversary);
      c.lr.imitator = l.value("imitator", c.lr.imitator);
      c.lr.discriminator = l.value("discriminator", c.lr.discriminator);
      c.lr.victim = l.value("victim", c.lr.victim);
    }
    c.entropy_coeff = j.value("entropy_coeff", c.entropy_coeff);
    c.adv_entropy_coeff = j.value("adv_entropy_coeff", c.adv_entropy_coeff);
    if (j.contains("clamp")) {
      c.clamp_lo = j.at("clamp").at(0).get<double>();
      c.clamp_hi = j.at("clamp").at(1).get<double>();
    }
    c.clip_eps = j.value("clip_eps", c.clip_eps);
    c.mix_p = j.value("mix_p", c.mix_p);
    if (j.contains("mix_granularity"))
      c.mix_granularity = detail::mix_granularity_from_string(j.at("mix_granularity").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.adversary_kind = j.value("adversary_kind", c.adversary_kind);
    c.imitator_kind = j.value("imitator_kind", c.imitator_kind);
    c.victim_kind = j.value("victim_kind", c.victim_kind);
    c.hidden = j.value("hidden", c.hidden);
    if (j.contains("imitator_input"))
      c.imitator_input = detail::imitator_input_from_string(j.at("imitator_input").get<std::string>());
    if (j.contains("method")) c.method = update_method_from_string(j.at("method").get<std::string>());
    if (j.contains("disc_arch")) c.disc_arch = disc_arch_from_string(j.at("disc_arch").get<std::string>());
    if (j.contains("disc_loss")) c.disc_loss = disc_loss_from_string(j.at("disc_loss").get<std::string>());
    c.disc_discount = j.value("disc_discount", c.disc_discount);
    c.pg_discount = j.value("pg_discount", c.pg_discount);
    if (j.contains("imitator_return"))
      c.imitator_return = imitator_return_from_string(j.at("imitator_return").get<std::string>());
    c.blind = j.value("blind", c.blind);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
    c.verify_on_finish = j.value("verify_on_finish", c.verify_on_finish);
    c.workers = j.value("workers", c.workers);
    c.victim_action = j.value("victim_action", c.victim_action);
    c.victim_path = j.value("victim_path", c.victim_path);
    c.adversary_path = j.value("adversary_path", c.adversary_path);
    c.imitator_path = j.value("imitator_path", c.imitator_path);
    c.baseline_path = j.value("baseline_path", c.baseline_path);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed config: ") + e.what());
  }
}

inline void validate(const TrainConfig& c) {
  require(c.total_steps >= 0, "total_steps must be >= 0");
  require(c.batch_size > 0, "batch_size must be positive");
  require(c.inner_epochs > 0, "inner_epochs must be positive");
  require(c.warmup_cycles >= 0, "warmup_cycles must be >= 0");
  require(c.lr.adversary > 0 && c.lr.imitator > 0 && c.lr.discriminator > 0 && c.lr.victim > 0,
          "learning rates must be positive");
  require(c.entropy_coeff >= 0.0 && c.adv_entropy_coeff >= 0.0, "entropy coefficients must be >= 0");
  require(c.clamp_lo > 0.0 && c.clamp_lo <= c.clamp_hi && c.clamp_hi < 1.0, "clamp must satisfy 0 < lo <= hi < 1");
  require(c.clip_eps > 0.0, "clip_eps must be positive");
  require(c.mix_p >= 0.0 && c.mix_p <= 1.0, "mix_p must lie in [0, 1]");
  require(c.hidden > 0, "hidden must be positive");
  require(c.checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(c.eval_episodes >= 0, "eval_episodes must be >= 0");
  require(c.workers >= 0, "workers must be >= 0");
  for (const auto* kind : {&c.adversary_kind, &c.imitator_kind, &c.victim_kind})
    require(*kind == "mlp" || *kind == "tabular", "policy kind must be mlp or tabular, got '" + *kind + "'");
}

// ---- metrics ----

inline constexpr const char* kMetricsHeader = "step,win_rate,tie_rate,loss_rate,imitation_gap,adv_objective,eta_mean";

struct MetricsRow {
  long step = 0;
  double win_rate = 0.0;
  double tie_rate = 0.0;
  double loss_rate = 0.0;
  double imitation_gap = 0.0;
  double adv_objective = 0.0;
  double eta_mean = 0.0;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step);
    for (double x : {r.win_rate, r.tie_rate, r.loss_rate, r.imitation_gap, r.adv_objective, r.eta_mean})
      out += "," + format_double(x);
    out += "\n";
  }
  return out;
}

inline nlohmann::json metrics_to_json(const std::vector<MetricsRow>& rows) {
  auto a = nlohmann::json::array();
  for (const auto& r : rows)
    a.push_back({r.step, json_number(r.win_rate), json_number(r.tie_rate), json_number(r.loss_rate),
                 json_number(r.imitation_gap), json_number(r.adv_objective), json_number(r.eta_mean)});
  return a;
}

inline std::vector<MetricsRow> metrics_from_json(const nlohmann::json& a) {
  std::vector<MetricsRow> rows;
  for (const auto& r : a)
    rows.push_back({r.at(0).get<long>(), number_from_json(r.at(1)), number_from_json(r.at(2)),
                    number_from_json(r.at(3)), number_from_json(r.at(4)), number_from_json(r.at(5)),
                    number_from_json(r.at(6))});
  return rows;
}

// ---- buffers ----

// The four buffers of one collection cycle, filled together and cleared
// together after the update phase.
struct BufferSet {
  PolicyBatch adv_replay;
  PolicyBatch imit_replay;
  PairBatch expert_traj;
  PairBatch imit_traj;
  std::size_t capacity = 0;  // steps per cycle

  void clear() {
    adv_replay = {};
    imit_replay = {};
    expert_traj = {};
    imit_traj = {};
  }
  bool empty() const {
    return adv_replay.samples.empty() && imit_replay.samples.empty() && expert_traj.samples.empty() &&
           imit_traj.samples.empty();
  }
};

// Collects whole episodes until at least `steps` transitions. Episodes come
// in fixed-size chunks, each seeded by its index, and surplus episodes of the
// last chunk are dropped, so the result does not depend on `workers`.
template <typename Fn>
std::vector<Trajectory> collect_episodes(long steps, std::uint64_t seed, std::uint64_t stream, int workers, Fn&& fn) {
  constexpr int kChunk = 64;
  std::vector<Trajectory> out;
  long have = 0;
  std::uint64_t next = 0;
  while (have < steps) {
    std::vector<Trajectory> chunk(kChunk);
    parallel_for(kChunk, workers, [&](int i) {
      Rng rng(derive_seed(seed, stream, next + static_cast<std::uint64_t>(i)));
      chunk[i] = fn(rng);
    });
    next += kChunk;
    for (auto& tr : chunk) {
      if (have >= steps) break;
      if (tr.transitions.empty()) throw RuntimeFailure("episode produced no transitions");
      have += static_cast<long>(tr.transitions.size());
      out.push_back(std::move(tr));
    }
  }
  return out;
}

inline long count_steps(const std::vector<Trajectory>& trs) {
  long n = 0;
  for (const auto& tr : trs) n += static_cast<long>(tr.transitions.size());
  return n;
}

// Plain policy-gradient samples on r_vic for the victim seat.
inline PolicyBatch victim_batch(const MarkovGame& g, const Policy& vic, const std::vector<Trajectory>& trs,
                                bool discount_weights) {
  PolicyBatch batch;
  batch.tag = fingerprint(vic);
  batch.normalizer = static_cast<double>(std::max<std::size_t>(trs.size(), 1));
  double total = 0.0;
  for (const auto& tr : trs) {
    const auto ret = returns_to_go(state_reward_credits(g, tr, g.vic_reward), g.discount);
    double w = 1.0;
    for (std::size_t t = 0; t < tr.transitions.size(); ++t) {
      const auto& x = tr.transitions[t];
      PolicySample ps;
      ps.obs = observe(g, vic.layout(), x.state);
      ps.action = x.vic_action;
      ps.advantage = ret[t];
      ps.weight = discount_weights ? w : 1.0;
      ps.logp_old = vic.log_prob(ps.obs, x.vic_action);
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

// ---- state ----

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::uint64_t kInitStream = 0x696e6974ULL;
inline constexpr std::uint64_t kCycleStream = 0x1000000ULL;

// Everything a run needs to continue bit-identically.
struct TrainState {
  TrainConfig config;
  long step = 0;
  int cycle = 0;
  Policy victim;
  AdversaryState adversary;
  ImitatorState imitator;
  std::optional<Policy> baseline;  // retraining only
  Adam adv_opt, imit_opt, disc_opt, vic_opt;
  Policy initial_adversary;
  std::vector<MetricsRow> metrics;
};

inline MarkovGame make_game(const TrainConfig& c) {
  auto g = make_env(c.env);
  if (g.absorbing(g.initial_state)) throw ValidationError("initial state is absorbing");
  return g;
}

inline Policy make_policy(const std::string& kind, const ObsLayout& layout, int actions, int hidden, Rng& rng) {
  return kind == "mlp" ? Policy::mlp(layout, actions, hidden, rng) : Policy::tabular(layout, actions);
}

inline Policy load_policy(const std::string& path, const std::string& what) {
  if (path.empty()) throw ValidationError("missing " + what + " checkpoint");
  return policy_from_json(read_json(path));
}

inline void check_layout(const Policy& p, const ObsLayout& expected, int actions, const std::string& what) {
  if (!(p.layout() == expected) || p.action_count() != actions)
    throw ValidationError(what + " observation layout does not match the environment");
}

// Fresh state around a fixed victim.
inline TrainState init_train_state(const TrainConfig& c, const Policy& victim) {
  validate(c);
  const auto g = make_game(c);
  check_layout(victim, state_layout(g), g.num_vic_actions, "victim");
  Rng rng(derive_seed(c.seed, kInitStream));
  TrainState st;
  st.config = c;
  st.victim = victim;
  st.adversary.policy = make_policy(c.adversary_kind, augmented_layout(g), g.num_adv_actions, c.hidden, rng);
  st.adversary.clip_eps = c.clip_eps;
  st.adversary.use_imitator_input = c.mode != TrainMode::ablation_no_imitator;
  st.adversary.imitator_input = c.imitator_input;
  st.imitator.policy = make_policy(c.imitator_kind, state_layout(g), g.num_vic_actions, c.hidden, rng);
  st.imitator.disc = make_discriminator(g, c.disc_arch, c.clamp_lo, c.clamp_hi, rng, c.hidden);
  st.imitator.disc.loss = c.disc_loss;
  st.imitator.entropy_coeff = c.entropy_coeff;
  st.imitator.enhanced = c.enhanced;
  st.adv_opt.lr = c.lr.adversary;
  st.imit_opt.lr = c.lr.imitator;
  st.disc_opt.lr = c.lr.discriminator;
  st.vic_opt.lr = c.lr.victim;
  st.initial_adversary = st.adversary.policy;
  return st;
}

inline nlohmann::json checkpoint_json(const TrainState& st) {
  nlohmann::json j = {{"schema_version", kCheckpointVersion},
                      {"kind", "train_state"},
                      {"config", st.config},
                      {"step", st.step},
                      {"cycle", st.cycle},
                      {"victim", policy_to_json(st.victim)},
                      {"adversary", adversary_to_json(st.adversary)},
                      {"imitator", imitator_to_json(st.imitator)},
                      {"initial_adversary", policy_to_json(st.initial_adversary)},
                      {"adv_opt", st.adv_opt},
                      {"imit_opt", st.imit_opt},
                      {"disc_opt", st.disc_opt},
                      {"vic_opt", st.vic_opt},
                      {"metrics", metrics_to_json(st.metrics)}};
  if (st.baseline) j["baseline"] = policy_to_json(*st.baseline);
  return j;
}

inline void checkpoint(const TrainState& st, const std::filesystem::path& path) {
  write_text(path, checkpoint_json(st).dump() + "\n");
}

inline TrainState restore_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema_version"))
    throw SchemaError("checkpoint has no schema_version");
  const int v = j.at("schema_version").get<int>();
  if (v != kCheckpointVersion)
    throw SchemaError("checkpoint schema_version " + std::to_string(v) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  try {
    TrainState st;
    st.config = j.at("config").get<TrainConfig>();
    st.step = j.at("step").get<long>();
    st.cycle = j.at("cycle").get<int>();
    st.victim = policy_from_json(j.at("victim"));
    st.adversary = adversary_from_json(j.at("adversary"));
    st.imitator = imitator_from_json(j.at("imitator"));
    st.initial_adversary = policy_from_json(j.at("initial_adversary"));
    st.adv_opt = j.at("adv_opt").get<Adam>();
    st.imit_opt = j.at("imit_opt").get<Adam>();
    st.disc_opt = j.at("disc_opt").get<Adam>();
    st.vic_opt = j.at("vic_opt").get<Adam>();
    st.metrics = metrics_from_json(j.at("metrics"));
    if (j.contains("baseline")) st.baseline = policy_from_json(j.at("baseline"));
    return st;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("corrupt checkpoint: ") + e.what());
  }
}

inline TrainState restore(const std::string& path) { return restore_json(read_json(path)); }

// ---- the loop ----

struct RunContext {
  MarkovGame game;
  ObservationMask mask;
  bool masked = false;
  int workers = 1;

  explicit RunContext(const TrainConfig& c) : game(make_game(c)) {
    workers = c.workers > 0 ? c.workers : default_workers();
    if (!c.blind.empty()) {
      const auto layout = augmented_layout(game);
      if (layout.block(c.blind) == nullptr) throw ValidationError("unknown feature block '" + c.blind + "'");
      mask = block_mask(layout, c.blind);
      masked = true;
    }
  }
  const ObservationMask* adv_mask() const { return masked ? &mask : nullptr; }
};

inline bool imitator_active(const TrainState& st) { return st.config.mode == TrainMode::train_adversary; }

inline bool adversary_sees_imitator(const TrainState& st) {
  return st.config.mode == TrainMode::retrain_victim ||
         (st.config.mode == TrainMode::train_adversary && st.cycle >= st.config.warmup_cycles);
}

inline RolloutOptions rollout_options(const TrainState& st, const RunContext& ctx) {
  RolloutOptions ro;
  ro.feed_imitator = adversary_sees_imitator(st) && st.adversary.use_imitator_input;
  ro.imitator_input = st.adversary.imitator_input;
  ro.adv_mask = ctx.adv_mask();
  return ro;
}

// Exact adversary table the current run induces.
inline PolicyTable effective_adversary(const TrainState& st, const RunContext& ctx) {
  auto ro = rollout_options(st, ctx);
  ro.feed_imitator = st.config.mode != TrainMode::ablation_no_imitator && st.adversary.use_imitator_input;
  return adversary_table(ctx.game, st.adversary.policy,
                         st.config.mode == TrainMode::ablation_no_imitator ? nullptr : &st.imitator.policy, ro);
}

inline MetricsRow cycle_metrics(const TrainState& st, const RunContext& ctx, const std::vector<Trajectory>& trs,
                                double eta_mean) {
  const auto& g = ctx.game;
  MetricsRow row;
  row.step = st.step;
  int w = 0, t = 0, l = 0;
  for (const auto& tr : trs) {
    if (tr.outcome == Outcome::adv_win)
      ++w;
    else if (tr.outcome == Outcome::vic_win)
      ++l;
    else
      ++t;
  }
  const double n = static_cast<double>(trs.size());
  row.win_rate = w / n;
  row.tie_rate = t / n;
  row.loss_rate = l / n;
  const auto adv_t = effective_adversary(st, ctx);
  const auto vic_t = victim_table(g, st.victim);
  // rollouts act at t = 0 .. horizon - 1
  const auto d = occupancy(g, adv_t, vic_t, g.horizon - 1);
  row.imitation_gap = imitation_gap(g, victim_table(g, st.imitator.policy), vic_t, d);
  row.adv_objective = enhanced_objective_value(g, adv_t, vic_t);
  row.eta_mean = eta_mean;
  return row;
}

inline void run_cycle(TrainState& st, const RunContext& ctx, BufferSet& buf) {
  const auto& g = ctx.game;
  const auto& c = st.config;
  const auto ro = rollout_options(st, ctx);
  const bool imit_on = imitator_active(st);
  const bool retrain = c.mode == TrainMode::retrain_victim;
  const bool adv_on = !retrain && (c.mode == TrainMode::ablation_no_imitator || st.cycle >= c.warmup_cycles);
  const std::uint64_t stream = kCycleStream + static_cast<std::uint64_t>(st.cycle);

  const Policy* imit = c.mode == TrainMode::ablation_no_imitator ? nullptr : &st.imitator.policy;
  std::optional<PolicyMixture> mix;
  if (retrain) mix = mix_policies(st.adversary.policy, *st.baseline, c.mix_p, c.mix_granularity);
  const auto trs = collect_episodes(c.batch_size, c.seed, stream, ctx.workers, [&](Rng& rng) {
    return mix ? rollout(g, *mix, st.victim, imit, rng, ro) : rollout(g, st.adversary.policy, st.victim, imit, rng, ro);
  });
  buf.capacity = static_cast<std::size_t>(c.batch_size);

  double eta_mean = std::nan("");
  if (imit_on) {
    buf.expert_traj = expert_pairs(trs);
    buf.imit_traj = imitator_pairs(trs);
  }
  if (adv_on)
    buf.adv_replay = adversary_batch(g, st.adversary, trs, c.enhanced, c.pg_discount, imit, ctx.adv_mask());
  if (retrain) buf.adv_replay = victim_batch(g, st.victim, trs, c.pg_discount);

  const bool single = c.method == UpdateMethod::reinforce;
  for (int e = 0; e < c.inner_epochs; ++e) {
    if (imit_on) {
      st.imitator.disc = disc_update(g, st.imitator.disc, buf.imit_traj, buf.expert_traj, c.lr.discriminator,
                                     &st.disc_opt, c.disc_discount);
      // eta is read once per cycle, after the first discriminator step
      if (e == 0) buf.imit_replay = imitator_batch(g, st.imitator, trs, c.imitator_return, c.pg_discount, &eta_mean);
      if (!single || e == 0)
        st.imitator.policy = imit_policy_update(st.imitator, buf.imit_replay, c.method, c.clip_eps, st.imit_opt);
    }
    if (adv_on && (!single || e == 0))
      st.adversary.policy = adv_update(st.adversary, buf.adv_replay, c.method, st.adv_opt, c.adv_entropy_coeff);
    if (retrain && (!single || e == 0))
      st.victim = policy_step(st.victim, buf.adv_replay, c.method, c.clip_eps, 0.0, st.vic_opt);
  }
  buf.clear();

  st.step += count_steps(trs);
  ++st.cycle;
  st.metrics.push_back(cycle_metrics(st, ctx, trs, eta_mean));
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir, long step) {
  return dir / ("ckpt_" + std::to_string(step) + ".json");
}

// Runs cycles until total_steps (or stop_at, if positive), writing
// checkpoints and the metrics CSV when an output directory is set.
inline void run_training(TrainState& st, long stop_at = -1) {
  const RunContext ctx(st.config);
  const std::filesystem::path out = st.config.output_dir;
  const bool write = !st.config.output_dir.empty();
  const long end = stop_at > 0 ? std::min(stop_at, st.config.total_steps) : st.config.total_steps;
  const auto victim_print = fingerprint(st.victim);
  if (write && st.step == 0 && st.cycle == 0) checkpoint(st, checkpoint_path(out, 0));
  BufferSet buf;
  while (st.step < end) {
    const long before = st.step;
    run_cycle(st, ctx, buf);
    if (!buf.empty()) throw RuntimeFailure("buffers not cleared after update");
    const auto& m = st.metrics.back();
    log::info("cycle ", st.cycle, " step ", st.step, " win ", m.win_rate, " gap ", m.imitation_gap, " objective ",
              m.adv_objective);
    const long every = st.config.checkpoint_every;
    if (write && every > 0 && st.step / every > before / every) {
      checkpoint(st, checkpoint_path(out, st.step));
      write_text(out / "metrics.csv", metrics_csv(st.metrics));
    }
  }
  if (st.config.mode != TrainMode::retrain_victim && fingerprint(st.victim) != victim_print)
    throw RuntimeFailure("victim parameters changed during adversary training");
  if (write) {
    checkpoint(st, checkpoint_path(out, st.step));
    write_text(out / "metrics.csv", metrics_csv(st.metrics));
  }
}

struct TrainResult {
  TrainState state;
  std::optional<WinTieReport> report;
  std::optional<BoundSweep> bounds;
};

inline void write_artifacts(const TrainState& st, const std::filesystem::path& out) {
  write_json(out / "config.json", st.config);
  auto adv = adversary_to_json(st.adversary);
  adv["env"] = st.config.env;
  write_json(out / "adversary.json", adv);
  if (st.config.mode == TrainMode::train_adversary) {
    auto imit = imitator_to_json(st.imitator);
    imit["env"] = st.config.env;
    write_json(out / "imitator.json", imit);
  }
  if (st.config.mode == TrainMode::retrain_victim) write_json(out / "victim.json", policy_to_json(st.victim));
}

// Evaluation and optional bound checks after a finished adversary run.
inline void finish_run(TrainResult& res) {
  auto& st = res.state;
  const RunContext ctx(st.config);
  const auto& g = ctx.game;
  const std::filesystem::path out = st.config.output_dir;
  if (st.config.eval_episodes > 0) {
    EvalOptions eo;
    eo.episodes = st.config.eval_episodes;
    eo.imitator = imitator_active(st) ? &st.imitator.policy : nullptr;
    eo.imitator_input = st.adversary.imitator_input;
    eo.blind_mask = ctx.adv_mask();
    eo.seed = st.config.seed;
    eo.workers = ctx.workers;
    res.report = evaluate(g, st.adversary.policy, st.victim, eo);
    if (!out.empty()) write_json(out / "report.json", *res.report);
  }
  if (st.config.verify_on_finish) {
    BoundSweep s;
    const auto vic_t = victim_table(g, st.victim);
    const auto start = adversary_table(g, st.initial_adversary);
    const auto end = effective_adversary(st, ctx);
    auto l2 = lemma2_check(g, vic_t, start, end);
    s.lemma2 = {l2.kl, l2.lipschitz};
    const double k = theorem1_constant(g.discount, 1.0, st.config.clamp_lo, st.config.clamp_hi);
    s.theorem1.push_back(make_report("theorem1_constant", 0.0, 0.0, {{"K", k}}));
    Rng rng(derive_seed(st.config.seed, 0x626f756eULL));
    auto t2 = theorem2_probe(g, vic_t, 0.02, 20, rng);
    s.theorem2 = {t2.report, t2.per_sample};
    if (!out.empty()) write_bound_reports(s, out);
    res.bounds = std::move(s);
  }
}

inline TrainResult train_apil(const TrainConfig& c, const Policy& victim) {
  require(c.mode != TrainMode::retrain_victim, "use retrain_victim for victim retraining");
  TrainResult res{init_train_state(c, victim), std::nullopt, std::nullopt};
  if (!c.output_dir.empty()) write_json(std::filesystem::path(c.output_dir) / "config.json", c);
  run_training(res.state);
  if (!c.output_dir.empty()) write_artifacts(res.state, c.output_dir);
  finish_run(res);
  return res;
}

inline TrainResult train_apil(const TrainConfig& c) {
  validate(c);
  return train_apil(c, load_policy(c.victim_path, "victim"));
}

// Continues a checkpointed run to its configured total_steps.
inline TrainResult resume(const std::string& checkpoint_file, const std::string& output_dir = {}) {
  TrainResult res{restore(checkpoint_file), std::nullopt, std::nullopt};
  if (!output_dir.empty()) res.state.config.output_dir = output_dir;
  run_training(res.state);
  if (!res.state.config.output_dir.empty()) write_artifacts(res.state, res.state.config.output_dir);
  if (res.state.config.mode != TrainMode::retrain_victim) finish_run(res);
  return res;
}

struct RetrainResult {
  TrainState state;
  WinTieReport before_new, before_baseline, after_new, after_baseline;
};

inline void to_json(nlohmann::json& j, const RetrainResult& r) {
  j = {{"before", {{"new_adversary", r.before_new}, {"baseline_adversary", r.before_baseline}}},
       {"after", {{"new_adversary", r.after_new}, {"baseline_adversary", r.after_baseline}}}};
}

// Trains the victim on r_vic against mix(new adversary, baseline, mix_p). The
// new adversary keeps its frozen imitator's predictions.
inline RetrainResult retrain_victim(const TrainConfig& cfg, const Policy& victim, const AdversaryState& adversary,
                                    const ImitatorState* imitator, const Policy& baseline) {
  TrainConfig c = cfg;
  c.mode = TrainMode::retrain_victim;
  validate(c);
  const auto g = make_game(c);
  check_layout(victim, state_layout(g), g.num_vic_actions, "victim");
  require(adversary.policy.action_count() == g.num_adv_actions && baseline.action_count() == g.num_adv_actions,
          "adversary action count mismatch");
  RetrainResult res;
  auto& st = res.state;
  st.config = c;
  st.victim = victim;
  st.adversary = adversary;
  st.initial_adversary = adversary.policy;
  if (imitator != nullptr) {
    st.imitator = *imitator;
  } else {
    Rng rng(derive_seed(c.seed, kInitStream));
    st.imitator.policy = Policy::tabular(state_layout(g), g.num_vic_actions);
    st.imitator.disc = make_discriminator(g, DiscArch::linear, c.clamp_lo, c.clamp_hi, rng);
    st.adversary.use_imitator_input = false;
  }
  st.baseline = baseline;
  st.vic_opt.lr = c.lr.victim;

  const RunContext ctx(c);
  EvalOptions eo;
  eo.episodes = std::max(c.eval_episodes, 1);
  eo.imitator = imitator != nullptr ? &st.imitator.policy : nullptr;
  eo.imitator_input = st.adversary.imitator_input;
  eo.blind_mask = ctx.adv_mask();
  eo.seed = c.seed;
  eo.workers = ctx.workers;
  auto eval_pair = [&](WinTieReport& vs_new, WinTieReport& vs_base) {
    vs_new = evaluate(g, st.adversary.policy, st.victim, eo);
    auto base = eo;
    base.imitator = nullptr;
    vs_base = evaluate(g, *st.baseline, st.victim, base);
  };
  eval_pair(res.before_new, res.before_baseline);
  const std::filesystem::path out = c.output_dir;
  if (!out.empty()) write_json(out / "config.json", c);
  run_training(st);
  eval_pair(res.after_new, res.after_baseline);
  if (!out.empty()) {
    write_artifacts(st, out);
    write_json(out / "report.json", res);
  }
  return res;
}

inline RetrainResult retrain_victim(const TrainConfig& c) {
  validate(c);
  const auto victim = load_policy(c.victim_path, "victim");
  if (c.adversary_path.empty()) throw ValidationError("missing adversary checkpoint");
  const auto adversary = adversary_from_json(read_json(c.adversary_path));
  const auto baseline = load_policy(c.baseline_path, "baseline adversary");
  if (c.imitator_path.empty()) return retrain_victim(c, victim, adversary, nullptr, baseline);
  const auto imitator = imitator_from_json(read_json(c.imitator_path));
  return retrain_victim(c, victim, adversary, &imitator, baseline);
}

struct VictimResult {
  Policy victim;
  Policy baseline;  // the self-play opponent, usable as a baseline adversary
  std::vector<MetricsRow> metrics;
};

// Pretrains a victim by self-play policy gradient: both seats learn on their
// own rewards. victim_action >= 0 instead returns a constant victim.
inline VictimResult make_victim(const TrainConfig& c) {
  validate(c);
  const auto g = make_game(c);
  const int workers = c.workers > 0 ? c.workers : default_workers();
  Rng rng(derive_seed(c.seed, kInitStream));
  VictimResult res{make_policy(c.victim_kind, state_layout(g), g.num_vic_actions, c.hidden, rng),
                   make_policy(c.victim_kind, state_layout(g), g.num_adv_actions, c.hidden, rng), {}};
  if (c.victim_action >= 0) {
    require(c.victim_action < g.num_vic_actions, "victim_action out of range");
    res.victim = constant_policy(state_layout(g), g.num_vic_actions, c.victim_action);
  } else {
    Adam vo, ao;
    vo.lr = c.lr.victim;
    ao.lr = c.lr.adversary;
    AdversaryState adv{res.baseline, c.clip_eps, false, ImitatorInput::sampled};
    long step = 0;
    for (int cycle = 0; step < c.total_steps; ++cycle) {
      const auto trs = collect_episodes(c.batch_size, c.seed, kCycleStream + static_cast<std::uint64_t>(cycle), workers,
                                        [&](Rng& r) { return rollout(g, adv.policy, res.victim, nullptr, r); });
      const auto vb = victim_batch(g, res.victim, trs, c.pg_discount);
      const auto ab = adversary_batch(g, adv, trs, false, c.pg_discount);
      const bool single = c.method == UpdateMethod::reinforce;
      for (int e = 0; e < (single ? 1 : c.inner_epochs); ++e) {
        res.victim = policy_step(res.victim, vb, c.method, c.clip_eps, c.adv_entropy_coeff, vo);
        adv.policy = adv_update(adv, ab, c.method, ao, c.adv_entropy_coeff);
      }
      step += count_steps(trs);
      MetricsRow row;
      row.step = step;
      int w = 0, t = 0;
      for (const auto& tr : trs) {
        w += tr.outcome == Outcome::adv_win;
        t += tr.outcome == Outcome::tie;
      }
      const double n = static_cast<double>(trs.size());
      row.win_rate = w / n;
      row.tie_rate = t / n;
      row.loss_rate = (n - w - t) / n;
      row.imitation_gap = std::nan("");
      row.adv_objective = enhanced_objective_value(g, adversary_table(g, adv.policy), victim_table(g, res.victim));
      row.eta_mean = std::nan("");
      res.metrics.push_back(row);
    }
    res.baseline = adv.policy;
  }
  if (!c.output_dir.empty()) {
    const std::filesystem::path out = c.output_dir;
    write_json(out / "config.json", c);
    write_json(out / "victim.json", policy_to_json(res.victim));
    auto base = adversary_to_json({res.baseline, c.clip_eps, false, ImitatorInput::sampled});
    base["env"] = c.env;
    write_json(out / "baseline_adversary.json", base);
    write_text(out / "metrics.csv", metrics_csv(res.metrics));
  }
  return res;
}

}  // namespace advpol

#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <deque>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mapf/env.hpp"
#include "mapf/net/policy.hpp"
#include "mapf/observation.hpp"
#include "mapf/train/replay.hpp"

namespace mapf::train {

// ---- building blocks -------------------------------------------------------

/// R = sum_k gamma^k r_k + gamma^len * bootstrap. Pass bootstrap 0 for
/// terminal tails.
inline double n_step_return(const std::vector<double>& rewards,
                            double bootstrap, double gamma) {
  double r = 0.0, g = 1.0;
  for (double rk : rewards) {
    r += g * rk;
    g *= gamma;
  }
  return r + g * bootstrap;
}

/// Double-Q bootstrap: the target net's value at the online net's argmax,
/// restricted to the actions the decode could actually execute. Unexecutable
/// actions are rarely trained, so their values float on generalization;
/// letting the argmax see them feeds runaway overestimates into the targets.
inline double double_q_bootstrap(const std::vector<double>& online_q,
                                 const std::vector<double>& target_q,
                                 const std::array<bool, 5>& valid) {
  int best = -1;
  for (size_t a = 0; a < online_q.size(); ++a) {
    if (a < valid.size() && !valid[a]) continue;
    if (best < 0 || online_q[a] > online_q[best]) best = static_cast<int>(a);
  }
  return target_q[best];
}

inline double double_q_bootstrap(const std::vector<double>& online_q,
                                 const std::vector<double>& target_q) {
  return double_q_bootstrap(online_q, target_q,
                            {true, true, true, true, true});
}

/// Static executability of each action, read off an observation: a move is
/// valid when the adjacent cell in the obstacle channel is free (out-of-map
/// cells are marked as obstacles); Stay always is.
inline std::array<bool, 5> valid_actions_from_obs(const ObservationTensor& o) {
  const int c = o.fov / 2;
  const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
  std::array<bool, 5> v{};
  v[4] = true;
  for (int a = 0; a < 4; ++a)
    v[a] = o.at(kChObstacle, c + dr[a], c + dc[a]) == 0.0f;
  return v;
}

struct CurriculumStage {
  int side = 10;
  int agents = 1;
};

inline const std::array<CurriculumStage, 5> kCurriculumLadder = {
    CurriculumStage{10, 1}, {10, 2}, {20, 4}, {30, 8}, {40, 16}};

/// Rolling success-rate gate over the stage ladder; never regresses.
class Curriculum {
 public:
  explicit Curriculum(int window = 100, double threshold = 0.9)
      : window_size_(window), threshold_(threshold) {}

  int stage() const { return stage_; }
  CurriculumStage current() const { return kCurriculumLadder[stage_]; }
  bool window_full() const {
    return static_cast<int>(window_.size()) == window_size_;
  }
  double window_sr() const {
    if (window_.empty()) return 0.0;
    int s = 0;
    for (bool b : window_) s += b ? 1 : 0;
    return double(s) / window_.size();
  }

  void record_episode(bool success) {
    window_.push_back(success);
    if (static_cast<int>(window_.size()) > window_size_) window_.pop_front();
    if (window_full() && window_sr() > threshold_ &&
        stage_ + 1 < static_cast<int>(kCurriculumLadder.size())) {
      ++stage_;
      window_.clear();
    }
  }

 private:
  int window_size_;
  double threshold_;
  int stage_ = 0;
  std::deque<bool> window_;
};

// ---- config ----------------------------------------------------------------

struct TrainConfig {
  double gamma = 0.99;
  int n_step = 2;
  int burn_in = 8;  // comm-state refresh prefix replayed before each entry
  int64_t total_steps = 20000;  // learner steps
  int batch = 192;
  size_t buffer = size_t(1) << 17;
  int actors = 1;  // 1 -> serial deterministic schedule
  int warmup = 512;         // buffer entries before learning starts
  double train_ratio = 1;   // learner steps per collected env step; values
                            // below 1 collect several env steps per update
  double eps_start = 1.0, eps_end = 0.03, eps_fraction = 1.0 / 3.0;
  double omega = 0.6, beta_start = 0.4, beta_end = 1.0, eps_floor = 1e-6;
  int64_t target_sync = 2000;
  int64_t actor_refresh = 1000;
  double lr = 1e-3;
  double lr_end = 0.0;  // 0 -> constant lr, else linear decay over total_steps
  double grad_clip = 10.0;
  int sr_window = 100;
  double sr_threshold = 0.9;
  int episode_steps = 256;  // 0 -> 8 * map side
  double max_seconds = 0.0;  // wall-clock budget, 0 = unlimited
  uint64_t seed = 1;
  int64_t checkpoint_every = 2000;
  int64_t metrics_every = 25;
  std::string checkpoint_path;
  std::string metrics_path;

  // network dimensions
  int hidden = 64;
  int heads = 4;
  int pos_dim = 16;
  int q_hidden = 64;
  int fov = 9;
  double alpha = kDefaultCongestionAlpha;
  std::vector<int> conv_channels = {16, 16, 32, 32};

  net::NetworkConfig network() const {
    net::NetworkConfig n;
    n.hidden = hidden;
    n.heads = heads;
    n.pos_dim = pos_dim;
    n.q_hidden = q_hidden;
    n.fov = fov;
    n.conv_channels = conv_channels;
    return n;
  }

  int max_steps_for(int side) const {
    return episode_steps > 0 ? episode_steps : 8 * side;
  }

  static TrainConfig from_stream(std::istream& in);
  static TrainConfig from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open training config: " + path);
    return from_stream(f);
  }
};

inline TrainConfig TrainConfig::from_stream(std::istream& in) {
  TrainConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string key, value;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      if (line.find_first_not_of(" \t\r") != std::string::npos)
        throw std::runtime_error("training config line " +
                                 std::to_string(lineno) + ": expected key=value");
      continue;
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    key = trim(line.substr(0, eq));
    value = trim(line.substr(eq + 1));
    auto as_d = [&] { return std::stod(value); };
    auto as_i = [&] { return std::stoll(value); };
    if (key == "gamma") c.gamma = as_d();
    else if (key == "n_step") c.n_step = int(as_i());
    else if (key == "burn_in") c.burn_in = int(as_i());
    else if (key == "total_steps") c.total_steps = as_i();
    else if (key == "batch") c.batch = int(as_i());
    else if (key == "buffer") c.buffer = size_t(as_i());
    else if (key == "actors") c.actors = int(as_i());
    else if (key == "warmup") c.warmup = int(as_i());
    else if (key == "train_ratio") c.train_ratio = as_d();
    else if (key == "eps_start") c.eps_start = as_d();
    else if (key == "eps_end") c.eps_end = as_d();
    else if (key == "eps_fraction") c.eps_fraction = as_d();
    else if (key == "omega") c.omega = as_d();
    else if (key == "beta_start") c.beta_start = as_d();
    else if (key == "beta_end") c.beta_end = as_d();
    else if (key == "eps_floor") c.eps_floor = as_d();
    else if (key == "target_sync") c.target_sync = as_i();
    else if (key == "actor_refresh") c.actor_refresh = as_i();
    else if (key == "lr") c.lr = as_d();
    else if (key == "lr_end") c.lr_end = as_d();
    else if (key == "grad_clip") c.grad_clip = as_d();
    else if (key == "sr_window") c.sr_window = int(as_i());
    else if (key == "sr_threshold") c.sr_threshold = as_d();
    else if (key == "episode_steps") c.episode_steps = int(as_i());
    else if (key == "max_seconds") c.max_seconds = as_d();
    else if (key == "seed") c.seed = uint64_t(as_i());
    else if (key == "checkpoint_every") c.checkpoint_every = as_i();
    else if (key == "metrics_every") c.metrics_every = as_i();
    else if (key == "checkpoint_path") c.checkpoint_path = value;
    else if (key == "metrics_path") c.metrics_path = value;
    else if (key == "hidden") c.hidden = int(as_i());
    else if (key == "heads") c.heads = int(as_i());
    else if (key == "pos_dim") c.pos_dim = int(as_i());
    else if (key == "q_hidden") c.q_hidden = int(as_i());
    else if (key == "fov") c.fov = int(as_i());
    else if (key == "alpha") c.alpha = as_d();
    else if (key == "conv_channels") {
      c.conv_channels.clear();
      std::stringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ','))
        c.conv_channels.push_back(std::stoi(tok));
    } else {
      throw std::runtime_error("unknown training config key: " + key);
    }
  }
  return c;
}

// ---- checkpoints with an embedded network manifest -------------------------

template <class S>
void save_policy_checkpoint(const std::string& path,
                            const ad::ParameterStore<S>& store,
                            const net::NetworkConfig& cfg) {
  store.save(path);
  std::ofstream meta(path + ".meta");
  if (!meta) throw std::runtime_error("cannot write manifest: " + path + ".meta");
  meta << "hidden=" << cfg.hidden << "\nheads=" << cfg.heads
       << "\npos_dim=" << cfg.pos_dim << "\nq_hidden=" << cfg.q_hidden
       << "\nfov=" << cfg.fov << "\nconv_channels=";
  for (size_t i = 0; i < cfg.conv_channels.size(); ++i)
    meta << (i ? "," : "") << cfg.conv_channels[i];
  meta << "\n";
}

template <class S>
net::NetworkConfig load_policy_checkpoint(const std::string& path,
                                          ad::ParameterStore<S>& store) {
  std::ifstream meta(path + ".meta");
  if (!meta)
    throw std::runtime_error("checkpoint manifest missing: " + path + ".meta");
  TrainConfig proxy = TrainConfig::from_stream(meta);
  store.load(path);
  return proxy.network();
}

// ---- transitions -----------------------------------------------------------

/// Observations are 0/1, so they bit-pack losslessly.
struct PackedObs {
  int fov = 0;
  std::vector<uint64_t> words;

  static PackedObs pack(const ObservationTensor& o) {
    PackedObs p;
    p.fov = o.fov;
    p.words.assign((o.data.size() + 63) / 64, 0);
    for (size_t i = 0; i < o.data.size(); ++i)
      if (o.data[i] != 0.0f) p.words[i / 64] |= uint64_t(1) << (i % 64);
    return p;
  }

  ObservationTensor unpack() const {
    ObservationTensor o;
    o.fov = fov;
    o.data.assign(size_t(kObsChannels) * fov * fov, 0.0f);
    for (size_t i = 0; i < o.data.size(); ++i)
      if (words[i / 64] >> (i % 64) & 1) o.data[i] = 1.0f;
    return o;
  }
};

template <class S>
struct AgentSlot {
  PackedObs obs;
  std::array<double, 2> pos;
  ad::ArrayX<S> prev_comm;
  int action = int(Action::Stay);
  std::vector<int> partners;
};

/// One joint n-step transition: the whole team at t and at t+steps, so the
/// learner can replay the communication stage exactly as it ran. `burn` holds
/// up to burn_in preceding team steps and `mid` the steps between t and
/// t+steps; the learner replays them with current parameters to refresh the
/// recurrent comm states instead of trusting the ones stored at collection
/// time. Only the first slot vector of that replay keeps its stored comm
/// state (exact zeros when the prefix reaches the episode start).
template <class S>
struct NStepEntry {
  std::vector<std::vector<AgentSlot<S>>> burn;
  std::vector<AgentSlot<S>> now;
  std::vector<std::vector<AgentSlot<S>>> mid;
  std::vector<AgentSlot<S>> next;
  std::vector<double> returns;  // per-agent discounted reward sum
  int steps = 1;
  bool done = false;  // bootstrap suppressed
};

// ---- trainer ---------------------------------------------------------------

template <class S = float>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg)
      : cfg_(std::move(cfg)),
        policy_(cfg_.network()),
        buffer_(cfg_.buffer, cfg_.omega, cfg_.eps_floor),
        curriculum_(cfg_.sr_window, cfg_.sr_threshold),
        rng_(cfg_.seed) {
    policy_.build(online_, cfg_.seed);
    policy_.build(target_, cfg_.seed);
    target_.copy_values_from(online_);
    snapshot_ = online_;
    if (!cfg_.metrics_path.empty()) {
      metrics_.open(cfg_.metrics_path);
      metrics_ << "step,loss,sr,stage,epsilon\n";
    }
  }

  const TrainConfig& config() const { return cfg_; }
  const net::Policy<S>& policy() const { return policy_; }
  ad::ParameterStore<S>& online() { return online_; }
  ad::ParameterStore<S>& target() { return target_; }
  ReplayBuffer<NStepEntry<S>>& buffer() { return buffer_; }
  Curriculum& curriculum() { return curriculum_; }
  int64_t learner_steps() const { return steps_; }
  int64_t episodes() const { return episodes_; }
  double last_loss() const { return last_loss_; }

  double epsilon() const {
    const double horizon =
        std::max<double>(1.0, cfg_.eps_fraction * cfg_.total_steps);
    const double f = std::min(1.0, double(steps_) / horizon);
    return cfg_.eps_start + f * (cfg_.eps_end - cfg_.eps_start);
  }

  double learning_rate() const {
    if (cfg_.lr_end <= 0.0) return cfg_.lr;
    const double f =
        std::min(1.0, double(steps_) / std::max<int64_t>(1, cfg_.total_steps));
    return cfg_.lr + f * (cfg_.lr_end - cfg_.lr);
  }

  double beta() const {
    const double f =
        std::min(1.0, double(steps_) / std::max<int64_t>(1, cfg_.total_steps));
    return cfg_.beta_start + f * (cfg_.beta_end - cfg_.beta_start);
  }

  /// One ε-greedy episode at the current curriculum stage, pushed into the
  /// buffer as n-step entries with the running max priority. Returns the
  /// number of env steps executed.
  int collect_episode(ad::ParameterStore<S>& params, std::mt19937_64& rng) {
    const CurriculumStage stage = curriculum_.current();
    Instance inst = sample_instance(stage, rng);
    Environment env(std::move(inst));
    const int n = env.num_agents();
    std::vector<Coord> goals;
    for (const auto& a : env.agents()) goals.push_back(a.goal);
    ObservationBuilder builder(env.map(), goals, cfg_.fov, cfg_.alpha);
    std::vector<ad::ArrayX<S>> prev_comm(
        n, ad::ArrayX<S>::Zero(policy_.config().hidden));

    struct StepRecord {
      std::vector<AgentSlot<S>> slots;
      std::vector<double> rewards;
    };
    std::vector<StepRecord> records;
    const int max_steps = cfg_.max_steps_for(stage.side);
    const double eps = epsilon();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> rand_action(0, kNumActions - 1);
    bool done = false;

    auto snapshot_slots = [&](const std::vector<std::vector<int>>& partners) {
      std::vector<AgentSlot<S>> slots(n);
      for (int i = 0; i < n; ++i) {
        slots[i].obs = PackedObs::pack(builder.build(env.agents(), i));
        slots[i].pos =
            net::Policy<S>::normalized_position(env.agents()[i].pos, env.map());
        slots[i].prev_comm = prev_comm[i];
        slots[i].partners = partners[i];
      }
      return slots;
    };

    for (int t = 0; t < max_steps; ++t) {
      ad::Graph<S> g(params);
      auto decision =
          policy_.act(g, env.map(), env.agents(), builder, prev_comm);
      StepRecord rec;
      rec.slots = snapshot_slots(decision.partners);
      auto actions = resolve_with_fallback(decision.q, env.map(), env.agents());
      for (int i = 0; i < n; ++i)
        if (unit(rng) < eps)
          actions[i] = static_cast<Action>(rand_action(rng));
      for (int i = 0; i < n; ++i) rec.slots[i].action = int(actions[i]);
      prev_comm = decision.comm_state;
      StepOutcome out = env.step(actions);
      rec.rewards = out.rewards;
      records.push_back(std::move(rec));
      if (out.done) {
        done = true;
        break;
      }
    }

    // terminal-state snapshot for bootstrapping timeout tails
    std::vector<AgentSlot<S>> terminal;
    if (done) {
      terminal = snapshot_slots(std::vector<std::vector<int>>(n));
    } else {
      ad::Graph<S> g(params);
      auto decision =
          policy_.act(g, env.map(), env.agents(), builder, prev_comm);
      terminal = snapshot_slots(decision.partners);
    }

    const int total = static_cast<int>(records.size());
    const double init_priority = buffer_.max_priority();
    auto drop_comm = [](std::vector<AgentSlot<S>>& slots) {
      for (auto& s : slots) s.prev_comm.resize(0);
    };
    for (int t = 0; t < total; ++t) {
      NStepEntry<S> e;
      e.steps = std::min(cfg_.n_step, total - t);
      for (int k = std::max(0, t - cfg_.burn_in); k < t; ++k)
        e.burn.push_back(records[k].slots);
      e.now = records[t].slots;
      for (int k = t + 1; k < t + e.steps; ++k)
        e.mid.push_back(records[k].slots);
      e.next = (t + e.steps < total) ? records[t + e.steps].slots : terminal;
      e.done = done && t + e.steps == total;
      e.returns.resize(n);
      for (int i = 0; i < n; ++i) {
        double r = 0.0, g = 1.0;
        for (int k = 0; k < e.steps; ++k) {
          r += g * records[t + k].rewards[i];
          g *= cfg_.gamma;
        }
        e.returns[i] = r;
      }
      // only the replay prefix's first step needs its stored comm state
      for (size_t k = 1; k < e.burn.size(); ++k) drop_comm(e.burn[k]);
      if (!e.burn.empty()) drop_comm(e.now);
      for (auto& s : e.mid) drop_comm(s);
      drop_comm(e.next);
      buffer_.push(std::move(e), init_priority);
    }

    {
      std::lock_guard<std::mutex> lk(stats_mu_);
      curriculum_.record_episode(done);
      ++episodes_;
    }
    return total;
  }

  /// One prioritized learner step; returns the loss.
  double learner_step(std::mt19937_64& rng) {
    auto batch = buffer_.sample(cfg_.batch, beta(), rng);
    const int b = static_cast<int>(batch.entries.size());

    // refresh the recurrent comm states, each net with its own parameters
    std::vector<std::vector<ad::ArrayX<S>>> comm_now, comm_next, tg_now, tg_next;
    refresh_comm(online_, batch.entries, comm_now, comm_next);
    refresh_comm(target_, batch.entries, tg_now, tg_next);

    // bootstrap values from the two nets on the next states (no gradients)
    std::vector<std::vector<double>> bootstrap(b);
    {
      ad::Graph<S> g_on(online_), g_tg(target_);
      auto q_on = forward_states(g_on, batch.entries, /*next=*/true, comm_next);
      auto q_tg = forward_states(g_tg, batch.entries, /*next=*/true, tg_next);
      for (int e = 0; e < b; ++e) {
        const auto& entry = batch.entries[e];
        bootstrap[e].resize(entry.now.size(), 0.0);
        if (entry.done) continue;
        // clamp to the feasible return range implied by the reward table:
        // at most one terminal +3, at worst a collision every step forever.
        // Keeps recurrent-state extrapolation from ratcheting the targets.
        const double vmax = kRewardFinish;
        const double vmin = kRewardCollision / (1.0 - cfg_.gamma);
        for (size_t i = 0; i < entry.now.size(); ++i)
          bootstrap[e][i] = std::clamp(
              double_q_bootstrap(
                  to_vec(q_on[e][i]), to_vec(q_tg[e][i]),
                  valid_actions_from_obs(entry.next[i].obs.unpack())),
              vmin, vmax);
      }
    }

    // online pass on the current states, with gradients
    ad::Graph<S> g(online_);
    auto q_now = forward_states(g, batch.entries, /*next=*/false, comm_now);
    std::vector<ad::Var<S>> preds;
    std::vector<S> target_vals, weight_vals;
    for (int e = 0; e < b; ++e) {
      const auto& entry = batch.entries[e];
      for (size_t i = 0; i < entry.now.size(); ++i) {
        preds.push_back(ad::select(q_now[e][i], entry.now[i].action));
        const double r = entry.returns[i] +
                         std::pow(cfg_.gamma, entry.steps) * bootstrap[e][i];
        target_vals.push_back(S(r));
        weight_vals.push_back(S(batch.weights[e]));
      }
    }
    ad::ArrayX<S> targets =
        Eigen::Map<const ad::ArrayX<S>>(target_vals.data(), target_vals.size());
    ad::ArrayX<S> weights =
        Eigen::Map<const ad::ArrayX<S>>(weight_vals.data(), weight_vals.size());
    ad::Var<S> pred = ad::concat(preds);
    ad::Var<S> loss = ad::weighted_mse(pred, targets, weights);
    g.backward(loss);
    auto grads = g.gradients();
    if (std::getenv("MAPF_DEBUG_LEARN") && steps_ % 500 == 0) {
      double sq = 0.0;
      for (const auto& [nm, gr] : grads) sq += double((gr * gr).sum());
      double td = 0.0, pm = 0.0, tm = 0.0;
      for (size_t i = 0; i < target_vals.size(); ++i) {
        td += std::abs(double(pred.value()[i]) - double(target_vals[i]));
        pm += double(pred.value()[i]);
        tm += double(target_vals[i]);
      }
      const double nfl = double(target_vals.size());
      fprintf(stderr, "dbg step=%lld gradnorm=%.3f mean|td|=%.4f pred=%.3f targ=%.3f\n",
              (long long)steps_, std::sqrt(sq), td / nfl, pm / nfl, tm / nfl);
    }
    clip_gradients(grads);
    online_.apply_gradients(grads, {.lr = learning_rate()});

    // refresh priorities with the fresh TD errors
    std::vector<double> new_prio(b, 0.0);
    size_t flat = 0;
    for (int e = 0; e < b; ++e) {
      const size_t count = batch.entries[e].now.size();
      double acc = 0.0;
      for (size_t i = 0; i < count; ++i, ++flat)
        acc += std::abs(double(pred.value()[flat]) - double(targets[flat]));
      new_prio[e] = acc / count + cfg_.eps_floor;
    }
    buffer_.update_priorities(batch.indices, batch.versions, new_prio);

    ++steps_;
    if (steps_ % cfg_.target_sync == 0) target_.copy_values_from(online_);
    if (cfg_.actors > 1 && steps_ % cfg_.actor_refresh == 0) {
      std::lock_guard<std::mutex> lk(snapshot_mu_);
      snapshot_ = online_;
      ++snapshot_version_;
    }
    last_loss_ = double(loss.value()[0]);
    log_metrics();
    maybe_checkpoint();
    return last_loss_;
  }

  /// Full loop. actors == 1 interleaves collection and learning on one
  /// thread (deterministic); otherwise actor threads feed the buffer while
  /// the learner runs here. `should_stop` is polled between episodes /
  /// learner steps.
  void run(const std::function<bool(Trainer&)>& should_stop = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    auto out_of_time = [&] {
      return cfg_.max_seconds > 0.0 &&
             std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                           t0)
                     .count() >= cfg_.max_seconds;
    };
    auto stop = [&] {
      return steps_ >= cfg_.total_steps || out_of_time() ||
             (should_stop && should_stop(*this));
    };

    if (cfg_.actors <= 1) {
      double budget = 0.0;  // fractional learner steps carried across episodes
      while (!stop()) {
        const int env_steps = collect_episode(online_, rng_);
        if (buffer_.size() < size_t(cfg_.warmup)) continue;
        budget += env_steps * cfg_.train_ratio;
        for (; budget >= 1.0 && !stop(); budget -= 1.0) learner_step(rng_);
      }
    } else {
      std::atomic<bool> quit{false};
      std::vector<std::thread> actors;
      for (int a = 0; a < cfg_.actors; ++a)
        actors.emplace_back([this, a, &quit] {
          std::mt19937_64 arng(cfg_.seed + 1000003 * (a + 1));
          ad::ParameterStore<S> local;
          uint64_t seen = 0;
          while (!quit.load()) {
            try {
              {
                std::lock_guard<std::mutex> lk(snapshot_mu_);
                if (seen != snapshot_version_ || local.entries().empty()) {
                  local = snapshot_;
                  seen = snapshot_version_;
                }
              }
              collect_episode(local, arng);
            } catch (const std::exception&) {
              // a failed episode never corrupts the buffer; keep collecting
            }
          }
        });
      while (!stop()) {
        if (buffer_.size() < size_t(cfg_.warmup)) {
          std::this_thread::sleep_for(std::chrono::milliseconds(10));
          continue;
        }
        learner_step(rng_);
      }
      quit.store(true);
      for (auto& th : actors) th.join();
    }
    if (!cfg_.checkpoint_path.empty())
      save_policy_checkpoint(cfg_.checkpoint_path, online_, policy_.config());
  }

 private:
  Instance sample_instance(CurriculumStage stage, std::mt19937_64& rng) {
    for (;;) {
      const double density = sample_triangular_density(rng);
      try {
        return generate_instance(stage.side, stage.side, density, stage.agents,
                                 rng());
      } catch (const InstanceInfeasible&) {
        // dense draw on a small map; redraw
      }
    }
  }

  static std::vector<double> to_vec(const ad::Var<S>& q) {
    std::vector<double> v(q.size());
    for (int64_t i = 0; i < q.size(); ++i) v[i] = double(q.value()[i]);
    return v;
  }

  /// Replays each entry's stored prefix (burn-in, `now`, `mid`) with the
  /// online parameters, so the recurrent comm states used for prediction
  /// (`comm_now`, the state entering `now`) and bootstrap (`comm_next`, the
  /// state entering `next`) are not the stale ones stored at collection
  /// time. Entries are batched per replay step, aligned at the end of their
  /// prefixes; values only, no gradients flow through the replay.
  void refresh_comm(ad::ParameterStore<S>& params,
                    const std::vector<NStepEntry<S>>& entries,
                    std::vector<std::vector<ad::ArrayX<S>>>& comm_now,
                    std::vector<std::vector<ad::ArrayX<S>>>& comm_next) {
    const size_t b = entries.size();
    comm_now.assign(b, {});
    comm_next.assign(b, {});
    std::vector<std::vector<const std::vector<AgentSlot<S>>*>> seq(b);
    std::vector<std::vector<ad::ArrayX<S>>> comm(b);
    size_t maxlen = 0;
    for (size_t e = 0; e < b; ++e) {
      for (const auto& s : entries[e].burn) seq[e].push_back(&s);
      seq[e].push_back(&entries[e].now);
      for (const auto& s : entries[e].mid) seq[e].push_back(&s);
      maxlen = std::max(maxlen, seq[e].size());
      const auto& first = *seq[e].front();
      comm[e].resize(first.size());
      for (size_t i = 0; i < first.size(); ++i) comm[e][i] = first[i].prev_comm;
    }
    for (size_t k = 0; k < maxlen; ++k) {
      std::vector<size_t> active;
      std::vector<const std::vector<AgentSlot<S>>*> step;
      for (size_t e = 0; e < b; ++e) {
        const size_t off = maxlen - seq[e].size();
        if (k < off) continue;
        if (k - off == entries[e].burn.size()) comm_now[e] = comm[e];
        active.push_back(e);
        step.push_back(seq[e][k - off]);
      }
      ad::Graph<S> g(params);
      std::vector<ObservationTensor> obs;
      std::vector<const ad::ArrayX<S>*> comm_ptr;
      for (size_t a = 0; a < active.size(); ++a)
        for (size_t i = 0; i < step[a]->size(); ++i) {
          obs.push_back((*step[a])[i].obs.unpack());
          comm_ptr.push_back(&comm[active[a]][i]);
        }
      std::vector<const ObservationTensor*> obs_ptr;
      for (const auto& o : obs) obs_ptr.push_back(&o);
      ad::Var<S> encoded = policy_.encode_batch(g, obs_ptr, comm_ptr);
      int base = 0;
      for (size_t a = 0; a < active.size(); ++a) {
        const auto& slots = *step[a];
        const int n = static_cast<int>(slots.size());
        std::vector<ad::Var<S>> messages(n);
        std::vector<std::array<double, 2>> norm_pos(n);
        for (int i = 0; i < n; ++i) {
          messages[i] = ad::row(encoded, base + i);
          norm_pos[i] = slots[i].pos;
        }
        for (int i = 0; i < n; ++i)
          comm[active[a]][i] =
              policy_.communicate(g, norm_pos, i, messages, slots[i].partners)
                  .value();
        base += n;
      }
    }
    for (size_t e = 0; e < b; ++e) comm_next[e] = comm[e];
  }

  /// Q-value Vars for every (entry, agent), replaying the stored
  /// communication partners with the refreshed comm states. `next` selects
  /// the bootstrap-side states.
  std::vector<std::vector<ad::Var<S>>> forward_states(
      ad::Graph<S>& g, const std::vector<NStepEntry<S>>& entries, bool next,
      const std::vector<std::vector<ad::ArrayX<S>>>& comm) const {
    std::vector<ObservationTensor> obs;
    std::vector<const ObservationTensor*> obs_ptr;
    std::vector<const ad::ArrayX<S>*> comm_ptr;
    size_t total = 0;
    for (const auto& e : entries) total += e.now.size();
    obs.reserve(total);
    for (size_t e = 0; e < entries.size(); ++e) {
      const auto& slots = next ? entries[e].next : entries[e].now;
      for (size_t i = 0; i < slots.size(); ++i) {
        obs.push_back(slots[i].obs.unpack());
        comm_ptr.push_back(&comm[e][i]);
      }
    }
    for (const auto& o : obs) obs_ptr.push_back(&o);
    ad::Var<S> encoded = policy_.encode_batch(g, obs_ptr, comm_ptr);

    std::vector<std::vector<ad::Var<S>>> out(entries.size());
    int base = 0;
    for (size_t e = 0; e < entries.size(); ++e) {
      const auto& slots = next ? entries[e].next : entries[e].now;
      const int n = static_cast<int>(slots.size());
      std::vector<ad::Var<S>> messages(n);
      std::vector<std::array<double, 2>> norm_pos(n);
      for (int i = 0; i < n; ++i) {
        messages[i] = ad::row(encoded, base + i);
        norm_pos[i] = slots[i].pos;
      }
      for (int i = 0; i < n; ++i) {
        ad::Var<S> m =
            policy_.communicate(g, norm_pos, i, messages, slots[i].partners);
        out[e].push_back(policy_.q_values(g, m));
      }
      base += n;
    }
    return out;
  }

  void clip_gradients(std::map<std::string, ad::ArrayX<S>>& grads) const {
    if (cfg_.grad_clip <= 0.0) return;
    double sq = 0.0;
    for (const auto& [name, grad] : grads)
      sq += double((grad * grad).sum());
    const double norm = std::sqrt(sq);
    if (norm <= cfg_.grad_clip) return;
    const S scale = S(cfg_.grad_clip / norm);
    for (auto& [name, grad] : grads) grad *= scale;
  }

  void log_metrics() {
    if (!metrics_.is_open() || steps_ % cfg_.metrics_every != 0) return;
    std::lock_guard<std::mutex> lk(stats_mu_);
    metrics_ << steps_ << ',' << last_loss_ << ',' << curriculum_.window_sr()
             << ',' << curriculum_.stage() << ',' << epsilon() << '\n';
    metrics_.flush();
  }

  void maybe_checkpoint() {
    if (cfg_.checkpoint_path.empty() || cfg_.checkpoint_every <= 0 ||
        steps_ % cfg_.checkpoint_every != 0)
      return;
    save_policy_checkpoint(cfg_.checkpoint_path, online_, policy_.config());
  }

  TrainConfig cfg_;
  net::Policy<S> policy_;
  ad::ParameterStore<S> online_, target_, snapshot_;
  std::mutex snapshot_mu_;
  uint64_t snapshot_version_ = 1;
  ReplayBuffer<NStepEntry<S>> buffer_;
  Curriculum curriculum_;
  std::mutex stats_mu_;
  std::mt19937_64 rng_;
  int64_t steps_ = 0, episodes_ = 0;
  double last_loss_ = 0.0;
  std::ofstream metrics_;
};

}  // namespace mapf::train

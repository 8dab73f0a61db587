#pragma once

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mapf/ad/params.hpp"
#include "mapf/ad/tensor.hpp"
#include "mapf/env.hpp"
#include "mapf/grid.hpp"
#include "mapf/observation.hpp"

namespace mapf::net {

using ad::ArrayX;
using ad::Graph;
using ad::GruParams;
using ad::Var;

struct NetworkConfig {
  int hidden = 256;       // message width D
  int heads = 4;          // attention heads
  int fov = 9;            // FOV side, odd
  double leaky_slope = 0.2;
  int actions = kNumActions;
  int pos_dim = 16;       // position-embedding width
  int q_hidden = 128;     // shared hidden layer before the dueling heads
  std::vector<int> conv_channels = {32, 32, 64, 64};

  int head_dim() const { return hidden / heads; }
  void validate() const {
    if (hidden % heads != 0)
      throw std::runtime_error("hidden width must be divisible by head count");
    if (fov % 2 == 0) throw std::runtime_error("FOV side must be odd");
  }
};

class EmptyPartnerSet : public std::runtime_error {
 public:
  EmptyPartnerSet() : std::runtime_error("gat_attention: empty partner set") {}
};

/// Exact dueling combine: Q_a = V + (A_a - mean_a' A_a').
template <class S>
Var<S> dueling_combine(const Var<S>& v, const Var<S>& a) {
  Var<S> centered = ad::add_scalar_tensor(a, ad::mean_all(a), S(-1));
  return ad::add_scalar_tensor(centered, v, S(1));
}

template <class S>
int argmax_action(const ArrayX<S>& q) {
  int best = 0;
  for (int i = 1; i < q.size(); ++i)
    if (q[i] > q[best]) best = i;  // ties break to the lowest index
  return best;
}

/// Neighbor set: other agents whose positions fall inside agent i's FOV.
std::vector<int> fov_neighbors(const std::vector<AgentState>& agents, int i,
                               int fov);

template <class S>
struct TeamDecision {
  std::vector<std::vector<double>> q;        // per-agent Q-vector
  std::vector<ArrayX<S>> comm_state;         // post-communication messages
  std::vector<std::vector<int>> partners;    // C_i per agent
};

/// The full policy: observation encoder, decision-causal partner selection,
/// personalized GATv2 encoder/aggregator and the dueling Q-head. All
/// methods are pure given a frozen ParameterStore.
template <class S>
class Policy {
 public:
  explicit Policy(NetworkConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const NetworkConfig& config() const { return cfg_; }

  int flat_dim() const {
    return cfg_.conv_channels.back() * cfg_.fov * cfg_.fov;
  }

  /// Registers and initializes every parameter in `store`.
  void build(ad::ParameterStore<S>& store, uint64_t seed) const {
    std::mt19937_64 rng(seed);
    int cin = kObsChannels;
    for (size_t k = 0; k < cfg_.conv_channels.size(); ++k) {
      const int cout = cfg_.conv_channels[k];
      auto& w = store.add(conv_name(k) + ".w", {cout, cin, 3, 3});
      ad::init_kaiming(w.value, cin * 9, rng);
      store.add(conv_name(k) + ".b", {cout});
      cin = cout;
    }
    add_linear(store, "enc.fc", flat_dim(), cfg_.hidden, rng);
    add_gru(store, "enc.gru", cfg_.hidden, rng);
    add_linear(store, "pos", 2, cfg_.pos_dim, rng);
    for (const char* stage : {"gat_enc", "gat_agg"}) {
      const int u = cfg_.hidden + cfg_.pos_dim;
      for (int h = 0; h < cfg_.heads; ++h) {
        const std::string p = std::string(stage) + "." + std::to_string(h);
        add_linear(store, p + ".fs", u, cfg_.head_dim(), rng);
        add_linear(store, p + ".fr", u, cfg_.head_dim(), rng);
        auto& a = store.add(p + ".a", {2 * cfg_.head_dim()});
        ad::init_kaiming(a.value, 2 * cfg_.head_dim(), rng);
      }
      add_linear(store, std::string(stage) + ".fp", cfg_.hidden, cfg_.hidden,
                 rng);
      add_gru(store, std::string(stage) + ".gru", cfg_.hidden, rng);
    }
    add_linear(store, "q.h", cfg_.hidden, cfg_.q_hidden, rng);
    add_linear(store, "q.v", cfg_.q_hidden, 1, rng);
    add_linear(store, "q.a", cfg_.q_hidden, cfg_.actions, rng);
  }

  // ---- forward stages ------------------------------------------------------

  /// Conv stack + flatten + fc + GRU over a batch of observations; row b of
  /// the result is m_t for sample b. `prev_comm` rows are the previous
  /// post-communication messages (zeros at t=0).
  Var<S> encode_batch(Graph<S>& g,
                      const std::vector<const ObservationTensor*>& obs,
                      const std::vector<const ArrayX<S>*>& prev_comm) const {
    const int b = static_cast<int>(obs.size());
    const int l = cfg_.fov;
    ArrayX<S> input(int64_t(b) * kObsChannels * l * l);
    for (int s = 0; s < b; ++s)
      for (size_t k = 0; k < obs[s]->data.size(); ++k)
        input[int64_t(s) * kObsChannels * l * l + k] =
            static_cast<S>(obs[s]->data[k]);
    Var<S> x = ad::constant(g.tape(), {b, kObsChannels, l, l}, std::move(input));
    for (size_t k = 0; k < cfg_.conv_channels.size(); ++k) {
      x = ad::conv2d(x, g.param(conv_name(k) + ".w"),
                     g.param(conv_name(k) + ".b"), 1);
      x = ad::leaky_relu(x, S(cfg_.leaky_slope));
    }
    x = ad::reshape(x, {b, flat_dim()});
    x = ad::leaky_relu(
        ad::linear_b(x, g.param("enc.fc.w"), g.param("enc.fc.b")),
        S(cfg_.leaky_slope));
    ArrayX<S> h0(int64_t(b) * cfg_.hidden);
    for (int s = 0; s < b; ++s)
      h0.segment(int64_t(s) * cfg_.hidden, cfg_.hidden) = *prev_comm[s];
    Var<S> h = ad::constant(g.tape(), {b, cfg_.hidden}, std::move(h0));
    return ad::gru_cell(x, h, gru(g, "enc.gru"));
  }

  Var<S> encode_observation(Graph<S>& g, const ObservationTensor& obs,
                            const ArrayX<S>& prev_comm) const {
    Var<S> m = encode_batch(g, {&obs}, {&prev_comm});
    return ad::row(m, 0);
  }

  /// Position embedding from (row, col) pre-normalized by the map
  /// dimensions.
  Var<S> encode_position(Graph<S>& g, const std::array<double, 2>& norm) const {
    ArrayX<S> p(2);
    p[0] = static_cast<S>(norm[0]);
    p[1] = static_cast<S>(norm[1]);
    Var<S> pv = ad::constant(g.tape(), {2}, std::move(p));
    return ad::linear_b(pv, g.param("pos.w"), g.param("pos.b"));
  }

  static std::array<double, 2> normalized_position(Coord pos,
                                                   const GridMap& map) {
    return {double(pos.row) / map.height(), double(pos.col) / map.width()};
  }

  /// Per-head normalized attention of receiver u_i over senders u_js
  /// (GATv2 ordering: nonlinearity before the attention vector). Returns
  /// one [|C_i|] softmax per head.
  std::vector<Var<S>> gat_attention(Graph<S>& g, const std::string& stage,
                                    const Var<S>& u_i,
                                    const std::vector<Var<S>>& u_js) const {
    if (u_js.empty()) throw EmptyPartnerSet();
    std::vector<Var<S>> alphas;
    for (int h = 0; h < cfg_.heads; ++h) {
      const std::string p = stage + "." + std::to_string(h);
      Var<S> s = ad::linear_b(u_i, g.param(p + ".fs.w"),
                              g.param(p + ".fs.b"));
      std::vector<Var<S>> es;
      for (const Var<S>& u_j : u_js) {
        Var<S> r = ad::linear_b(u_j, g.param(p + ".fr.w"),
                                g.param(p + ".fr.b"));
        Var<S> cat = ad::leaky_relu(ad::concat<S>({s, r}),
                                    S(cfg_.leaky_slope));
        es.push_back(ad::sum_all(ad::mul(cat, g.param(p + ".a"))));
      }
      alphas.push_back(ad::softmax(ad::concat(es)));
    }
    return alphas;
  }

  /// Attention-weighted per-head sums, concatenated, mapped by f_p and
  /// fused with m_i through the stage GRU.
  Var<S> gat_message(Graph<S>& g, const std::string& stage, const Var<S>& m_i,
                     const Var<S>& u_i, const std::vector<Var<S>>& u_js) const {
    auto alphas = gat_attention(g, stage, u_i, u_js);
    std::vector<Var<S>> heads;
    for (int h = 0; h < cfg_.heads; ++h) {
      const std::string p = stage + "." + std::to_string(h);
      Var<S> acc;
      for (size_t j = 0; j < u_js.size(); ++j) {
        Var<S> r = ad::linear_b(u_js[j], g.param(p + ".fr.w"),
                                g.param(p + ".fr.b"));
        Var<S> term = ad::mul(
            r, broadcast(g, ad::select(alphas[h], static_cast<int>(j)),
                         cfg_.head_dim()));
        acc = j == 0 ? term : ad::add(acc, term);
      }
      heads.push_back(acc);
    }
    Var<S> pooled = ad::linear_b(ad::concat(heads), g.param(stage + ".fp.w"),
                                 g.param(stage + ".fp.b"));
    return ad::gru_cell(pooled, m_i, gru(g, stage + ".gru"));
  }

  /// Dueling Q-head on one width-D message.
  Var<S> q_values(Graph<S>& g, const Var<S>& m) const {
    Var<S> h = ad::leaky_relu(
        ad::linear_b(m, g.param("q.h.w"), g.param("q.h.b")),
        S(cfg_.leaky_slope));
    Var<S> v = ad::linear_b(h, g.param("q.v.w"), g.param("q.v.b"));
    Var<S> a = ad::linear_b(h, g.param("q.a.w"), g.param("q.a.b"));
    return dueling_combine(v, a);
  }

  /// Full communication stage for agent i given already-encoded messages.
  /// Empty C_i passes m_i through unchanged.
  Var<S> communicate(Graph<S>& g,
                     const std::vector<std::array<double, 2>>& norm_pos, int i,
                     const std::vector<Var<S>>& messages,
                     const std::vector<int>& partners) const {
    if (partners.empty()) return messages[i];
    Var<S> l_i = encode_position(g, norm_pos[i]);
    Var<S> u_i = ad::concat<S>({messages[i], l_i});
    std::vector<Var<S>> u_js;
    for (int j : partners)
      u_js.push_back(
          ad::concat<S>({messages[j], encode_position(g, norm_pos[j])}));
    Var<S> personalized = gat_message(g, "gat_enc", messages[i], u_i, u_js);
    Var<S> u_hat = ad::concat<S>({personalized, l_i});
    return gat_message(g, "gat_agg", messages[i], u_i, {u_hat});
  }

  /// Decision-causal partner selection: j is kept iff zeroing j's bit in
  /// the agents channel flips agent i's greedy pre-communication action.
  /// `m_plain` must be the unmasked encodings; masked encodings are given
  /// per candidate.
  std::vector<int> select_partners(Graph<S>& g, int i,
                                   const std::vector<int>& neighbors,
                                   const Var<S>& m_plain,
                                   const std::vector<Var<S>>& m_masked) const {
    const int base = argmax_action(q_values(g, m_plain).value());
    std::vector<int> out;
    for (size_t k = 0; k < neighbors.size(); ++k)
      if (argmax_action(q_values(g, m_masked[k]).value()) != base)
        out.push_back(neighbors[k]);
    return out;
  }

  /// One inference step for the whole team.
  TeamDecision<S> act(Graph<S>& g, const GridMap& map,
                      const std::vector<AgentState>& agents,
                      const ObservationBuilder& builder,
                      const std::vector<ArrayX<S>>& prev_comm,
                      bool enable_comm = true) const {
    const int n = static_cast<int>(agents.size());
    std::vector<ObservationTensor> plain(n);
    std::vector<std::vector<int>> neighbors(n);
    std::vector<ObservationTensor> masked;
    std::vector<std::pair<int, int>> masked_owner;  // (agent, neighbor index)
    for (int i = 0; i < n; ++i) {
      plain[i] = builder.build(agents, i);
      if (!enable_comm) continue;
      neighbors[i] = fov_neighbors(agents, i, cfg_.fov);
      for (int j : neighbors[i]) {
        masked.push_back(builder.build(agents, i, j));
        masked_owner.emplace_back(i, j);
      }
    }

    std::vector<const ObservationTensor*> obs_ptr;
    std::vector<const ArrayX<S>*> comm_ptr;
    for (int i = 0; i < n; ++i) {
      obs_ptr.push_back(&plain[i]);
      comm_ptr.push_back(&prev_comm[i]);
    }
    for (size_t k = 0; k < masked.size(); ++k) {
      obs_ptr.push_back(&masked[k]);
      comm_ptr.push_back(&prev_comm[masked_owner[k].first]);
    }
    Var<S> encoded = encode_batch(g, obs_ptr, comm_ptr);

    std::vector<Var<S>> m(n);
    for (int i = 0; i < n; ++i) m[i] = ad::row(encoded, i);

    TeamDecision<S> out;
    out.partners.resize(n);
    if (enable_comm) {
      std::vector<std::vector<Var<S>>> masked_m(n);
      for (size_t k = 0; k < masked.size(); ++k)
        masked_m[masked_owner[k].first].push_back(
            ad::row(encoded, n + static_cast<int>(k)));
      for (int i = 0; i < n; ++i)
        out.partners[i] =
            select_partners(g, i, neighbors[i], m[i], masked_m[i]);
    }

    std::vector<std::array<double, 2>> norm_pos(n);
    for (int i = 0; i < n; ++i)
      norm_pos[i] = normalized_position(agents[i].pos, map);
    for (int i = 0; i < n; ++i) {
      Var<S> m_ij = communicate(g, norm_pos, i, m, out.partners[i]);
      Var<S> q = q_values(g, m_ij);
      std::vector<double> qv(cfg_.actions);
      for (int a = 0; a < cfg_.actions; ++a) qv[a] = double(q.value()[a]);
      out.q.push_back(std::move(qv));
      out.comm_state.push_back(m_ij.value());
    }
    return out;
  }

  GruParams<S> gru(Graph<S>& g, const std::string& prefix) const {
    return {g.param(prefix + ".wx_z.w"), g.param(prefix + ".wh_z.w"),
            g.param(prefix + ".wx_z.b"), g.param(prefix + ".wx_r.w"),
            g.param(prefix + ".wh_r.w"), g.param(prefix + ".wx_r.b"),
            g.param(prefix + ".wx_h.w"), g.param(prefix + ".wh_h.w"),
            g.param(prefix + ".wx_h.b")};
  }

 private:
  static std::string conv_name(size_t k) {
    return "enc.conv" + std::to_string(k);
  }

  Var<S> broadcast(Graph<S>& g, const Var<S>& s, int dim) const {
    Var<S> zeros =
        ad::constant(g.tape(), {dim}, ArrayX<S>(ArrayX<S>::Zero(dim)));
    return ad::add_scalar_tensor(zeros, s, S(1));
  }

  static void add_linear(ad::ParameterStore<S>& store, const std::string& name,
                         int in, int out, std::mt19937_64& rng) {
    auto& w = store.add(name + ".w", {in, out});
    ad::init_kaiming(w.value, in, rng);
    store.add(name + ".b", {out});
  }

  static void add_gru(ad::ParameterStore<S>& store, const std::string& prefix,
                      int dim, std::mt19937_64& rng) {
    for (const char* gate : {"z", "r", "h"}) {
      auto& wx = store.add(prefix + ".wx_" + gate + ".w", {dim, dim});
      ad::init_kaiming(wx.value, dim, rng);
      auto& wh = store.add(prefix + ".wh_" + gate + ".w", {dim, dim});
      ad::init_orthogonal(wh.value, dim, rng);
      store.add(prefix + ".wx_" + gate + ".b", {dim});
    }
  }

  NetworkConfig cfg_;
};

}  // namespace mapf::net

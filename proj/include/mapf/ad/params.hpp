#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mapf/ad/tensor.hpp"

namespace mapf::ad {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Named parameter tensors plus Adam moments. Single-writer: updates and
/// checkpoint IO are exclusive; forward passes read via immutable copies
/// bound onto a tape.
template <class S>
class ParameterStore {
 public:
  struct Entry {
    Shape shape;
    ArrayX<S> value;
    ArrayX<S> m, v;  // Adam first/second moments
  };

  Entry& add(const std::string& name, Shape shape) {
    if (entries_.count(name))
      throw std::runtime_error("duplicate parameter: " + name);
    Entry e;
    const int64_t n = numel(shape);
    e.shape = std::move(shape);
    e.value = ArrayX<S>::Zero(n);
    e.m = ArrayX<S>::Zero(n);
    e.v = ArrayX<S>::Zero(n);
    return entries_.emplace(name, std::move(e)).first->second;
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }
  Entry& at(const std::string& name) { return entries_.at(name); }
  const Entry& at(const std::string& name) const { return entries_.at(name); }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::map<std::string, Entry>& entries() { return entries_; }

  int64_t step_count() const { return adam_t_; }

  /// Adam update from accumulated per-parameter gradients.
  void apply_gradients(const std::map<std::string, ArrayX<S>>& grads,
                       const AdamConfig& cfg) {
    ++adam_t_;
    const S bc1 = S(1) - std::pow(S(cfg.beta1), S(adam_t_));
    const S bc2 = S(1) - std::pow(S(cfg.beta2), S(adam_t_));
    for (auto& [name, g] : grads) {
      Entry& e = entries_.at(name);
      e.m = S(cfg.beta1) * e.m + (S(1) - S(cfg.beta1)) * g;
      e.v = S(cfg.beta2) * e.v + (S(1) - S(cfg.beta2)) * g * g;
      e.value -= S(cfg.lr) * (e.m / bc1) /
                 ((e.v / bc2).sqrt() + S(cfg.eps));
    }
  }

  void copy_values_from(const ParameterStore<S>& other) {
    for (auto& [name, e] : entries_) e.value = other.at(name).value;
  }

  // -- checkpoint container: magic, version, record per tensor with
  //    (name, dtype, dims, raw little-endian values).
  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint for write: " + path);
    const char magic[8] = {'M', 'A', 'P', 'F', 'C', 'K', 'P', 'T'};
    f.write(magic, 8);
    const uint32_t version = 1, dtype = sizeof(S);
    const uint64_t count = entries_.size();
    f.write(reinterpret_cast<const char*>(&version), 4);
    f.write(reinterpret_cast<const char*>(&count), 8);
    for (const auto& [name, e] : entries_) {
      const uint32_t name_len = static_cast<uint32_t>(name.size());
      const uint32_t ndim = static_cast<uint32_t>(e.shape.size());
      f.write(reinterpret_cast<const char*>(&name_len), 4);
      f.write(name.data(), name_len);
      f.write(reinterpret_cast<const char*>(&dtype), 4);
      f.write(reinterpret_cast<const char*>(&ndim), 4);
      for (int d : e.shape) {
        const uint64_t dv = d;
        f.write(reinterpret_cast<const char*>(&dv), 8);
      }
      f.write(reinterpret_cast<const char*>(e.value.data()),
              e.value.size() * sizeof(S));
    }
  }

  void load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (std::string(magic, 8) != "MAPFCKPT")
      throw std::runtime_error("bad checkpoint magic: " + path);
    uint32_t version;
    uint64_t count;
    f.read(reinterpret_cast<char*>(&version), 4);
    f.read(reinterpret_cast<char*>(&count), 8);
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    entries_.clear();
    for (uint64_t i = 0; i < count; ++i) {
      uint32_t name_len, dtype, ndim;
      f.read(reinterpret_cast<char*>(&name_len), 4);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      f.read(reinterpret_cast<char*>(&dtype), 4);
      f.read(reinterpret_cast<char*>(&ndim), 4);
      if (dtype != sizeof(S))
        throw std::runtime_error("checkpoint dtype mismatch for " + name);
      Shape shape(ndim);
      for (uint32_t d = 0; d < ndim; ++d) {
        uint64_t dv;
        f.read(reinterpret_cast<char*>(&dv), 8);
        shape[d] = static_cast<int>(dv);
      }
      Entry& e = add(name, shape);
      f.read(reinterpret_cast<char*>(e.value.data()),
             e.value.size() * sizeof(S));
    }
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  }

 private:
  std::map<std::string, Entry> entries_;
  int64_t adam_t_ = 0;
};

// ---- initialization --------------------------------------------------------

/// Kaiming-uniform with fan-in.
template <class S>
void init_kaiming(ArrayX<S>& w, int fan_in, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<S>(dist(rng));
}

/// Orthogonal init for square recurrent weights (QR of a Gaussian draw).
template <class S>
void init_orthogonal(ArrayX<S>& w, int dim, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a(i, j) = dist(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  // fix sign so the factorization is unique
  Eigen::VectorXd d = qr.matrixQR().diagonal();
  for (int j = 0; j < dim; ++j)
    if (d(j) < 0) q.col(j) = -q.col(j);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) w[i * dim + j] = static_cast<S>(q(i, j));
}

// ---- tape binding ----------------------------------------------------------

/// One forward pass: a tape plus leaf nodes for every parameter touched.
/// After backward(), gradients() collects leaf grads; parameters that never
/// reached the loss are reported with zero grad.
template <class S>
class Graph {
 public:
  explicit Graph(ParameterStore<S>& store) : store_(&store) {}

  Tape<S>& tape() { return tape_; }

  Var<S> param(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return {it->second, &tape_};
    const auto& e = store_->at(name);
    Node<S>* leaf = tape_.emplace(e.shape, e.value);
    leaves_.emplace(name, leaf);
    return {leaf, &tape_};
  }

  void backward(const Var<S>& loss) { tape_.backward(loss.node); }

  /// Gradients keyed like the store; `disconnected` receives the names of
  /// bound parameters the loss never reached.
  std::map<std::string, ArrayX<S>> gradients(
      std::vector<std::string>* disconnected = nullptr) const {
    std::map<std::string, ArrayX<S>> out;
    for (const auto& [name, leaf] : leaves_) {
      if (leaf->has_grad()) {
        out.emplace(name, leaf->grad);
      } else {
        if (disconnected) disconnected->push_back(name);
        out.emplace(name, ArrayX<S>::Zero(leaf->value.size()));
      }
    }
    return out;
  }

 private:
  ParameterStore<S>* store_;
  Tape<S> tape_;
  std::map<std::string, Node<S>*> leaves_;
};

}  // namespace mapf::ad

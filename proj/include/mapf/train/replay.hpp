#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <random>
#include <stdexcept>
#include <vector>

namespace mapf::train {

class BufferEmpty : public std::runtime_error {
 public:
  BufferEmpty() : std::runtime_error("replay buffer is empty") {}
};

/// Prioritized ring buffer. Sampling probability is priority^omega via a
/// sum tree; importance weights are (N * P)^-beta normalized by the batch
/// maximum. Priorities are floored at eps_floor so every slot stays
/// sampleable. All operations are individually thread-safe.
template <class Entry>
class ReplayBuffer {
 public:
  ReplayBuffer(size_t capacity, double omega, double eps_floor)
      : capacity_(capacity), omega_(omega), eps_floor_(eps_floor) {
    tree_size_ = 1;
    while (tree_size_ < capacity_) tree_size_ <<= 1;
    tree_.assign(2 * tree_size_, 0.0);
    slots_.resize(capacity_);
    versions_.assign(capacity_, 0);
  }

  struct Batch {
    std::vector<Entry> entries;
    std::vector<size_t> indices;
    std::vector<uint64_t> versions;  // guards priority updates across overwrite
    std::vector<double> weights;
  };

  void push(Entry e, double priority) {
    std::lock_guard<std::mutex> lk(mu_);
    const size_t idx = head_;
    slots_[idx] = std::move(e);
    ++versions_[idx];
    set_mass(idx, mass_of(priority));
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }

  /// Max stored priority (for seeding fresh entries); 1 when empty.
  double max_priority() const {
    std::lock_guard<std::mutex> lk(mu_);
    return max_priority_;
  }

  size_t size() const {
    std::lock_guard<std::mutex> lk(mu_);
    return size_;
  }

  Batch sample(size_t batch, double beta, std::mt19937_64& rng) {
    std::lock_guard<std::mutex> lk(mu_);
    if (size_ == 0) throw BufferEmpty();
    Batch out;
    const double total = tree_[1];
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (size_t k = 0; k < batch; ++k) {
      // stratified draw to cover the mass evenly
      const double target = total * (k + unit(rng)) / batch;
      const size_t idx = descend(target);
      out.indices.push_back(idx);
      out.versions.push_back(versions_[idx]);
      out.entries.push_back(slots_[idx]);
      const double p = tree_[tree_size_ + idx] / total;
      out.weights.push_back(std::pow(double(size_) * p, -beta));
    }
    const double wmax =
        *std::max_element(out.weights.begin(), out.weights.end());
    for (double& w : out.weights) w /= wmax;
    return out;
  }

  /// New |TD| + eps priorities for a sampled batch; slots overwritten since
  /// the sample are skipped.
  void update_priorities(const std::vector<size_t>& indices,
                         const std::vector<uint64_t>& versions,
                         const std::vector<double>& priorities) {
    std::lock_guard<std::mutex> lk(mu_);
    for (size_t k = 0; k < indices.size(); ++k) {
      if (versions_[indices[k]] != versions[k]) continue;
      set_mass(indices[k], mass_of(priorities[k]));
    }
  }

 private:
  double mass_of(double priority) {
    const double p = std::max(priority, eps_floor_);
    max_priority_ = std::max(max_priority_, p);
    return std::pow(p, omega_);
  }

  void set_mass(size_t idx, double mass) {
    size_t node = tree_size_ + idx;
    tree_[node] = mass;
    for (node >>= 1; node >= 1; node >>= 1)
      tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
  }

  size_t descend(double target) const {
    size_t node = 1;
    while (node < tree_size_) {
      const double left = tree_[2 * node];
      if (target < left) {
        node = 2 * node;
      } else {
        target -= left;
        node = 2 * node + 1;
      }
    }
    size_t idx = node - tree_size_;
    return std::min(idx, size_ - 1);
  }

  mutable std::mutex mu_;
  size_t capacity_, tree_size_;
  double omega_, eps_floor_;
  std::vector<double> tree_;
  std::vector<Entry> slots_;
  std::vector<uint64_t> versions_;
  size_t head_ = 0, size_ = 0;
  double max_priority_ = 1.0;
};

}  // namespace mapf::train

// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "diffsynth/common.hpp"
#include "diffsynth/rng.hpp"

namespace diffsynth {

/// Flat named collection of arrays and co-indexed gradients. Layers hold
/// integer handles, so a store (and any model embedding one) is trivially
/// copyable. Buffers (running statistics) live here too but are skipped by
/// the optimizer and by gradient checks.
template <typename Real>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool trainable = true;
  };

  std::size_t add(const std::string& name, std::vector<std::size_t> shape,
                  bool trainable = true) {
    require(!index_.count(name), "param store: duplicate key '" + name + "'");
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    Entry e;
    e.name = name;
    e.shape = std::move(shape);
    e.value.assign(n, Real(0));
    e.grad.assign(n, Real(0));
    e.trainable = trainable;
    entries_.push_back(std::move(e));
    index_[name] = entries_.size() - 1;
    return entries_.size() - 1;
  }

  std::size_t add_uniform(const std::string& name, std::vector<std::size_t> shape, Rng& rng,
                          double limit) {
    const std::size_t h = add(name, std::move(shape));
    rng.fill_uniform<Real>(entries_[h].value, static_cast<Real>(-limit),
                           static_cast<Real>(limit));
    return h;
  }

  Entry& entry(std::size_t h) { return entries_[h]; }
  const Entry& entry(std::size_t h) const { return entries_[h]; }

  std::span<Real> value(std::size_t h) { return entries_[h].value; }
  std::span<const Real> value(std::size_t h) const { return entries_[h].value; }
  std::span<Real> grad(std::size_t h) { return entries_[h].grad; }
  std::span<const Real> grad(std::size_t h) const { return entries_[h].grad; }

  std::size_t count() const { return entries_.size(); }

  std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "param store: unknown key '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  void zero_grads() {
    for (auto& e : entries_) std::fill(e.grad.begin(), e.grad.end(), Real(0));
  }

  std::size_t total_trainable() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.value.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace diffsynth

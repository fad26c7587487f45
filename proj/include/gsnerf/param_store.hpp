// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gsnerf/tensor.hpp"

namespace gsnerf {

// Named trainable tensors with gradient slots and Adam moment state.
// Iteration order is the sorted name order, which keeps optimizer updates
// and checkpoints deterministic.
template <class T>
class ParamStore {
public:
  struct Slot {
    Tensor<T> value;
    Tensor<T> grad;
    Tensor<T> adam_m;
    Tensor<T> adam_v;
  };

  // Registers a parameter; throws if the name already exists.
  void add(const std::string& name, Tensor<T> init);
  bool has(const std::string& name) const { return slots_.count(name) != 0; }

  Tensor<T>& value(const std::string& name);
  const Tensor<T>& value(const std::string& name) const;
  Tensor<T>& grad(const std::string& name);
  Slot& slot(const std::string& name);

  void zero_grad();
  std::vector<std::string> names() const;
  size_t size() const { return slots_.size(); }
  int64_t total_elements() const;

  int64_t step = 0;
  uint64_t seed = 0;

  // Checkpoint container: magic "GSCK", version, step/seed, then named
  // tensors (values + Adam moments) as little-endian float64.
  void save(const std::string& path) const;
  void load(const std::string& path);

  std::map<std::string, Slot>& slots() { return slots_; }
  const std::map<std::string, Slot>& slots() const { return slots_; }

private:
  std::map<std::string, Slot> slots_;
};

extern template class ParamStore<float>;
extern template class ParamStore<double>;

}  // namespace gsnerf

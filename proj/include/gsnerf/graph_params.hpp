// Copyright Contributors to the gsnerf Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>

#include "gsnerf/graph.hpp"
#include "gsnerf/param_store.hpp"

namespace gsnerf::ad {

// Leases ParamStore tensors into a graph as differentiable leaves, one leaf
// per name per graph. After backward(), export_grads() accumulates the leaf
// gradients into the store; parameters never leased stay at zero gradient.
template <class T>
class GraphParams {
public:
  GraphParams(Graph<T>& g, gsnerf::ParamStore<T>& store) : g_(g), store_(store) {}

  Var operator()(const std::string& name) {
    auto it = leased_.find(name);
    if (it != leased_.end()) return it->second;
    Var v = g_.input(store_.value(name), /*needs_grad=*/true);
    leased_.emplace(name, v);
    return v;
  }

  void export_grads() {
    for (const auto& [name, var] : leased_) {
      if (!g_.has_grad(var)) continue;
      const Tensor<T>& src = g_.grad(var);
      Tensor<T>& dst = store_.grad(name);
      for (int64_t i = 0; i < src.numel(); ++i) dst[i] += src[i];
    }
  }

  const std::map<std::string, Var>& leased() const { return leased_; }

private:
  Graph<T>& g_;
  gsnerf::ParamStore<T>& store_;
  std::map<std::string, Var> leased_;
};

}  // namespace gsnerf::ad

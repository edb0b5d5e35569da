#pragma once

#include <map>
#include <string>
#include <vector>

#include "mvsr/nn/tensor.hpp"

namespace mvsr::nn {

/// Named parameter set. names() preserves insertion order; optimizer updates
/// and serialization walk that order, which is part of the determinism
/// contract.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor init);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) != 0; }
  const std::vector<std::string>& names() const { return order_; }
  size_t count() const { return order_.size(); }
  size_t total_elements() const;

 private:
  std::map<std::string, Tensor> by_name_;
  std::vector<std::string> order_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a ParamStore. Moment buffers are keyed by parameter name and
/// created lazily; a parameter absent from a step's gradient map is treated
/// as having zero gradient (its moments still decay).
class Adam {
 public:
  Adam(ParamStore& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {}

  void step(const std::map<std::string, Tensor>& grads);
  long steps_taken() const { return t_; }

 private:
  ParamStore* params_;
  AdamConfig cfg_;
  std::map<std::string, Tensor> m_, v_;
  long t_ = 0;
};

}  // namespace mvsr::nn

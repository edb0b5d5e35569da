#include "mvsr/nn/adam.hpp"

#include <cmath>

namespace mvsr::nn {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  check(!name.empty(), "param: empty name");
  auto [it, inserted] = by_name_.emplace(name, std::move(init));
  check(inserted, "param: duplicate name " + name);
  order_.push_back(name);
  return it->second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = by_name_.find(name);
  check(it != by_name_.end(), "param: unknown name " + name);
  return it->second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  check(it != by_name_.end(), "param: unknown name " + name);
  return it->second;
}

size_t ParamStore::total_elements() const {
  size_t n = 0;
  for (const auto& [name, t] : by_name_) n += t.numel();
  return n;
}

void Adam::step(const std::map<std::string, Tensor>& grads) {
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, double(t_));
  const double bc2 = 1.0 - std::pow(b2, double(t_));
  for (const std::string& name : params_->names()) {
    Tensor& p = params_->get(name);
    auto git = grads.find(name);
    Tensor& m = m_.try_emplace(name, Tensor(p.shape)).first->second;
    Tensor& v = v_.try_emplace(name, Tensor(p.shape)).first->second;
    check(m.same_shape(p) && v.same_shape(p), "adam: moment shape drift");
    const float* g = nullptr;
    if (git != grads.end()) {
      check(git->second.same_shape(p), "adam: gradient shape mismatch for " + name);
      g = git->second.data.data();
    }
    for (size_t i = 0; i < p.numel(); ++i) {
      double gi = g ? double(g[i]) : 0.0;
      double mi = b1 * double(m.data[i]) + (1.0 - b1) * gi;
      double vi = b2 * double(v.data[i]) + (1.0 - b2) * gi * gi;
      m.data[i] = float(mi);
      v.data[i] = float(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      p.data[i] = float(double(p.data[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

}  // namespace mvsr::nn

#include "evreg/tensor/nn.hpp"

#include <cmath>

namespace evreg::nn {

void ParamList::add(std::string name, const Var& v) {
  if (!v.defined()) return;
  for (const NamedParam& p : items_) {
    if (p.name == name) throw Error("ParamList: duplicate parameter name " + name);
  }
  items_.push_back({std::move(name), v});
}

void ParamList::append(const std::string& prefix, const ParamList& other) {
  for (const NamedParam& p : other.items_) add(prefix + "/" + p.name, p.var);
}

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (const NamedParam& p : items_) n += p.var.value().size();
  return n;
}

const Var& ParamList::find(const std::string& name) const {
  for (const NamedParam& p : items_) {
    if (p.name == name) return p.var;
  }
  throw Error("ParamList: no parameter named " + name);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool bias)
    : w_(parameter(randn({in, out}, rng, std::sqrt(2.0 / static_cast<double>(in))))) {
  if (bias) b_ = parameter(NdArray({out}));
}

Var Linear::operator()(const Var& x) const { return ops::linear(x, w_, b_); }

ParamList Linear::params() const {
  ParamList p;
  p.add("w", w_);
  p.add("b", b_);
  return p;
}

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, bool bias)
    : l1_(in, hidden, rng, bias), l2_(hidden, out, rng, bias) {}

Var Mlp::operator()(const Var& x) const { return l2_(ops::relu(l1_(x))); }

ParamList Mlp::params() const {
  ParamList p;
  p.append("fc1", l1_.params());
  p.append("fc2", l2_.params());
  return p;
}

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng,
               bool bias)
    : k_(parameter(randn({k, k, in, out}, rng,
                         std::sqrt(2.0 / static_cast<double>(k * k * in))))),
      stride_(stride) {
  if (bias) b_ = parameter(NdArray({out}));
}

Var Conv2d::operator()(const Var& x) const {
  Var y = ops::conv2d(x, k_, stride_, k_.dim(0) / 2);
  return b_.defined() ? ops::add_bias(y, b_) : y;
}

ParamList Conv2d::params() const {
  ParamList p;
  p.add("k", k_);
  p.add("b", b_);
  return p;
}

void zero_params(const ParamList& params) {
  for (const NamedParam& p : params) {
    Var v = p.var;
    v.mutable_value().fill(0.0);
  }
}

void snap_to_float(const ParamList& params) {
  for (const NamedParam& p : params) {
    Var v = p.var;
    for (double& x : v.mutable_value().values()) x = static_cast<double>(static_cast<float>(x));
  }
}

}  // namespace evreg::nn

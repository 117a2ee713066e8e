#pragma once

#include <string>
#include <vector>

#include "evreg/tensor/ops.hpp"

namespace evreg::nn {

struct NamedParam {
  std::string name;
  Var var;
};

/// Flat, ordered view of a module's trainable tensors. Names are
/// slash-separated paths and unique within a list.
class ParamList {
 public:
  void add(std::string name, const Var& v);
  void append(const std::string& prefix, const ParamList& other);

  std::size_t size() const noexcept { return items_.size(); }
  std::size_t scalar_count() const;
  const std::vector<NamedParam>& items() const noexcept { return items_; }
  std::vector<NamedParam>::const_iterator begin() const { return items_.begin(); }
  std::vector<NamedParam>::const_iterator end() const { return items_.end(); }
  const Var& find(const std::string& name) const;

 private:
  std::vector<NamedParam> items_;
};

/// Affine map over the last axis. Weights are He-normal, biases zero.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Var operator()(const Var& x) const;
  ParamList params() const;

  std::size_t in_features() const { return w_.dim(0); }
  std::size_t out_features() const { return w_.dim(1); }
  Var& weight() { return w_; }
  Var& bias() { return b_; }
  const Var& weight() const { return w_; }
  const Var& bias() const { return b_; }

 private:
  Var w_;
  Var b_;
};

/// affine -> relu -> affine
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, bool bias = true);

  Var operator()(const Var& x) const;
  ParamList params() const;

  Linear& first() { return l1_; }
  Linear& second() { return l2_; }
  const Linear& first() const { return l1_; }
  const Linear& second() const { return l2_; }

 private:
  Linear l1_;
  Linear l2_;
};

/// 2D correlation layer, kernel [k,k,in,out], padding k/2.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, Rng& rng,
         bool bias = true);

  Var operator()(const Var& x) const;
  ParamList params() const;

  Var& kernel() { return k_; }
  Var& bias() { return b_; }
  const Var& kernel() const { return k_; }
  const Var& bias() const { return b_; }

 private:
  Var k_;
  Var b_;
  std::size_t stride_ = 1;
};

/// Overwrites every parameter in place with zeros.
void zero_params(const ParamList& params);

/// Rounds every parameter value to the nearest float32.
void snap_to_float(const ParamList& params);

}  // namespace evreg::nn

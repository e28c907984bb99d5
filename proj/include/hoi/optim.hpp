#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hoi/tensor.hpp"

namespace hoi::ad {

struct Parameter {
  std::string name;
  Tensor tensor;
};

// Ordered registry of named learnable tensors. Registration order is the
// canonical order for init, checkpointing and optimizer state.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const std::vector<Parameter>& all() const { return params_; }
  std::vector<Parameter> with_prefix_excluded(const std::string& prefix) const;
  void zero_grad();
  std::int64_t total_size() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Decoupled weight decay: the decay term multiplies the parameter directly
// and never enters the moment estimates.
class AdamW {
 public:
  AdamW(std::vector<Parameter> params, AdamWConfig cfg);

  void step();
  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t step_count() const { return step_count_; }
  const std::vector<Parameter>& params() const { return params_; }

 private:
  std::vector<Parameter> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamWConfig cfg_;
  std::int64_t step_count_ = 0;
};

// Text checkpoint: `param <name> <ndim> <dims...>` then one line of hex
// floats. Hex floats round-trip bit-exact.
void save_checkpoint(const std::string& path, const ParameterStore& params);
void load_checkpoint(const std::string& path, ParameterStore& params);

}  // namespace hoi::ad

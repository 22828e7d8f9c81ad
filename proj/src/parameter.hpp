#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace retriever {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  // Adam moments, same shape as value; step counts completed updates.
  Tensor adam_m;
  Tensor adam_v;
  uint64_t step = 0;

  void accumulate_grad(std::span<const double> g);
  void clear_grad();
};

// Owns parameters in registration order; names are unique.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& get(const std::string& name);

  size_t size() const { return params_.size(); }
  size_t scalar_count() const;
  Parameter& operator[](size_t i) { return *params_[i]; }
  const Parameter& operator[](size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void clear_grads();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update over every parameter, then clears the grads.
// Fails naming the first parameter without a gradient.
void adam_step(ParameterStore& params, const AdamOptions& opts);
void adam_step(std::span<Parameter* const> params, const AdamOptions& opts);

}  // namespace retriever

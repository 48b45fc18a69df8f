#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "g2pm/autograd.hpp"

namespace g2pm::nn {

// Named parameters in insertion order. Copies share the underlying tensors;
// use clone() for an independent snapshot.
class ParameterStore {
 public:
  // The reference is invalidated by the next add; copy the Var to keep a handle.
  Var& add(const std::string& name, Tensor value, bool requires_grad = true);
  void insert(const std::string& name, Var var);

  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  // Throws ContractError for unknown names.
  const Var& at(const std::string& name) const;
  Var& at(const std::string& name);

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::pair<std::string, Var>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Var>>& entries() { return entries_; }
  std::vector<std::string> names() const;
  std::size_t num_elements() const;

  // Shares the entries whose names start with any of `prefixes`.
  ParameterStore subset(const std::vector<std::string>& prefixes) const;
  // Deep copy with fresh nodes; `requires_grad` applies to every copy.
  ParameterStore clone(bool requires_grad) const;

  void zero_grad();
  // FNV-1a over names, shapes and raw values.
  std::uint64_t checksum() const;

 private:
  std::vector<std::pair<std::string, Var>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct AdamWConfig {
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real weight_decay = 0.05;
};

struct OptimizerState {
  std::unordered_map<std::string, Tensor> m, v;
  std::uint64_t step = 0;
};

// Decoupled weight decay with bias-corrected moments. Increments state.step
// first. Throws ContractError when a parameter has no gradient buffer.
void adamw_step(ParameterStore& params, OptimizerState& state, const AdamWConfig& cfg, Real lr);

struct LRSchedule {
  Real base_lr = 3e-4;
  Real warmup_lr = 1e-7;
  Real min_lr = 1e-7;
  std::size_t warmup_epochs = 1;
  std::size_t total_epochs = 100;
  std::size_t steps_per_epoch = 1;

  std::size_t total_steps() const { return total_epochs * steps_per_epoch; }
  std::size_t warmup_steps() const { return std::min(warmup_epochs * steps_per_epoch, total_steps()); }
  void validate() const;
};

// Linear ramp warmup_lr -> base_lr over the warmup steps, then cosine decay to
// min_lr reached at the final step.
Real lr_at(const LRSchedule& s, std::size_t step);

Real global_grad_norm(const ParameterStore& params);
// Rescales all gradients when their joint L2 norm exceeds max_norm. Returns the
// norm before clipping.
Real clip_global_norm(ParameterStore& params, Real max_norm = 1.0);

// teacher <- alpha * teacher + (1 - alpha) * student, elementwise. Name sets
// and shapes must match exactly (ContractError otherwise).
void ema_update(ParameterStore& teacher, const ParameterStore& student, Real alpha);

}  // namespace g2pm::nn

#include "g2pm/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "g2pm/error.hpp"

namespace g2pm::nn {

Var& ParameterStore::add(const std::string& name, Tensor value, bool requires_grad) {
  insert(name, Var(std::move(value), requires_grad));
  return entries_.back().second;
}

void ParameterStore::insert(const std::string& name, Var var) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(var));
}

const Var& ParameterStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

Var& ParameterStore::at(const std::string& name) {
  return const_cast<Var&>(static_cast<const ParameterStore&>(*this).at(name));
}

std::vector<std::string> ParameterStore::names() const {
  std::vector<std::string> out;
  for (const auto& [n, _] : entries_) out.push_back(n);
  return out;
}

std::size_t ParameterStore::num_elements() const {
  std::size_t n = 0;
  for (const auto& [_, v] : entries_) n += v.value().size();
  return n;
}

ParameterStore ParameterStore::subset(const std::vector<std::string>& prefixes) const {
  ParameterStore out;
  for (const auto& [name, var] : entries_) {
    for (const auto& p : prefixes) {
      if (name.rfind(p, 0) == 0) {
        out.insert(name, var);
        break;
      }
    }
  }
  return out;
}

ParameterStore ParameterStore::clone(bool requires_grad) const {
  ParameterStore out;
  for (const auto& [name, var] : entries_) out.add(name, var.value(), requires_grad);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [_, v] : entries_) v.zero_grad();
}

std::uint64_t ParameterStore::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 1099511628211ULL;
  };
  for (const auto& [name, var] : entries_) {
    mix(name.data(), name.size());
    for (auto d : var.shape()) mix(&d, sizeof d);
    mix(var.value().ptr(), var.value().size() * sizeof(Real));
  }
  return h;
}

void adamw_step(ParameterStore& params, OptimizerState& state, const AdamWConfig& cfg, Real lr) {
  ++state.step;
  const Real bc1 = 1.0 - std::pow(cfg.beta1, static_cast<Real>(state.step));
  const Real bc2 = 1.0 - std::pow(cfg.beta2, static_cast<Real>(state.step));
  for (auto& [name, var] : params.entries()) {
    if (!var.requires_grad()) continue;
    if (!var.has_grad()) throw ContractError("parameter '" + name + "' has no gradient");
    auto& w = var.mutable_value();
    const auto& g = var.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) m = Tensor(w.shape());
    if (v.empty()) v = Tensor(w.shape());
    if (m.size() != w.size() || v.size() != w.size()) {
      throw ContractError("optimizer moments for '" + name + "' do not match the parameter shape");
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const Real mhat = m[i] / bc1, vhat = v[i] / bc2;
      w[i] -= lr * cfg.weight_decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

void LRSchedule::validate() const {
  if (min_lr > base_lr) throw ConfigError("min_lr must not exceed the base learning rate");
  if (steps_per_epoch == 0) throw ConfigError("steps_per_epoch must be positive");
}

Real lr_at(const LRSchedule& s, std::size_t step) {
  const std::size_t warm = s.warmup_steps(), total = s.total_steps();
  if (step < warm) {
    return s.warmup_lr + (s.base_lr - s.warmup_lr) * static_cast<Real>(step) / static_cast<Real>(warm);
  }
  if (total <= warm + 1) return total == 0 ? s.base_lr : (step + 1 >= total ? s.min_lr : s.base_lr);
  const Real t = std::clamp(static_cast<Real>(step - warm) / static_cast<Real>(total - 1 - warm), 0.0, 1.0);
  return s.min_lr + (s.base_lr - s.min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

Real global_grad_norm(const ParameterStore& params) {
  Real s = 0;
  for (const auto& [_, var] : params.entries()) {
    if (!var.has_grad()) continue;
    for (auto g : var.grad().data()) s += g * g;
  }
  return std::sqrt(s);
}

Real clip_global_norm(ParameterStore& params, Real max_norm) {
  const Real norm = global_grad_norm(params);
  if (norm > max_norm) {
    const Real f = max_norm / norm;
    for (auto& [_, var] : params.entries()) {
      if (!var.has_grad()) continue;
      for (auto& g : var.mutable_grad().data()) g *= f;
    }
  }
  return norm;
}

void ema_update(ParameterStore& teacher, const ParameterStore& student, Real alpha) {
  if (teacher.size() != student.size()) {
    throw ContractError("EMA teacher has " + std::to_string(teacher.size()) + " tensors, student " +
                        std::to_string(student.size()));
  }
  for (auto& [name, tvar] : teacher.entries()) {
    if (!student.contains(name)) throw ContractError("EMA student lacks parameter '" + name + "'");
    const auto& s = student.at(name).value();
    auto& t = tvar.mutable_value();
    if (s.shape() != t.shape()) throw ContractError("EMA shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
  }
}

}  // namespace g2pm::nn

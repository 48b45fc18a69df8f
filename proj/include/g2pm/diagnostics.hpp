#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "g2pm/graph.hpp"

namespace g2pm::diag {

// Finite-difference check of every parameter tensor of a small model, for the
// pre-training objective (reconstruction + anonymous-walk head) and for the
// supervised objective (adapter + encoders + linear head).
struct GradCheckConfig {
  std::size_t hidden_dim = 16;
  std::size_t num_heads = 2;
  std::size_t enc_layers = 1;
  std::size_t dec_layers = 1;
  std::size_t sub_enc_layers = 1;
  std::size_t tokens = 5;    // walks per instance
  std::size_t walk_len = 3;
  double init_std = 0.2;     // larger than the training default so gradients are well above FD noise
  double step = 1e-5;        // central difference step
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
};

struct TensorGradError {
  std::string objective;
  std::string name;
  std::size_t size = 0;
  double analytic_norm = 0.0;
  double rel_error = 0.0;  // ||a - n|| / max(||a||, ||n||), 0 when both vanish
};

struct GradCheckReport {
  std::vector<TensorGradError> tensors;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  double seconds = 0.0;

  bool passed() const { return max_rel_error <= tolerance; }
  nlohmann::json to_json() const;
};

GradCheckReport grad_check(const GradCheckConfig& cfg);

struct WalkStatsConfig {
  std::size_t samples_per_node = 100000;  // one-step transitions drawn per node
  std::size_t max_nodes = 1000;           // larger graphs are subsampled
  std::size_t walk_len = 8;               // for the stall rate
  std::size_t stall_walks_per_node = 10;
  std::uint64_t seed = 0;
};

struct NodeWalkStats {
  graph::NodeId node = 0;
  std::size_t degree = 0;
  double chi2 = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
};

struct WalkStatsReport {
  std::vector<NodeWalkStats> nodes;
  double pooled_chi2 = 0.0;  // sum over nodes, tested against the summed dof
  std::size_t pooled_dof = 0;
  double pooled_p = 1.0;
  double min_p = 1.0;
  double stall_rate = 0.0;   // fraction of sampled walks that hit a dead end
  std::size_t walks = 0;

  nlohmann::json to_json() const;
};

// Empirical transition histograms against the uniform-over-neighbours law.
WalkStatsReport walk_stats(const graph::Graph& g, const WalkStatsConfig& cfg);

}  // namespace g2pm::diag

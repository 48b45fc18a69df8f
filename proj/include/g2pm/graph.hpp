#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace g2pm::graph {

using NodeId = std::uint32_t;

enum class TaskKind { node, edge, graph };

const char* to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string_view name);

// One input edge before symmetrisation. `features` is empty or d_e wide.
struct EdgeInput {
  NodeId src = 0;
  NodeId dst = 0;
  std::vector<double> features;
};

// Undirected graph in CSR form. Immutable once built; safe for concurrent reads.
//
// Every undirected edge {u,v} with u != v is stored twice (u->v and v->u), a
// self loop once. Neighbour lists are sorted by target id, so two graphs built
// from the same edge set compare equal regardless of input order.
class Graph {
 public:
  Graph() = default;

  // Symmetrises and dedupes `edges` (first occurrence wins for edge features).
  // Throws ValidationError on dangling ids or feature-width mismatches.
  static Graph build(std::size_t num_nodes, std::span<const EdgeInput> edges,
                     std::vector<double> node_features, std::size_t feat_dim,
                     std::size_t edge_dim = 0);

  std::size_t num_nodes() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t num_edges() const { return num_edges_; }
  std::size_t feat_dim() const { return feat_dim_; }
  std::size_t edge_dim() const { return edge_dim_; }
  bool has_edge_features() const { return edge_dim_ > 0; }

  std::span<const std::size_t> offsets() const { return offsets_; }
  std::span<const NodeId> targets() const { return targets_; }
  std::span<const std::size_t> degrees() const { return degrees_; }
  std::span<const double> node_feature_matrix() const { return node_features_; }
  std::span<const double> edge_feature_matrix() const { return edge_features_; }

  std::size_t degree(NodeId v) const;
  // CSR segment [offsets[v], offsets[v+1]). Throws BoundsError for v >= N.
  std::span<const NodeId> neighbors(NodeId v) const;
  std::span<const double> node_features(NodeId v) const;
  // Feature row of the CSR edge at `csr_index` (empty when no edge features).
  std::span<const double> edge_features(std::size_t csr_index) const;
  bool has_edge(NodeId u, NodeId v) const;

  // Checks every CSR invariant; throws ValidationError on the first violation.
  void validate() const;

  bool operator==(const Graph&) const = default;

 private:
  std::size_t num_edges_ = 0;
  std::size_t feat_dim_ = 0;
  std::size_t edge_dim_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> targets_;
  std::vector<std::size_t> degrees_;
  std::vector<double> node_features_;
  std::vector<double> edge_features_;
};

// One-hot degree encoding for graphs without native features. Degrees at or
// above `bins - 1` share the last bin.
std::vector<double> degree_one_hot(std::span<const std::size_t> degrees, std::size_t bins = 32);

struct InstanceSpec {
  TaskKind kind = TaskKind::node;
  NodeId node = 0;        // node kind
  NodeId u = 0, v = 0;    // edge kind
  std::size_t graph = 0;  // graph this instance lives in
  std::optional<int> label;
};

struct DatasetSplit {
  std::vector<std::size_t> train, val, test;

  // Disjoint and every index < num_instances, else ValidationError.
  void validate(std::size_t num_instances) const;
  bool operator==(const DatasetSplit&) const = default;
};

// Seeded shuffle of `indices` cut 80/10/10 (train/val rounded, test the rest).
DatasetSplit make_split(std::vector<std::size_t> indices, std::uint64_t seed,
                        double train_frac = 0.8, double val_frac = 0.1);

struct Dataset {
  TaskKind task = TaskKind::node;
  std::vector<Graph> graphs;
  std::vector<InstanceSpec> instances;
  DatasetSplit split;
  std::size_t num_classes = 0;

  const Graph& graph_of(const InstanceSpec& inst) const { return graphs.at(inst.graph); }
  std::size_t feat_dim() const { return graphs.empty() ? 0 : graphs.front().feat_dim(); }
  std::size_t edge_dim() const { return graphs.empty() ? 0 : graphs.front().edge_dim(); }
  std::vector<int> labels(std::span<const std::size_t> idx) const;
  // Throws ValidationError when an instance references a missing node/graph.
  void validate() const;
};

}  // namespace g2pm::graph

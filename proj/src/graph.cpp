#include "g2pm/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_set>

#include "g2pm/error.hpp"
#include "g2pm/rng.hpp"

namespace g2pm::graph {

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::node: return "node";
    case TaskKind::edge: return "edge";
    case TaskKind::graph: return "graph";
  }
  return "?";
}

TaskKind task_kind_from_string(const std::string_view name) {
  if (name == "node") return TaskKind::node;
  if (name == "edge") return TaskKind::edge;
  if (name == "graph") return TaskKind::graph;
  throw ConfigError("unknown task kind '" + std::string(name) + "'");
}

Graph Graph::build(std::size_t num_nodes, std::span<const EdgeInput> edges,
                   std::vector<double> node_features, std::size_t feat_dim,
                   std::size_t edge_dim) {
  if (node_features.size() != num_nodes * feat_dim) {
    throw ValidationError("node feature matrix has " + std::to_string(node_features.size()) +
                          " values, expected " + std::to_string(num_nodes) + " x " +
                          std::to_string(feat_dim));
  }

  struct Half {
    NodeId src, dst;
    std::size_t input;  // index into `edges`, for feature lookup
  };
  std::vector<Half> halves;
  halves.reserve(edges.size() * 2);
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(edges.size() * 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const auto& e = edges[i];
    if (e.src >= num_nodes || e.dst >= num_nodes) {
      throw ValidationError("edge " + std::to_string(i) + " (" + std::to_string(e.src) + ", " +
                            std::to_string(e.dst) + ") references a node outside [0, " +
                            std::to_string(num_nodes) + ")");
    }
    if (e.features.size() != edge_dim) {
      throw ValidationError("edge " + std::to_string(i) + " has " +
                            std::to_string(e.features.size()) + " features, expected " +
                            std::to_string(edge_dim));
    }
    const NodeId lo = std::min(e.src, e.dst), hi = std::max(e.src, e.dst);
    const std::uint64_t key = (static_cast<std::uint64_t>(lo) << 32) | hi;
    if (!seen.insert(key).second) continue;
    halves.push_back({lo, hi, i});
    if (lo != hi) halves.push_back({hi, lo, i});
  }
  std::sort(halves.begin(), halves.end(), [](const Half& a, const Half& b) {
    return a.src != b.src ? a.src < b.src : a.dst < b.dst;
  });

  Graph g;
  g.num_edges_ = seen.size();
  g.feat_dim_ = feat_dim;
  g.edge_dim_ = edge_dim;
  g.node_features_ = std::move(node_features);
  g.offsets_.assign(num_nodes + 1, 0);
  g.targets_.reserve(halves.size());
  g.edge_features_.reserve(halves.size() * edge_dim);
  for (const auto& h : halves) {
    ++g.offsets_[h.src + 1];
    g.targets_.push_back(h.dst);
    const auto& f = edges[h.input].features;
    g.edge_features_.insert(g.edge_features_.end(), f.begin(), f.end());
  }
  std::partial_sum(g.offsets_.begin(), g.offsets_.end(), g.offsets_.begin());
  g.degrees_.resize(num_nodes);
  for (std::size_t v = 0; v < num_nodes; ++v) g.degrees_[v] = g.offsets_[v + 1] - g.offsets_[v];
  return g;
}

std::size_t Graph::degree(NodeId v) const {
  if (v >= num_nodes()) throw BoundsError("node " + std::to_string(v) + " out of range");
  return degrees_[v];
}

std::span<const NodeId> Graph::neighbors(NodeId v) const {
  if (v >= num_nodes()) {
    throw BoundsError("node " + std::to_string(v) + " out of range [0, " +
                      std::to_string(num_nodes()) + ")");
  }
  return std::span<const NodeId>(targets_).subspan(offsets_[v], offsets_[v + 1] - offsets_[v]);
}

std::span<const double> Graph::node_features(NodeId v) const {
  if (v >= num_nodes()) throw BoundsError("node " + std::to_string(v) + " out of range");
  return std::span<const double>(node_features_).subspan(v * feat_dim_, feat_dim_);
}

std::span<const double> Graph::edge_features(std::size_t csr_index) const {
  if (edge_dim_ == 0) return {};
  if (csr_index >= targets_.size()) throw BoundsError("edge index out of range");
  return std::span<const double>(edge_features_).subspan(csr_index * edge_dim_, edge_dim_);
}

bool Graph::has_edge(NodeId u, NodeId v) const {
  auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), v);
}

void Graph::validate() const {
  const std::size_t n = num_nodes();
  if (offsets_.empty() || offsets_.front() != 0) throw ValidationError("csr offsets must start at 0");
  if (offsets_.back() != targets_.size()) throw ValidationError("csr offsets[N] != len(targets)");
  if (degrees_.size() != n) throw ValidationError("degree array length != N");
  for (std::size_t v = 0; v < n; ++v) {
    if (offsets_[v + 1] < offsets_[v]) throw ValidationError("csr offsets decrease");
    if (degrees_[v] != offsets_[v + 1] - offsets_[v]) throw ValidationError("degree mismatch");
  }
  for (auto t : targets_) {
    if (t >= n) throw ValidationError("csr target out of range");
  }
  for (NodeId u = 0; u < n; ++u) {
    for (NodeId v : neighbors(u)) {
      auto back = neighbors(v);
      if (std::count(back.begin(), back.end(), u) != 1) {
        throw ValidationError("adjacency is not symmetric at (" + std::to_string(u) + ", " +
                              std::to_string(v) + ")");
      }
    }
  }
  if (node_features_.size() != n * feat_dim_) throw ValidationError("node feature size mismatch");
  if (edge_features_.size() != targets_.size() * edge_dim_) {
    throw ValidationError("edge feature size mismatch");
  }
}

std::vector<double> degree_one_hot(std::span<const std::size_t> degrees, std::size_t bins) {
  std::vector<double> out(degrees.size() * bins, 0.0);
  for (std::size_t v = 0; v < degrees.size(); ++v) {
    out[v * bins + std::min(degrees[v], bins - 1)] = 1.0;
  }
  return out;
}

void DatasetSplit::validate(std::size_t num_instances) const {
  std::vector<char> used(num_instances, 0);
  for (const auto* part : {&train, &val, &test}) {
    for (auto i : *part) {
      if (i >= num_instances) {
        throw ValidationError("split index " + std::to_string(i) + " >= instance count " +
                              std::to_string(num_instances));
      }
      if (used[i]) throw ValidationError("split index " + std::to_string(i) + " appears twice");
      used[i] = 1;
    }
  }
}

DatasetSplit make_split(std::vector<std::size_t> indices, std::uint64_t seed, double train_frac,
                        double val_frac) {
  auto rng = make_stream(seed, Stream::split);
  std::shuffle(indices.begin(), indices.end(), rng);
  const auto n = indices.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train,
                              static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n))));
  DatasetSplit s;
  s.train.assign(indices.begin(), indices.begin() + n_train);
  s.val.assign(indices.begin() + n_train, indices.begin() + n_train + n_val);
  s.test.assign(indices.begin() + n_train + n_val, indices.end());
  return s;
}

std::vector<int> Dataset::labels(std::span<const std::size_t> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) {
    const auto& inst = instances.at(i);
    if (!inst.label) throw ValidationError("instance " + std::to_string(i) + " has no label");
    out.push_back(*inst.label);
  }
  return out;
}

void Dataset::validate() const {
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    if (inst.graph >= graphs.size()) {
      throw ValidationError("instance " + std::to_string(i) + " references missing graph " +
                            std::to_string(inst.graph));
    }
    const auto n = graphs[inst.graph].num_nodes();
    const bool ok = inst.kind == TaskKind::node   ? inst.node < n
                    : inst.kind == TaskKind::edge ? (inst.u < n && inst.v < n)
                                                  : true;
    if (!ok) throw ValidationError("instance " + std::to_string(i) + " references a missing node");
    if (inst.label && (*inst.label < 0 || (num_classes > 0 && *inst.label >= static_cast<int>(num_classes)))) {
      throw ValidationError("instance " + std::to_string(i) + " label out of range");
    }
  }
  split.validate(instances.size());
}

}  // namespace g2pm::graph

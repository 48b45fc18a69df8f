#include "g2pm/tokenizer.hpp"

#include <algorithm>
#include <exception>
#include <nlohmann/json.hpp>

#include "g2pm/error.hpp"

namespace g2pm::tok {

void TokenizerConfig::validate() const {
  if (walk_len < 1) throw ConfigError("tokenizer.walk_len must be >= 1");
  if (num_patterns < 1) throw ConfigError("tokenizer.num_patterns must be >= 1");
}

Walk sample_walk(const Graph& g, NodeId start, std::size_t len, Rng& rng) {
  Walk w;
  w.nodes.reserve(len + 1);
  w.edge_rows.reserve(len + 1);
  w.nodes.push_back(start);
  w.edge_rows.push_back(kNoEdge);
  const auto offsets = g.offsets();
  const auto targets = g.targets();
  if (start >= g.num_nodes()) throw BoundsError("walk start " + std::to_string(start) + " out of range");
  NodeId cur = start;
  for (std::size_t step = 0; step < len; ++step) {
    const std::size_t deg = offsets[cur + 1] - offsets[cur];
    if (deg == 0) {
      w.stalled = true;
      w.nodes.push_back(cur);
      w.edge_rows.push_back(kNoEdge);
      continue;
    }
    const std::size_t e = offsets[cur] + std::uniform_int_distribution<std::size_t>(0, deg - 1)(rng);
    cur = targets[e];
    w.nodes.push_back(cur);
    w.edge_rows.push_back(e);
  }
  return w;
}

void append_walk_features(const Graph& g, const Walk& w, TokenBatch& batch) {
  const std::size_t dn = g.feat_dim(), de = g.edge_dim();
  if (batch.width == 0 && batch.num_walks() == 0) batch.width = dn + de;
  if (batch.width != dn + de) throw ShapeError("token batch width mismatch");
  for (std::size_t i = 0; i < w.nodes.size(); ++i) {
    auto x = g.node_features(w.nodes[i]);
    batch.rows.insert(batch.rows.end(), x.begin(), x.end());
    if (de > 0) {
      const auto e = i < w.edge_rows.size() ? w.edge_rows[i] : kNoEdge;
      if (e == kNoEdge) {
        batch.rows.insert(batch.rows.end(), de, 0.0);
      } else {
        auto ef = g.edge_features(e);
        batch.rows.insert(batch.rows.end(), ef.begin(), ef.end());
      }
    }
  }
  batch.offsets.push_back(batch.offsets.back() + w.nodes.size());
}

TokenBatch assemble_features(const Graph& g, std::span<const Walk> walks) {
  TokenBatch batch;
  batch.width = g.feat_dim() + g.edge_dim();
  for (const auto& w : walks) append_walk_features(g, w, batch);
  return batch;
}

Tokenized tokenize_instance(const Graph& g, const InstanceSpec& inst, const TokenizerConfig& cfg,
                            Rng& rng) {
  cfg.validate();
  const std::size_t k = cfg.num_patterns;
  Tokenized out;
  out.walks.reserve(k);
  switch (inst.kind) {
    case graph::TaskKind::node:
      for (std::size_t i = 0; i < k; ++i) out.walks.push_back(sample_walk(g, inst.node, cfg.walk_len, rng));
      break;
    case graph::TaskKind::edge: {
      const std::size_t from_u = (k + 1) / 2;
      for (std::size_t i = 0; i < k; ++i) {
        out.walks.push_back(sample_walk(g, i < from_u ? inst.u : inst.v, cfg.walk_len, rng));
      }
      break;
    }
    case graph::TaskKind::graph: {
      if (g.num_nodes() == 0) throw ValidationError("cannot tokenize an empty graph");
      std::uniform_int_distribution<NodeId> pick(0, static_cast<NodeId>(g.num_nodes() - 1));
      for (std::size_t i = 0; i < k; ++i) {
        const NodeId start = pick(rng);
        out.walks.push_back(sample_walk(g, start, cfg.walk_len, rng));
      }
      break;
    }
  }
  out.batch = assemble_features(g, out.walks);
  return out;
}

Rng instance_stream(std::uint64_t seed, std::size_t instance_id, std::uint64_t epoch) {
  return make_stream(seed, Stream::walks, instance_id, epoch);
}

std::vector<Tokenized> tokenize_instances(const graph::Dataset& ds, std::span<const std::size_t> ids,
                                          const TokenizerConfig& cfg, std::uint64_t epoch,
                                          Backend backend) {
  cfg.validate();
  std::vector<Tokenized> out(ids.size());
  const auto n = static_cast<std::ptrdiff_t>(ids.size());
  auto one = [&](std::ptrdiff_t i) {
    const auto& inst = ds.instances.at(ids[i]);
    auto rng = instance_stream(cfg.seed, ids[i], epoch);
    out[i] = tokenize_instance(ds.graph_of(inst), inst, cfg, rng);
  };
  if (backend == Backend::omp) {
    // Exceptions may not leave the parallel region; keep the first one.
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      try {
        one(i);
      } catch (...) {
#pragma omp critical(g2pm_tokenize_error)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) one(i);
  }
  return out;
}

std::string token_dump_record(std::size_t instance_id, std::span<const Walk> walks) {
  nlohmann::json rec;
  rec["instance"] = instance_id;
  rec["walks"] = nlohmann::json::array();
  rec["stalled"] = nlohmann::json::array();
  for (const auto& w : walks) {
    rec["walks"].push_back(w.nodes);
    rec["stalled"].push_back(w.stalled);
  }
  return rec.dump();
}

}  // namespace g2pm::tok

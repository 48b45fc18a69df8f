#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "g2pm/fields.hpp"
#include "g2pm/graph.hpp"
#include "g2pm/parallel.hpp"
#include "g2pm/rng.hpp"

namespace g2pm::tok {

using graph::Graph;
using graph::InstanceSpec;
using graph::NodeId;

struct TokenizerConfig {
  std::size_t walk_len = 8;      // transitions per walk
  std::size_t num_patterns = 8;  // walks (tokens) per instance, k
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kNoEdge = std::numeric_limits<std::size_t>::max();

struct Walk {
  std::vector<NodeId> nodes;
  // CSR index of the edge used to arrive at each position; kNoEdge at the
  // start and wherever the walk stalled or was rewritten by augmentation.
  std::vector<std::size_t> edge_rows;
  bool stalled = false;

  bool operator==(const Walk&) const = default;
};

// Row-major feature rows for a list of walks. Walk i owns rows
// [offsets[i], offsets[i+1]); each row is node features then edge features.
struct TokenBatch {
  std::size_t width = 0;
  std::vector<double> rows;
  std::vector<std::size_t> offsets{0};

  std::size_t num_walks() const { return offsets.size() - 1; }
  std::size_t num_rows() const { return offsets.back(); }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(rows).subspan(r * width, width);
  }
};

struct Tokenized {
  std::vector<Walk> walks;
  TokenBatch batch;
};

// Unbiased walk: each step picks a neighbour of the current node uniformly.
// A node without neighbours is repeated and the walk is flagged stalled.
Walk sample_walk(const Graph& g, NodeId start, std::size_t len, Rng& rng);

void append_walk_features(const Graph& g, const Walk& w, TokenBatch& batch);
TokenBatch assemble_features(const Graph& g, std::span<const Walk> walks);

// Node instances start every walk at the node; edge instances start ceil(k/2)
// walks at u and floor(k/2) at v; graph instances draw start nodes uniformly
// with replacement.
Tokenized tokenize_instance(const Graph& g, const InstanceSpec& inst, const TokenizerConfig& cfg,
                            Rng& rng);

// Stream for one instance in one epoch; independent of batch composition and
// thread scheduling.
Rng instance_stream(std::uint64_t seed, std::size_t instance_id, std::uint64_t epoch);

// Tokenises many instances, in parallel for Backend::omp. Output order follows
// `ids`; results are identical for both backends.
std::vector<Tokenized> tokenize_instances(const graph::Dataset& ds, std::span<const std::size_t> ids,
                                          const TokenizerConfig& cfg, std::uint64_t epoch,
                                          Backend backend = default_backend());

// One JSON-lines record: {"instance", "walks", "stalled"}.
std::string token_dump_record(std::size_t instance_id, std::span<const Walk> walks);

}  // namespace g2pm::tok

namespace g2pm::tok {
template <FieldsOf<TokenizerConfig> Self, class F>
void visit_fields(Self& c, F&& f) {
  f("walk_len", c.walk_len);
  f("num_patterns", c.num_patterns);
}
}  // namespace g2pm::tok

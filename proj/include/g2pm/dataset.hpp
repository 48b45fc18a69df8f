#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "g2pm/graph.hpp"

namespace g2pm::graph {

// Reads a dataset directory:
//   meta.json          {"task", "d_n", "d_e", "num_classes", "num_nodes" | "graph_sizes"}
//   edges.tsv          src dst [edge features...]   (graph tasks: graph_id src dst [...])
//   node_features.tsv  one row of floats per node   (graph tasks: graph_id first)
//   labels.tsv         instance_id class
//   split.json         optional {"train": [...], "val": [...], "test": [...]}
// Without node_features.tsv nodes get a 32-bin degree one-hot. Without split.json
// labelled instances (or all, if none are labelled) are split 80/10/10 by `split_seed`.
Dataset load_dataset(const std::filesystem::path& dir, std::optional<TaskKind> task = std::nullopt,
                     std::uint64_t split_seed = 0);

// Writes the layout above. Floats use shortest round-trip formatting, so a
// reload reproduces every graph bit-exactly.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

struct GeneratorSpec {
  enum class Kind { sbm, path, cycle, star, complete } kind = Kind::sbm;
  std::vector<std::size_t> block_sizes{100, 100};
  double p_in = 0.1;
  double p_out = 0.01;
  double mu = 1.0;          // class mean shift of the SBM features
  double noise = 1.0;       // per-dimension feature std
  std::size_t feat_dim = 8;
  std::size_t n = 10;       // path/cycle/complete size, star leaf count
};

GeneratorSpec::Kind generator_kind_from_string(std::string_view name);

// Deterministic for a fixed seed. SBM nodes carry Gaussian features centred at
// +mu (block 0) / -mu (block 1) and are labelled by block; with more than two
// blocks block b is centred at mu * e_(b mod feat_dim). The other shapes use
// degree one-hot features and carry no labels.
Dataset gen_synthetic(const GeneratorSpec& spec, std::uint64_t seed);

}  // namespace g2pm::graph

#include "g2pm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <sstream>
#include <string_view>

#include "g2pm/error.hpp"
#include "g2pm/rng.hpp"

namespace g2pm::graph {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kDegreeBins = 32;

struct Row {
  std::size_t line;
  std::vector<std::string_view> fields;
};

// Whitespace-separated rows; blank lines and '#' comments are skipped.
class TableReader {
 public:
  explicit TableReader(const fs::path& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text_ = ss.str();
  }

  std::vector<Row> rows() const {
    std::vector<Row> out;
    std::size_t line = 0, pos = 0;
    while (pos < text_.size()) {
      auto end = text_.find('\n', pos);
      if (end == std::string::npos) end = text_.size();
      ++line;
      std::string_view sv(text_.data() + pos, end - pos);
      pos = end + 1;
      Row row{line, {}};
      std::size_t i = 0;
      while (i < sv.size()) {
        while (i < sv.size() && (sv[i] == ' ' || sv[i] == '\t' || sv[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < sv.size() && sv[j] != ' ' && sv[j] != '\t' && sv[j] != '\r') ++j;
        if (j > i) row.fields.push_back(sv.substr(i, j - i));
        i = j;
      }
      if (row.fields.empty() || row.fields.front().front() == '#') continue;
      out.push_back(std::move(row));
    }
    return out;
  }

  template <typename T>
  T parse(const Row& row, std::size_t col) const {
    if (col >= row.fields.size()) {
      throw ParseError(path_.filename().string(), row.line,
                       "expected at least " + std::to_string(col + 1) + " columns");
    }
    auto f = row.fields[col];
    T value{};
    auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), value);
    if (ec != std::errc() || ptr != f.data() + f.size()) {
      throw ParseError(path_.filename().string(), row.line,
                       "malformed value '" + std::string(f) + "' in column " + std::to_string(col + 1));
    }
    if constexpr (std::is_floating_point_v<T>) {
      if (!std::isfinite(value)) {
        throw ParseError(path_.filename().string(), row.line, "non-finite value");
      }
    }
    return value;
  }

  std::string name() const { return path_.filename().string(); }

 private:
  fs::path path_;
  std::string text_;
};

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.filename().string(), 0, e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void append_double(std::string& s, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  s.append(buf, ptr);
}

}  // namespace

Dataset load_dataset(const fs::path& dir, std::optional<TaskKind> task, std::uint64_t split_seed) {
  if (!fs::is_directory(dir)) throw IoError("dataset directory " + dir.string() + " does not exist");
  const json meta = read_json(dir / "meta.json");

  Dataset ds;
  const auto meta_task = task_kind_from_string(meta.value("task", std::string("node")));
  if (task && *task != meta_task) {
    throw ValidationError(std::string("requested task '") + to_string(*task) +
                          "' but meta.json declares '" + to_string(meta_task) + "'");
  }
  ds.task = meta_task;
  const bool multi = ds.task == TaskKind::graph;
  std::size_t d_n = meta.value("d_n", std::size_t{0});
  const std::size_t d_e = meta.value("d_e", std::size_t{0});
  ds.num_classes = meta.value("num_classes", std::size_t{0});
  const std::size_t skip = multi ? 1 : 0;  // leading graph_id column

  // Nodes per graph, and the feature rows for each.
  std::vector<std::size_t> sizes;
  std::vector<std::vector<double>> features;
  bool have_features = fs::exists(dir / "node_features.tsv");
  if (have_features) {
    TableReader reader(dir / "node_features.tsv");
    for (const auto& row : reader.rows()) {
      const std::size_t gid = multi ? reader.parse<std::size_t>(row, 0) : 0;
      const std::size_t width = row.fields.size() - skip;
      if (d_n == 0) d_n = width;
      if (width != d_n) {
        throw ValidationError(reader.name() + ":" + std::to_string(row.line) + ": row has " +
                              std::to_string(width) + " features, expected d_n = " +
                              std::to_string(d_n));
      }
      if (gid >= sizes.size()) {
        sizes.resize(gid + 1, 0);
        features.resize(gid + 1);
      }
      ++sizes[gid];
      for (std::size_t c = skip; c < row.fields.size(); ++c) {
        features[gid].push_back(reader.parse<double>(row, c));
      }
    }
  } else if (multi) {
    sizes = meta.at("graph_sizes").get<std::vector<std::size_t>>();
    features.resize(sizes.size());
  } else {
    sizes = {meta.at("num_nodes").get<std::size_t>()};
    features.resize(1);
  }
  if (!multi && meta.contains("num_nodes") && meta["num_nodes"].get<std::size_t>() != sizes.at(0)) {
    throw ValidationError("meta.json num_nodes disagrees with node_features.tsv row count");
  }

  std::vector<std::vector<EdgeInput>> edges(sizes.size());
  {
    TableReader reader(dir / "edges.tsv");
    for (const auto& row : reader.rows()) {
      const std::size_t gid = multi ? reader.parse<std::size_t>(row, 0) : 0;
      if (gid >= sizes.size()) {
        throw ValidationError(reader.name() + ":" + std::to_string(row.line) +
                              ": unknown graph id " + std::to_string(gid));
      }
      EdgeInput e;
      e.src = reader.parse<NodeId>(row, skip);
      e.dst = reader.parse<NodeId>(row, skip + 1);
      if (row.fields.size() - skip - 2 != d_e) {
        throw ValidationError(reader.name() + ":" + std::to_string(row.line) + ": edge has " +
                              std::to_string(row.fields.size() - skip - 2) +
                              " features, expected d_e = " + std::to_string(d_e));
      }
      for (std::size_t c = skip + 2; c < row.fields.size(); ++c) {
        e.features.push_back(reader.parse<double>(row, c));
      }
      if (e.src >= sizes[gid] || e.dst >= sizes[gid]) {
        throw ValidationError(reader.name() + ":" + std::to_string(row.line) + ": edge (" +
                              std::to_string(e.src) + ", " + std::to_string(e.dst) +
                              ") references a node outside [0, " + std::to_string(sizes[gid]) + ")");
      }
      edges[gid].push_back(std::move(e));
    }
  }

  for (std::size_t gid = 0; gid < sizes.size(); ++gid) {
    if (have_features) {
      ds.graphs.push_back(Graph::build(sizes[gid], edges[gid], std::move(features[gid]), d_n, d_e));
    } else {
      auto g = Graph::build(sizes[gid], edges[gid], {}, 0, d_e);
      ds.graphs.push_back(Graph::build(sizes[gid], edges[gid],
                                       degree_one_hot(g.degrees(), kDegreeBins), kDegreeBins, d_e));
    }
  }

  switch (ds.task) {
    case TaskKind::node:
      for (NodeId v = 0; v < sizes[0]; ++v) ds.instances.push_back({.kind = TaskKind::node, .node = v});
      break;
    case TaskKind::graph:
      for (std::size_t g = 0; g < sizes.size(); ++g) {
        ds.instances.push_back({.kind = TaskKind::graph, .graph = g});
      }
      break;
    case TaskKind::edge:
      for (const auto& e : edges[0]) {
        ds.instances.push_back({.kind = TaskKind::edge, .u = e.src, .v = e.dst});
      }
      break;
  }

  if (fs::exists(dir / "labels.tsv")) {
    TableReader reader(dir / "labels.tsv");
    for (const auto& row : reader.rows()) {
      const auto id = reader.parse<std::size_t>(row, 0);
      const auto label = reader.parse<int>(row, 1);
      if (id >= ds.instances.size()) {
        throw ValidationError(reader.name() + ":" + std::to_string(row.line) + ": instance " +
                              std::to_string(id) + " does not exist");
      }
      if (label < 0) throw ValidationError(reader.name() + ":" + std::to_string(row.line) + ": negative class");
      ds.instances[id].label = label;
      ds.num_classes = std::max(ds.num_classes, static_cast<std::size_t>(label) + 1);
    }
  }

  if (fs::exists(dir / "split.json")) {
    const json s = read_json(dir / "split.json");
    ds.split.train = s.at("train").get<std::vector<std::size_t>>();
    ds.split.val = s.at("val").get<std::vector<std::size_t>>();
    ds.split.test = s.at("test").get<std::vector<std::size_t>>();
  } else {
    std::vector<std::size_t> labelled, all;
    for (std::size_t i = 0; i < ds.instances.size(); ++i) {
      all.push_back(i);
      if (ds.instances[i].label) labelled.push_back(i);
    }
    ds.split = make_split(labelled.empty() ? all : labelled, split_seed);
  }
  ds.validate();
  return ds;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  const bool multi = ds.task == TaskKind::graph;
  json meta;
  meta["task"] = to_string(ds.task);
  meta["d_n"] = ds.feat_dim();
  meta["d_e"] = ds.edge_dim();
  meta["num_classes"] = ds.num_classes;
  if (multi) {
    std::vector<std::size_t> sizes;
    for (const auto& g : ds.graphs) sizes.push_back(g.num_nodes());
    meta["graph_sizes"] = sizes;
  } else {
    meta["num_nodes"] = ds.graphs.at(0).num_nodes();
  }
  write_text(dir / "meta.json", meta.dump(2) + "\n");

  std::string nodes, edges;
  for (std::size_t gid = 0; gid < ds.graphs.size(); ++gid) {
    const auto& g = ds.graphs[gid];
    const std::string prefix = multi ? std::to_string(gid) + "\t" : "";
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
      nodes += prefix;
      bool first = true;
      for (double x : g.node_features(v)) {
        if (!first) nodes += '\t';
        append_double(nodes, x);
        first = false;
      }
      nodes += '\n';
      auto nb = g.neighbors(v);
      for (std::size_t j = 0; j < nb.size(); ++j) {
        if (nb[j] < v) continue;
        edges += prefix + std::to_string(v) + "\t" + std::to_string(nb[j]);
        for (double x : g.edge_features(g.offsets()[v] + j)) {
          edges += '\t';
          append_double(edges, x);
        }
        edges += '\n';
      }
    }
  }
  write_text(dir / "node_features.tsv", nodes);
  write_text(dir / "edges.tsv", edges);

  std::string labels;
  for (std::size_t i = 0; i < ds.instances.size(); ++i) {
    if (ds.instances[i].label) labels += std::to_string(i) + "\t" + std::to_string(*ds.instances[i].label) + "\n";
  }
  write_text(dir / "labels.tsv", labels);

  json split;
  split["train"] = ds.split.train;
  split["val"] = ds.split.val;
  split["test"] = ds.split.test;
  write_text(dir / "split.json", split.dump() + "\n");
}

GeneratorSpec::Kind generator_kind_from_string(std::string_view name) {
  using K = GeneratorSpec::Kind;
  if (name == "sbm") return K::sbm;
  if (name == "path") return K::path;
  if (name == "cycle") return K::cycle;
  if (name == "star") return K::star;
  if (name == "complete") return K::complete;
  throw ConfigError("unknown generator '" + std::string(name) + "'");
}

Dataset gen_synthetic(const GeneratorSpec& spec, std::uint64_t seed) {
  using K = GeneratorSpec::Kind;
  auto rng = make_stream(seed, Stream::generator);
  std::vector<EdgeInput> edges;
  std::size_t n = 0;
  std::vector<int> labels;

  switch (spec.kind) {
    case K::sbm: {
      auto ok = [](double p) { return p >= 0.0 && p <= 1.0 && std::isfinite(p); };
      if (!ok(spec.p_in) || !ok(spec.p_out)) throw ConfigError("SBM probabilities must lie in [0, 1]");
      if (spec.block_sizes.empty()) throw ConfigError("SBM needs at least one block");
      if (spec.feat_dim == 0) throw ConfigError("SBM feature dimension must be positive");
      for (std::size_t b = 0; b < spec.block_sizes.size(); ++b) {
        labels.insert(labels.end(), spec.block_sizes[b], static_cast<int>(b));
      }
      n = labels.size();
      for (NodeId u = 0; u < n; ++u) {
        for (NodeId v = u + 1; v < n; ++v) {
          const double p = labels[u] == labels[v] ? spec.p_in : spec.p_out;
          if (uniform01(rng) < p) edges.push_back({u, v, {}});
        }
      }
      break;
    }
    case K::path:
      n = spec.n;
      for (NodeId v = 0; v + 1 < n; ++v) edges.push_back({v, v + 1, {}});
      break;
    case K::cycle:
      n = spec.n;
      if (n < 3) throw ConfigError("cycle needs at least 3 nodes");
      for (NodeId v = 0; v < n; ++v) edges.push_back({v, static_cast<NodeId>((v + 1) % n), {}});
      break;
    case K::star:
      n = spec.n + 1;
      for (NodeId v = 1; v < n; ++v) edges.push_back({0, v, {}});
      break;
    case K::complete:
      n = spec.n;
      for (NodeId u = 0; u < n; ++u) {
        for (NodeId v = u + 1; v < n; ++v) edges.push_back({u, v, {}});
      }
      break;
  }

  Dataset ds;
  ds.task = TaskKind::node;
  if (spec.kind == K::sbm) {
    const std::size_t d = spec.feat_dim;
    const std::size_t blocks = spec.block_sizes.size();
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::vector<double> x(n * d);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        if (blocks == 2) {
          mean = labels[v] == 0 ? spec.mu : -spec.mu;
        } else if (c == static_cast<std::size_t>(labels[v]) % d) {
          mean = spec.mu;
        }
        x[v * d + c] = mean + noise(rng);
      }
    }
    ds.graphs.push_back(Graph::build(n, edges, std::move(x), d));
    ds.num_classes = blocks;
  } else {
    auto g = Graph::build(n, edges, {}, 0);
    ds.graphs.push_back(Graph::build(n, edges, degree_one_hot(g.degrees(), kDegreeBins), kDegreeBins));
  }

  std::vector<std::size_t> idx;
  for (NodeId v = 0; v < n; ++v) {
    InstanceSpec inst{.kind = TaskKind::node, .node = v};
    if (!labels.empty()) inst.label = labels[v];
    ds.instances.push_back(inst);
    idx.push_back(v);
  }
  ds.split = make_split(std::move(idx), seed);
  return ds;
}

}  // namespace g2pm::graph

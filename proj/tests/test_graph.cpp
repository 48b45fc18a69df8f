#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "g2pm/dataset.hpp"
#include "g2pm/error.hpp"
#include "g2pm/graph.hpp"
#include "test_util.hpp"

namespace g2pm {
namespace {

using graph::Graph;
using graph::NodeId;
using testing::TempDir;
using testing::simple_graph;
using testing::write_file;

std::vector<std::size_t> degrees_of(const Graph& g) { return {g.degrees().begin(), g.degrees().end()}; }

TEST(Graph, PathDegreesAreSymmetrised) {
  auto g = simple_graph(3, {{0, 1}, {1, 2}});
  EXPECT_EQ(degrees_of(g), (std::vector<std::size_t>{1, 2, 1}));
  EXPECT_EQ(g.num_edges(), 2u);
  auto nb = g.neighbors(1);
  EXPECT_EQ(std::vector<NodeId>(nb.begin(), nb.end()), (std::vector<NodeId>{0, 2}));
}

TEST(Graph, TriangleNeighbors) {
  auto g = simple_graph(3, {{0, 1}, {1, 2}, {2, 0}});
  auto nb = g.neighbors(0);
  EXPECT_EQ(std::vector<NodeId>(nb.begin(), nb.end()), (std::vector<NodeId>{1, 2}));
}

TEST(Graph, IsolatedNodeHasEmptySlice) {
  auto g = simple_graph(4, {{0, 1}});
  EXPECT_TRUE(g.neighbors(3).empty());
  EXPECT_EQ(g.degree(3), 0u);
}

TEST(Graph, OutOfRangeNeighborThrows) {
  auto g = simple_graph(3, {{0, 1}});
  EXPECT_THROW(g.neighbors(3), BoundsError);
}

TEST(Graph, DuplicatesAndReversedEdgesCollapse) {
  auto a = simple_graph(3, {{0, 1}, {1, 0}, {0, 1}, {1, 2}});
  auto b = simple_graph(3, {{2, 1}, {1, 0}});
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.num_edges(), 2u);
}

TEST(Graph, SelfLoopStoredOnce) {
  auto g = simple_graph(2, {{0, 0}, {0, 1}});
  EXPECT_EQ(g.degree(0), 2u);
  EXPECT_EQ(g.degree(1), 1u);
  EXPECT_TRUE(g.has_edge(0, 0));
}

TEST(Graph, EveryEdgeHasItsReverse) {
  auto ds = testing::small_sbm(3);
  const auto& g = ds.graphs[0];
  g.validate();
  std::size_t halves = 0;
  for (NodeId u = 0; u < g.num_nodes(); ++u) {
    for (auto v : g.neighbors(u)) {
      EXPECT_TRUE(g.has_edge(v, u));
      ++halves;
    }
  }
  EXPECT_EQ(halves, 2 * g.num_edges());
}

TEST(Graph, EdgeFeaturesFollowFirstOccurrence) {
  std::vector<graph::EdgeInput> edges{{0, 1, {1.0, 2.0}}, {1, 0, {9.0, 9.0}}, {1, 2, {3.0, 4.0}}};
  auto g = Graph::build(3, edges, std::vector<double>(3, 0.0), 1, 2);
  // CSR row of 1 -> 0 carries the features of the input edge (0, 1).
  const auto off = g.offsets()[1];
  auto f = g.edge_features(off);
  EXPECT_EQ(std::vector<double>(f.begin(), f.end()), (std::vector<double>{1.0, 2.0}));
}

TEST(Graph, RejectsDanglingEdges) {
  std::vector<graph::EdgeInput> edges{{0, 5, {}}};
  EXPECT_THROW(Graph::build(3, edges, std::vector<double>(3, 0.0), 1), ValidationError);
}

TEST(Graph, RejectsFeatureWidthMismatch) {
  std::vector<graph::EdgeInput> edges{{0, 1, {}}};
  EXPECT_THROW(Graph::build(3, edges, std::vector<double>(5, 0.0), 2), ValidationError);
}

TEST(Graph, DegreeOneHotSaturatesLastBin) {
  std::vector<std::size_t> deg{0, 2, 40};
  auto x = graph::degree_one_hot(deg, 4);
  ASSERT_EQ(x.size(), 12u);
  EXPECT_EQ(x[0], 1.0);
  EXPECT_EQ(x[4 + 2], 1.0);
  EXPECT_EQ(x[8 + 3], 1.0);
  double total = 0;
  for (auto v : x) total += v;
  EXPECT_EQ(total, 3.0);
}

TEST(Split, EightyTenTenOfHundred) {
  std::vector<std::size_t> idx(100);
  for (std::size_t i = 0; i < 100; ++i) idx[i] = i;
  auto s = graph::make_split(idx, 42);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  EXPECT_NO_THROW(s.validate(100));
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.test.begin(), s.test.end());
  EXPECT_EQ(all.size(), 100u);
  EXPECT_EQ(s, graph::make_split(idx, 42));
  EXPECT_NE(s, graph::make_split(idx, 43));
}

TEST(Split, OverlapIsRejected) {
  graph::DatasetSplit s{{0, 1}, {1}, {2}};
  EXPECT_THROW(s.validate(3), ValidationError);
  graph::DatasetSplit t{{0, 1}, {}, {7}};
  EXPECT_THROW(t.validate(3), ValidationError);
}

TEST(Dataset, LoadsEdgeListWithDegreeFeatures) {
  TempDir dir("load");
  write_file(dir / "meta.json", R"({"task": "node", "num_nodes": 3})");
  write_file(dir / "edges.tsv", "0 1\n1 2\n");
  auto ds = graph::load_dataset(dir.path());
  ASSERT_EQ(ds.graphs.size(), 1u);
  EXPECT_EQ(degrees_of(ds.graphs[0]), (std::vector<std::size_t>{1, 2, 1}));
  EXPECT_EQ(ds.feat_dim(), 32u);
  EXPECT_EQ(ds.instances.size(), 3u);
}

TEST(Dataset, EmptyEdgeListLoads) {
  TempDir dir("empty");
  write_file(dir / "meta.json", R"({"task": "node", "num_nodes": 5})");
  write_file(dir / "edges.tsv", "");
  auto ds = graph::load_dataset(dir.path());
  EXPECT_EQ(degrees_of(ds.graphs[0]), std::vector<std::size_t>(5, 0));
}

TEST(Dataset, MalformedRowNamesFileAndLine) {
  TempDir dir("bad");
  write_file(dir / "meta.json", R"({"task": "node", "num_nodes": 3})");
  write_file(dir / "edges.tsv", "0 1\n1 x\n");
  try {
    graph::load_dataset(dir.path());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("edges.tsv"), std::string::npos);
  }
}

TEST(Dataset, DanglingEdgeInFileIsRejected) {
  TempDir dir("dangling");
  write_file(dir / "meta.json", R"({"task": "node", "num_nodes": 3})");
  write_file(dir / "edges.tsv", "0 7\n");
  EXPECT_THROW(graph::load_dataset(dir.path()), ValidationError);
}

TEST(Dataset, MissingDirectoryIsIoError) {
  EXPECT_THROW(graph::load_dataset("/nonexistent/g2pm"), IoError);
}

TEST(Dataset, WriteLoadRoundTripIsBitExact) {
  TempDir dir("roundtrip");
  auto ds = testing::small_sbm(5);
  graph::write_dataset(ds, dir.path());
  auto back = graph::load_dataset(dir.path());
  ASSERT_EQ(back.graphs.size(), 1u);
  EXPECT_EQ(back.graphs[0], ds.graphs[0]);
  EXPECT_EQ(back.split, ds.split);
  EXPECT_EQ(back.num_classes, ds.num_classes);
  for (std::size_t i = 0; i < ds.instances.size(); ++i) EXPECT_EQ(back.instances[i].label, ds.instances[i].label);
}

TEST(Dataset, GraphTaskRoundTrip) {
  TempDir dir("graphs");
  write_file(dir / "meta.json", R"({"task": "graph", "graph_sizes": [3, 2], "num_classes": 2})");
  write_file(dir / "edges.tsv", "0 0 1\n0 1 2\n1 0 1\n");
  write_file(dir / "labels.tsv", "0 1\n1 0\n");
  auto ds = graph::load_dataset(dir.path());
  ASSERT_EQ(ds.graphs.size(), 2u);
  EXPECT_EQ(ds.instances.size(), 2u);
  EXPECT_EQ(ds.instances[0].label, 1);
  EXPECT_EQ(ds.graphs[1].num_edges(), 1u);
}

TEST(Generator, CycleAndStarDegrees) {
  graph::GeneratorSpec spec;
  spec.kind = graph::GeneratorSpec::Kind::cycle;
  spec.n = 4;
  auto c = graph::gen_synthetic(spec, 0);
  EXPECT_EQ(degrees_of(c.graphs[0]), std::vector<std::size_t>(4, 2));

  spec.kind = graph::GeneratorSpec::Kind::star;
  spec.n = 5;
  auto s = graph::gen_synthetic(spec, 0);
  const auto& g = s.graphs[0];
  EXPECT_EQ(g.degree(0), 5u);
  for (NodeId v = 1; v <= 5; ++v) EXPECT_EQ(g.degree(v), 1u);
}

TEST(Generator, InvalidProbabilityIsConfigError) {
  graph::GeneratorSpec spec;
  spec.p_in = 1.5;
  EXPECT_THROW(graph::gen_synthetic(spec, 0), ConfigError);
}

TEST(Generator, SbmIsDeterministicPerSeed) {
  TempDir a("gen_a"), b("gen_b");
  graph::GeneratorSpec spec;
  graph::write_dataset(graph::gen_synthetic(spec, 7), a.path());
  graph::write_dataset(graph::gen_synthetic(spec, 7), b.path());
  for (auto f : {"meta.json", "edges.tsv", "node_features.tsv", "labels.tsv", "split.json"}) {
    EXPECT_EQ(testing::read_file(a / f), testing::read_file(b / f)) << f;
  }
  EXPECT_NE(graph::gen_synthetic(spec, 7).graphs[0], graph::gen_synthetic(spec, 8).graphs[0]);
}

// Mean intra-block density over 20 seeds against p_in, within three standard
// errors of the binomial mean.
TEST(Generator, SbmIntraBlockDensityMatchesPIn) {
  graph::GeneratorSpec spec;  // 2 x 100, p_in 0.1, p_out 0.01
  const int seeds = 20;
  const double pairs = 2.0 * 100 * 99 / 2;
  double sum = 0;
  for (int s = 0; s < seeds; ++s) {
    auto ds = graph::gen_synthetic(spec, static_cast<std::uint64_t>(s));
    const auto& g = ds.graphs[0];
    std::size_t intra = 0;
    for (NodeId u = 0; u < g.num_nodes(); ++u) {
      for (auto v : g.neighbors(u)) {
        if (u < v && (u < 100) == (v < 100)) ++intra;
      }
    }
    sum += static_cast<double>(intra) / pairs;
  }
  const double mean = sum / seeds;
  const double se = std::sqrt(0.1 * 0.9 / (pairs * seeds));
  EXPECT_NEAR(mean, 0.1, 3 * se);
}

TEST(Generator, SbmFeaturesAreClassShifted) {
  graph::GeneratorSpec spec;
  auto ds = graph::gen_synthetic(spec, 1);
  const auto& g = ds.graphs[0];
  double m0 = 0, m1 = 0;
  for (NodeId v = 0; v < 200; ++v) {
    double s = 0;
    for (auto x : g.node_features(v)) s += x;
    (ds.instances[v].label == 0 ? m0 : m1) += s / (100.0 * g.feat_dim());
  }
  EXPECT_NEAR(m0, 1.0, 0.15);
  EXPECT_NEAR(m1, -1.0, 0.15);
  EXPECT_EQ(ds.num_classes, 2u);
  EXPECT_EQ(ds.instances[150].label, 1);
}

}  // namespace
}  // namespace g2pm

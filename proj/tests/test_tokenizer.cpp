#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>

#include "g2pm/anonymous.hpp"
#include "g2pm/dataset.hpp"
#include "g2pm/error.hpp"
#include "g2pm/tokenizer.hpp"
#include "test_util.hpp"

namespace g2pm {
namespace {

using graph::NodeId;
using testing::simple_graph;
using tok::Walk;

TEST(Walk, PathMiddleStepsToEitherEnd) {
  auto g = simple_graph(3, {{0, 1}, {1, 2}});
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    auto w = tok::sample_walk(g, 1, 1, rng);
    ASSERT_EQ(w.nodes.size(), 2u);
    EXPECT_EQ(w.nodes[0], 1u);
    EXPECT_TRUE(w.nodes[1] == 0 || w.nodes[1] == 2);
    EXPECT_FALSE(w.stalled);
  }
}

TEST(Walk, IsolatedNodeStalls) {
  auto g = simple_graph(3, {{0, 1}});
  Rng rng(1);
  auto w = tok::sample_walk(g, 2, 3, rng);
  EXPECT_EQ(w.nodes, (std::vector<NodeId>{2, 2, 2, 2}));
  EXPECT_TRUE(w.stalled);
  for (auto e : w.edge_rows) EXPECT_EQ(e, tok::kNoEdge);
}

// 10^4 one-step walks from a triangle corner: each neighbour within three
// binomial standard deviations of 1/2.
TEST(Walk, TriangleStepFrequencies) {
  auto g = simple_graph(3, {{0, 1}, {1, 2}, {2, 0}});
  Rng rng(7);
  const int n = 10000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += tok::sample_walk(g, 0, 1, rng).nodes[1] == 1;
  const double sigma = std::sqrt(n * 0.25);
  EXPECT_NEAR(ones, n / 2.0, 3 * sigma);
}

TEST(Walk, ConsecutiveNodesAreEdges) {
  auto ds = testing::small_sbm(2);
  const auto& g = ds.graphs[0];
  Rng rng(3);
  for (NodeId v = 0; v < g.num_nodes(); ++v) {
    auto w = tok::sample_walk(g, v, 8, rng);
    ASSERT_EQ(w.nodes.size(), 9u);
    for (std::size_t i = 1; i < w.nodes.size(); ++i) {
      if (w.edge_rows[i] == tok::kNoEdge) {
        EXPECT_TRUE(w.stalled);
        continue;
      }
      EXPECT_TRUE(g.has_edge(w.nodes[i - 1], w.nodes[i]));
      EXPECT_EQ(g.targets()[w.edge_rows[i]], w.nodes[i]);
    }
  }
}

TEST(Walk, FeatureRowsCarryEdgeFeatures) {
  std::vector<graph::EdgeInput> edges{{0, 1, {5.0}}};
  auto g = graph::Graph::build(2, edges, {1.0, 2.0}, 1, 1);
  Rng rng(0);
  auto w = tok::sample_walk(g, 0, 2, rng);
  auto b = tok::assemble_features(g, std::vector<Walk>{w});
  ASSERT_EQ(b.width, 2u);
  ASSERT_EQ(b.num_rows(), 3u);
  EXPECT_EQ(b.rows, (std::vector<double>{1.0, 0.0, 2.0, 5.0, 1.0, 5.0}));
}

TEST(Tokenize, NodeInstanceStartsAtNode) {
  auto ds = testing::small_sbm();
  tok::TokenizerConfig cfg;
  Rng rng(0);
  auto t = tok::tokenize_instance(ds.graphs[0], ds.instances[17], cfg, rng);
  ASSERT_EQ(t.walks.size(), 8u);
  for (const auto& w : t.walks) EXPECT_EQ(w.nodes.front(), 17u);
  EXPECT_EQ(t.batch.num_walks(), 8u);
  EXPECT_EQ(t.batch.num_rows(), 8u * 9u);
}

TEST(Tokenize, EdgeInstanceSplitsCeilFloor) {
  auto ds = testing::small_sbm();
  tok::TokenizerConfig cfg;
  cfg.num_patterns = 5;
  graph::InstanceSpec inst{.kind = graph::TaskKind::edge, .u = 3, .v = 40};
  Rng rng(0);
  auto t = tok::tokenize_instance(ds.graphs[0], inst, cfg, rng);
  int from_u = 0, from_v = 0;
  for (const auto& w : t.walks) (w.nodes.front() == 3 ? from_u : from_v)++;
  EXPECT_EQ(from_u, 3);
  EXPECT_EQ(from_v, 2);
}

TEST(Tokenize, GraphInstanceStartsAreUniform) {
  graph::GeneratorSpec spec;
  spec.kind = graph::GeneratorSpec::Kind::cycle;
  spec.n = 4;
  auto ds = graph::gen_synthetic(spec, 0);
  tok::TokenizerConfig cfg;
  cfg.num_patterns = 16;
  cfg.walk_len = 1;
  graph::InstanceSpec inst{.kind = graph::TaskKind::graph};
  Rng rng(11);
  std::vector<int> hist(4, 0);
  const int reps = 1000;
  for (int r = 0; r < reps; ++r) {
    for (const auto& w : tok::tokenize_instance(ds.graphs[0], inst, cfg, rng).walks) ++hist[w.nodes.front()];
  }
  const double n = reps * 16.0, sigma = std::sqrt(n * 0.25 * 0.75);
  for (int c : hist) EXPECT_NEAR(c, n / 4, 3 * sigma);
}

TEST(Tokenize, ZeroPatternsIsConfigError) {
  auto ds = testing::small_sbm();
  tok::TokenizerConfig cfg;
  cfg.num_patterns = 0;
  Rng rng(0);
  EXPECT_THROW(tok::tokenize_instance(ds.graphs[0], ds.instances[0], cfg, rng), ConfigError);
}

TEST(Tokenize, BackendsAgreeAndStreamsAreBatchIndependent) {
  auto ds = testing::small_sbm(4);
  tok::TokenizerConfig cfg;
  cfg.seed = 9;
  std::vector<std::size_t> ids(ds.instances.size());
  std::iota(ids.begin(), ids.end(), 0);
  auto a = tok::tokenize_instances(ds, ids, cfg, 3, Backend::serial);
  auto b = tok::tokenize_instances(ds, ids, cfg, 3, Backend::omp);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].walks, b[i].walks);
    EXPECT_EQ(a[i].batch.rows, b[i].batch.rows);
  }
  std::vector<std::size_t> one{25};
  auto c = tok::tokenize_instances(ds, one, cfg, 3, Backend::serial);
  EXPECT_EQ(c[0].walks, a[25].walks);
  auto d = tok::tokenize_instances(ds, one, cfg, 4, Backend::serial);
  EXPECT_NE(d[0].walks, a[25].walks);
}

TEST(Tokenize, ParallelErrorsPropagate) {
  auto ds = testing::small_sbm();
  tok::TokenizerConfig cfg;
  std::vector<std::size_t> ids{0, 1, 100000};
  EXPECT_THROW(tok::tokenize_instances(ds, ids, cfg, 0, Backend::omp), std::out_of_range);
}

TEST(Tokenize, DumpRecordIsJson) {
  Walk w{{1, 2, 2}, {tok::kNoEdge, 0, tok::kNoEdge}, true};
  auto j = nlohmann::json::parse(tok::token_dump_record(4, std::vector<Walk>{w}));
  EXPECT_EQ(j["instance"], 4);
  EXPECT_EQ(j["walks"][0], (std::vector<int>{1, 2, 2}));
  EXPECT_EQ(j["stalled"][0], true);
}

TEST(Anonymous, Examples) {
  std::vector<NodeId> diamond{1, 2, 3, 1, 4, 3};
  EXPECT_EQ(tok::anonymous_encode(diamond), (tok::AnonymousSeq{0, 1, 2, 0, 3, 2}));
  std::vector<NodeId> same{5, 5, 5};
  EXPECT_EQ(tok::anonymous_encode(same), (tok::AnonymousSeq{0, 0, 0}));
  std::vector<NodeId> distinct{9, 4, 7, 1};
  EXPECT_EQ(tok::anonymous_encode(distinct), (tok::AnonymousSeq{0, 1, 2, 3}));
}

TEST(Anonymous, RelabelingInvariance) {
  Rng rng(5);
  std::vector<NodeId> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  std::uniform_int_distribution<NodeId> pick(0, 49);
  for (int t = 0; t < 1000; ++t) {
    std::vector<NodeId> w(9);
    for (auto& x : w) x = pick(rng);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<NodeId> pw;
    for (auto x : w) pw.push_back(perm[x]);
    EXPECT_EQ(tok::anonymous_encode(w), tok::anonymous_encode(pw));
  }
}

// Brute force: every sequence in [0, L)^L that is a restricted-growth string.
std::size_t count_restricted_growth(std::size_t len) {
  std::vector<std::size_t> digits(len, 0);
  std::size_t count = 0;
  while (true) {
    std::size_t mx = 0;
    bool ok = digits[0] == 0;
    for (std::size_t i = 1; i < len && ok; ++i) {
      if (digits[i] > mx + 1) ok = false;
      mx = std::max(mx, digits[i]);
    }
    count += ok;
    std::size_t i = 0;
    while (i < len && ++digits[i] == len) digits[i++] = 0;
    if (i == len) break;
  }
  return count;
}

TEST(Anonymous, VocabSizesMatchEnumeration) {
  EXPECT_EQ(tok::AnonymousVocab(1).size(), 1u);
  for (std::size_t len = 1; len <= 7; ++len) {
    EXPECT_EQ(tok::AnonymousVocab(len).size(), count_restricted_growth(len)) << len;
  }
  EXPECT_EQ(tok::AnonymousVocab(4).size(), 15u);
  EXPECT_EQ(tok::AnonymousVocab(5).size(), 52u);
}

TEST(Anonymous, VocabIsSortedUniqueAndIndexed) {
  tok::AnonymousVocab v(6);
  const auto& seqs = v.sequences();
  EXPECT_TRUE(std::is_sorted(seqs.begin(), seqs.end()));
  EXPECT_EQ(std::adjacent_find(seqs.begin(), seqs.end()), seqs.end());
  for (std::size_t i = 0; i < seqs.size(); ++i) EXPECT_EQ(v.index_of(seqs[i]), i);
  tok::AnonymousSeq bad{0, 2, 1, 0, 0, 0};
  EXPECT_THROW(v.index_of(bad), ContractError);
}

TEST(Anonymous, VocabLengthLimit) {
  EXPECT_NO_THROW(tok::AnonymousVocab(9));
  EXPECT_THROW(tok::AnonymousVocab(10), ConfigError);
  EXPECT_THROW(tok::AnonymousVocab(0), ConfigError);
}

}  // namespace
}  // namespace g2pm

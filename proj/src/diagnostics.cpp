#include "g2pm/diagnostics.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>

#include "g2pm/autograd.hpp"
#include "g2pm/error.hpp"
#include "g2pm/model.hpp"
#include "g2pm/pretrain.hpp"
#include "g2pm/tokenizer.hpp"

namespace g2pm::diag {

using json = nlohmann::json;

namespace {

// Ring with chords, random node and edge features, two label classes.
graph::Dataset grad_check_data(std::uint64_t seed) {
  constexpr std::size_t n = 10, dn = 3, de = 2;
  auto rng = make_stream(seed, Stream::generator, 99);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<graph::EdgeInput> edges;
  auto edge = [&](graph::NodeId u, graph::NodeId v) {
    graph::EdgeInput e{u, v, {}};
    for (std::size_t j = 0; j < de; ++j) e.features.push_back(normal(rng));
    edges.push_back(std::move(e));
  };
  for (graph::NodeId v = 0; v < n; ++v) edge(v, static_cast<graph::NodeId>((v + 1) % n));
  edge(0, 5);
  edge(2, 7);
  edge(3, 3);
  std::vector<double> feats(n * dn);
  for (auto& x : feats) x = normal(rng);
  graph::Dataset ds;
  ds.task = graph::TaskKind::node;
  ds.num_classes = 2;
  ds.graphs.push_back(graph::Graph::build(n, edges, std::move(feats), dn, de));
  for (graph::NodeId v = 0; v < n; ++v) {
    ds.instances.push_back({.kind = graph::TaskKind::node, .node = v, .label = static_cast<int>(v % 2)});
  }
  ds.split.train = {0, 1, 2, 3, 4, 5};
  ds.split.val = {6, 7};
  ds.split.test = {8, 9};
  return ds;
}

double norm(const std::vector<double>& v) {
  double s = 0;
  for (auto x : v) s += x * x;
  return std::sqrt(s);
}

void check_store(const std::string& objective, nn::ParameterStore& params, const std::function<nn::Var()>& loss,
                 double h, GradCheckReport& report) {
  params.zero_grad();
  nn::backward(loss());
  for (auto& [name, var] : params.entries()) {
    const auto analytic = var.grad();
    std::vector<double> a(analytic.data().begin(), analytic.data().end()), num(a.size());
    auto& w = var.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double orig = w[i];
      w[i] = orig + h;
      const double up = loss().value().item();
      w[i] = orig - h;
      const double down = loss().value().item();
      w[i] = orig;
      num[i] = (up - down) / (2.0 * h);
    }
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - num[i];
    const double scale = std::max(norm(a), norm(num));
    TensorGradError e;
    e.objective = objective;
    e.name = name;
    e.size = a.size();
    e.analytic_norm = norm(a);
    e.rel_error = scale < 1e-12 ? 0.0 : norm(diff) / scale;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.tensors.push_back(e);
  }
}

}  // namespace

GradCheckReport grad_check(const GradCheckConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  GradCheckReport report;
  report.tolerance = cfg.tolerance;
  const auto ds = grad_check_data(cfg.seed);

  model::ModelConfig mc;
  mc.hidden_dim = cfg.hidden_dim;
  mc.num_heads = cfg.num_heads;
  mc.enc_layers = cfg.enc_layers;
  mc.dec_layers = cfg.dec_layers;
  mc.sub_enc_layers = cfg.sub_enc_layers;
  mc.dropout = 0.0;
  mc.init_std = cfg.init_std;

  {
    pretrain::PretrainSetup s;
    s.model = mc;
    s.tokenizer.walk_len = cfg.walk_len;
    s.tokenizer.num_patterns = cfg.tokens;
    s.pretrain.aux_topo_weight = 0.5;
    s.seed = cfg.seed;
    pretrain::Pretrainer p(ds, s);
    // Move the student away from the teacher so the reconstruction error is not
    // trivially tied to the targets.
    auto rng = make_stream(cfg.seed, Stream::init, 7);
    for (auto& [_, var] : p.model().params().entries()) {
      for (auto& x : var.mutable_value().data()) x += 0.05 * std::normal_distribution<double>(0.0, 1.0)(rng);
    }
    const std::vector<std::size_t> ids{0};
    auto params = p.model().pretrain_params();
    check_store("pretrain", params, [&] { return p.forward(ids, 0, false).total; }, cfg.step, report);
  }
  {
    const std::size_t width = ds.feat_dim() + ds.edge_dim();
    model::G2pmModel m(mc, width + 1, cfg.seed);
    m.attach_adapter(width);
    m.add_head(2, cfg.seed);
    auto rng = make_stream(cfg.seed, Stream::init, 8);
    for (auto& x : m.params().at("adapter.w").mutable_value().data()) x += 0.1 * std::normal_distribution<double>(0.0, 1.0)(rng);
    tok::TokenizerConfig tc;
    tc.walk_len = cfg.walk_len;
    tc.num_patterns = cfg.tokens;
    tc.seed = cfg.seed;
    const std::vector<std::size_t> ids{3};
    const auto toks = tok::tokenize_instances(ds, ids, tc, 0);
    const auto wf = model::to_walk_features(toks[0].batch);
    const auto offsets = model::uniform_offsets(1, cfg.tokens);
    const std::vector<std::size_t> label{1};
    auto params = m.finetune_params();
    check_store("finetune", params, [&] {
      const model::ForwardContext ctx;
      auto p = m.encode_substructures(wf, ctx);
      return nn::cross_entropy(m.pool_predict(m.encode(p, offsets, ctx), offsets), label);
    }, cfg.step, report);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

json GradCheckReport::to_json() const {
  json j;
  j["max_rel_error"] = max_rel_error;
  j["tolerance"] = tolerance;
  j["passed"] = passed();
  j["seconds"] = seconds;
  j["tensors"] = json::array();
  for (const auto& t : tensors) {
    j["tensors"].push_back({{"objective", t.objective}, {"name", t.name}, {"size", t.size},
                            {"analytic_norm", t.analytic_norm}, {"rel_error", t.rel_error}});
  }
  return j;
}

namespace {

double chi2_upper(double x, std::size_t dof) {
  if (dof == 0) return 1.0;
  boost::math::chi_squared dist(static_cast<double>(dof));
  return boost::math::cdf(boost::math::complement(dist, x));
}

}  // namespace

WalkStatsReport walk_stats(const graph::Graph& g, const WalkStatsConfig& cfg) {
  if (cfg.samples_per_node == 0) throw ConfigError("walk-stats needs at least one sample per node");
  const std::size_t n = g.num_nodes();
  std::vector<graph::NodeId> nodes(n);
  std::iota(nodes.begin(), nodes.end(), 0);
  if (cfg.max_nodes > 0 && n > cfg.max_nodes) {
    auto rng = make_stream(cfg.seed, Stream::walks, 0, 1);
    std::shuffle(nodes.begin(), nodes.end(), rng);
    nodes.resize(cfg.max_nodes);
    std::sort(nodes.begin(), nodes.end());
  }

  WalkStatsReport rep;
  std::size_t stalled = 0;
  for (auto v : nodes) {
    auto rng = make_stream(cfg.seed, Stream::walks, v, 2);
    for (std::size_t i = 0; i < cfg.stall_walks_per_node; ++i) {
      stalled += tok::sample_walk(g, v, cfg.walk_len, rng).stalled;
      ++rep.walks;
    }
    const std::size_t deg = g.degree(v);
    if (deg == 0) continue;
    const auto nbrs = g.neighbors(v);
    std::vector<std::size_t> counts(deg, 0);
    for (std::size_t s = 0; s < cfg.samples_per_node; ++s) {
      const auto w = tok::sample_walk(g, v, 1, rng);
      const auto it = std::lower_bound(nbrs.begin(), nbrs.end(), w.nodes[1]);
      if (it == nbrs.end() || *it != w.nodes[1]) throw ContractError("walk left the neighbourhood of its node");
      ++counts[static_cast<std::size_t>(it - nbrs.begin())];
    }
    NodeWalkStats st;
    st.node = v;
    st.degree = deg;
    st.dof = deg - 1;
    const double expected = static_cast<double>(cfg.samples_per_node) / static_cast<double>(deg);
    for (auto c : counts) st.chi2 += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
    st.p_value = chi2_upper(st.chi2, st.dof);
    rep.pooled_chi2 += st.chi2;
    rep.pooled_dof += st.dof;
    rep.min_p = std::min(rep.min_p, st.p_value);
    rep.nodes.push_back(st);
  }
  rep.pooled_p = chi2_upper(rep.pooled_chi2, rep.pooled_dof);
  rep.stall_rate = rep.walks ? static_cast<double>(stalled) / static_cast<double>(rep.walks) : 0.0;
  return rep;
}

json WalkStatsReport::to_json() const {
  json j;
  j["pooled_chi2"] = pooled_chi2;
  j["pooled_dof"] = pooled_dof;
  j["pooled_p"] = pooled_p;
  j["min_p"] = min_p;
  j["stall_rate"] = stall_rate;
  j["walks"] = walks;
  j["nodes"] = json::array();
  for (const auto& s : nodes) {
    j["nodes"].push_back({{"node", s.node}, {"degree", s.degree}, {"chi2", s.chi2}, {"dof", s.dof}, {"p_value", s.p_value}});
  }
  return j;
}

}  // namespace g2pm::diag

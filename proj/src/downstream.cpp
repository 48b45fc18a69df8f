#include "g2pm/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_set>

#include "g2pm/error.hpp"
#include "g2pm/optim.hpp"

namespace g2pm::downstream {

using json = nlohmann::json;
using nn::Var;

Tensor embed_instances(const G2pmModel& model, const graph::Dataset& ds, std::span<const std::size_t> ids,
                       const tok::TokenizerConfig& cfg, std::uint64_t stream_epoch, std::size_t chunk) {
  const std::size_t d = model.config().hidden_dim;
  const std::size_t width = ds.feat_dim() + ds.edge_dim();
  if (width != model.feature_dim()) {
    throw ConfigError("dataset features are " + std::to_string(width) + " wide but the encoder expects " +
                      std::to_string(model.feature_dim()) + "; attach a transfer adapter");
  }
  Tensor out = Tensor::matrix(ids.size(), d);
  nn::NoGradGuard guard;
  chunk = std::max<std::size_t>(chunk, 1);
  for (std::size_t c0 = 0; c0 < ids.size(); c0 += chunk) {
    const auto sub = ids.subspan(c0, std::min(chunk, ids.size() - c0));
    const auto toks = tok::tokenize_instances(ds, sub, cfg, stream_epoch);
    std::vector<const tok::TokenBatch*> batches;
    std::vector<std::size_t> counts;
    for (const auto& t : toks) {
      batches.push_back(&t.batch);
      counts.push_back(t.walks.size());
    }
    const auto offsets = model::offsets_from_counts(counts);
    const model::ForwardContext ctx;
    auto p = model.encode_substructures(model::concat_walk_features(batches, width), ctx);
    auto pooled = nn::segment_mean(model.encode(p, offsets, ctx), offsets);
    std::copy_n(pooled.value().ptr(), sub.size() * d, out.ptr() + c0 * d);
  }
  return out;
}

Tensor LinearHead::logits(const Tensor& x) const {
  const std::size_t m = x.rows(), d = w.rows(), c = w.cols();
  if (x.cols() != d) throw ShapeError("head expects " + std::to_string(d) + " inputs, got " + std::to_string(x.cols()));
  Tensor out = Tensor::matrix(m, c);
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t k = 0; k < c; ++k) out(r, k) = b[k];
    for (std::size_t j = 0; j < d; ++j) {
      const Real xv = x(r, j);
      for (std::size_t k = 0; k < c; ++k) out(r, k) += xv * w(j, k);
    }
  }
  return out;
}

std::vector<std::size_t> LinearHead::predict(const Tensor& x) const {
  const Tensor l = logits(x);
  std::vector<std::size_t> pred(l.rows());
  for (std::size_t r = 0; r < l.rows(); ++r) {
    const auto row = l.row(r);
    pred[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return pred;
}

Real accuracy(std::span<const std::size_t> pred, std::span<const int> labels) {
  if (pred.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += static_cast<int>(pred[i]) == labels[i];
  return static_cast<Real>(hit) / static_cast<Real>(pred.size());
}

void ProbeConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("probe.lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("probe.weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("probe.epochs must be >= 1");
}

namespace {

Tensor take_rows(const Tensor& x, std::span<const std::size_t> rows) {
  Tensor out = Tensor::matrix(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw BoundsError("row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(x.ptr() + rows[i] * x.cols(), x.cols(), out.ptr() + i * x.cols());
  }
  return out;
}

std::vector<int> take(std::span<const int> v, std::span<const std::size_t> rows) {
  std::vector<int> out;
  for (auto r : rows) out.push_back(v[r]);
  return out;
}

// Mean cross-entropy and, when requested, its gradient w.r.t. the logits.
Real softmax_xent(const Tensor& logits, std::span<const int> labels, Tensor* grad) {
  const std::size_t m = logits.rows(), c = logits.cols();
  Real loss = 0;
  if (grad) *grad = Tensor::matrix(m, c);
  for (std::size_t r = 0; r < m; ++r) {
    const auto row = logits.row(r);
    const Real mx = *std::max_element(row.begin(), row.end());
    Real s = 0;
    for (auto v : row) s += std::exp(v - mx);
    const auto y = static_cast<std::size_t>(labels[r]);
    loss += std::log(s) - (row[y] - mx);
    if (grad) {
      for (std::size_t k = 0; k < c; ++k) {
        (*grad)(r, k) = (std::exp(row[k] - mx) / s - (k == y ? 1.0 : 0.0)) / static_cast<Real>(m);
      }
    }
  }
  return m ? loss / static_cast<Real>(m) : 0.0;
}

}  // namespace

ProbeResult train_linear_probe(const Tensor& x, std::span<const int> labels, const graph::DatasetSplit& split,
                               std::size_t num_classes, const ProbeConfig& cfg) {
  cfg.validate();
  if (labels.size() != x.rows()) throw ShapeError("probe needs one label per embedding row");
  if (split.train.empty()) throw DegenerateDataError("probe training split is empty");
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
      throw ValidationError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  const auto y_train = take(labels, split.train);
  if (std::all_of(y_train.begin(), y_train.end(), [&](int l) { return l == y_train.front(); })) {
    throw DegenerateDataError("probe training split holds a single class");
  }
  const std::size_t d = x.cols(), c = num_classes;

  std::vector<Real> mu(d, 0.0), sd(d, 1.0);
  Tensor xtr = take_rows(x, split.train), xva = take_rows(x, split.val);
  if (cfg.standardize) {
    const auto n = static_cast<Real>(xtr.rows());
    for (std::size_t j = 0; j < d; ++j) {
      Real s = 0, s2 = 0;
      for (std::size_t r = 0; r < xtr.rows(); ++r) s += xtr(r, j);
      mu[j] = s / n;
      for (std::size_t r = 0; r < xtr.rows(); ++r) s2 += (xtr(r, j) - mu[j]) * (xtr(r, j) - mu[j]);
      const Real v = std::sqrt(s2 / n);
      sd[j] = v > 1e-12 ? v : 1.0;
    }
    for (auto* t : {&xtr, &xva}) {
      for (std::size_t r = 0; r < t->rows(); ++r) {
        for (std::size_t j = 0; j < d; ++j) (*t)(r, j) = ((*t)(r, j) - mu[j]) / sd[j];
      }
    }
  }
  const auto y_val = take(labels, split.val);

  nn::ParameterStore params;
  Var w = params.add("w", Tensor::matrix(d, c));
  Var b = params.add("b", Tensor({c}));
  nn::OptimizerState opt;
  const nn::AdamWConfig adam{0.9, 0.999, 1e-8, cfg.weight_decay};

  LinearHead z{w.value(), b.value()};
  LinearHead best = z;
  Real best_val = std::numeric_limits<Real>::infinity();
  std::size_t since_best = 0, epoch = 0;
  for (; epoch < cfg.epochs; ++epoch) {
    Tensor g;
    softmax_xent(z.logits(xtr), y_train, &g);
    Tensor gw = Tensor::matrix(d, c), gb = Tensor({c});
    for (std::size_t r = 0; r < xtr.rows(); ++r) {
      for (std::size_t k = 0; k < c; ++k) gb[k] += g(r, k);
      for (std::size_t j = 0; j < d; ++j) {
        const Real xv = xtr(r, j);
        for (std::size_t k = 0; k < c; ++k) gw(j, k) += xv * g(r, k);
      }
    }
    w.mutable_grad() = gw;
    b.mutable_grad() = gb;
    nn::adamw_step(params, opt, adam, cfg.lr);
    z = LinearHead{w.value(), b.value()};
    if (xva.rows() == 0) {
      best = z;
      continue;
    }
    const Real vl = softmax_xent(z.logits(xva), y_val, nullptr);
    if (vl < best_val) {
      best_val = vl;
      best = z;
      since_best = 0;
    } else if (++since_best >= cfg.patience && cfg.patience > 0) {
      ++epoch;
      break;
    }
  }

  ProbeResult res;
  res.epochs_run = epoch;
  res.head.w = Tensor::matrix(d, c);
  res.head.b = best.b;
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < c; ++k) {
      res.head.w(j, k) = best.w(j, k) / sd[j];
      res.head.b[k] -= mu[j] * res.head.w(j, k);
    }
  }
  auto acc = [&](const std::vector<std::size_t>& rows) {
    if (rows.empty()) return 0.0;
    return accuracy(res.head.predict(take_rows(x, rows)), take(labels, rows));
  };
  res.train_acc = acc(split.train);
  res.val_acc = acc(split.val);
  res.test_acc = acc(split.test);
  return res;
}

Real EvalReport::mean() const {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<Real>(values.size());
}

Real EvalReport::std() const {
  if (values.size() < 2) return 0.0;
  const Real m = mean();
  Real s = 0;
  for (auto v : values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<Real>(values.size() - 1));
}

json EvalReport::to_json() const {
  json j;
  j["task"] = task;
  j["metric"] = metric;
  j["mean"] = mean();
  j["std"] = std();
  j["num_seeds"] = values.size();
  j["seeds"] = seeds;
  j["values"] = values;
  j["config_fingerprint"] = config_fingerprint;
  if (!extra.empty()) j["extra"] = extra;
  return j;
}

std::string fingerprint(const json& config) {
  const std::string s = config.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const char* to_string(InitFrom f) { return f == InitFrom::scratch ? "scratch" : "pretrained"; }

bool parse_enum(std::string_view s, InitFrom& out) {
  if (s == "scratch") out = InitFrom::scratch;
  else if (s == "pretrained") out = InitFrom::pretrained;
  else return false;
  return true;
}

void FinetuneConfig::validate() const {
  if (batch_size < 1) throw ConfigError("finetune.batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("finetune.lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("finetune.weight_decay must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("finetune.grad_clip must be positive");
}

std::string trace_record(const TraceRow& r) {
  json j;
  j["epoch"] = r.epoch;
  j["train_loss"] = r.train_loss;
  j["val_metric"] = r.val_metric;
  return j.dump();
}

void prepare_input_width(G2pmModel& model, std::size_t data_width, bool allow) {
  if (model.has_adapter()) {
    if (model.feature_dim() != data_width) throw ConfigError("attached adapter does not match the data width");
    return;
  }
  if (data_width != model.input_dim() && !allow) {
    throw ConfigError("dataset features are " + std::to_string(data_width) + " wide but the encoder expects " +
                      std::to_string(model.input_dim()) + "; enable finetune.adapter");
  }
  if (allow) model.attach_adapter(data_width);
}

namespace {

std::size_t class_count(const graph::Dataset& ds) {
  if (ds.num_classes > 0) return ds.num_classes;
  int mx = -1;
  for (const auto& inst : ds.instances) {
    if (inst.label) mx = std::max(mx, *inst.label);
  }
  return static_cast<std::size_t>(mx + 1);
}

LinearHead head_of(const G2pmModel& model) {
  return {model.params().at("head.w").value(), model.params().at("head.b").value()};
}

}  // namespace

FinetuneResult finetune(G2pmModel& model, const graph::Dataset& ds, const tok::TokenizerConfig& tok_cfg,
                        const FinetuneConfig& cfg, const ProbeConfig& probe_cfg, std::uint64_t seed) {
  cfg.validate();
  prepare_input_width(model, ds.feat_dim() + ds.edge_dim(), cfg.adapter);
  const auto& sp = ds.split;
  std::vector<std::size_t> rows(sp.train);
  rows.insert(rows.end(), sp.val.begin(), sp.val.end());
  rows.insert(rows.end(), sp.test.begin(), sp.test.end());
  const auto labels = ds.labels(rows);
  graph::DatasetSplit local;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    (i < sp.train.size() ? local.train : i < sp.train.size() + sp.val.size() ? local.val : local.test).push_back(i);
  }
  const std::size_t classes = class_count(ds);
  auto tcfg = tok_cfg;
  tcfg.seed = seed;

  FinetuneResult res;
  res.initial = train_linear_probe(embed_instances(model, ds, rows, tcfg), labels, local, classes, probe_cfg);
  if (!model.has_head()) model.add_head(classes, seed);
  if (model.num_classes() != classes) throw ConfigError("model head has the wrong number of classes");
  model.params().at("head.w").mutable_value() = res.initial.head.w;
  model.params().at("head.b").mutable_value() = res.initial.head.b;

  auto evaluate = [&](const std::vector<std::size_t>& local_rows) {
    if (local_rows.empty()) return 0.0;
    std::vector<std::size_t> ids;
    std::vector<int> y;
    for (auto r : local_rows) {
      ids.push_back(rows[r]);
      y.push_back(labels[r]);
    }
    return accuracy(head_of(model).predict(embed_instances(model, ds, ids, tcfg)), y);
  };

  auto params = model.finetune_params();
  nn::OptimizerState opt;
  const nn::AdamWConfig adam{0.9, 0.999, 1e-8, cfg.weight_decay};
  nn::LRSchedule sched;
  sched.base_lr = cfg.lr;
  sched.warmup_lr = cfg.warmup_lr;
  sched.min_lr = cfg.min_lr;
  sched.warmup_epochs = cfg.warmup_epochs;
  sched.total_epochs = cfg.epochs;
  sched.steps_per_epoch = (sp.train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t width = ds.feat_dim() + ds.edge_dim();

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = local.train;
    auto srng = make_stream(seed, Stream::shuffle, epoch, 1);
    std::shuffle(order.begin(), order.end(), srng);
    Real loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
      std::vector<std::size_t> ids;
      std::vector<std::size_t> y;
      for (std::size_t i = b0; i < std::min(b0 + cfg.batch_size, order.size()); ++i) {
        ids.push_back(rows[order[i]]);
        y.push_back(static_cast<std::size_t>(labels[order[i]]));
      }
      params.zero_grad();
      const auto toks = tok::tokenize_instances(ds, ids, tcfg, epoch);
      std::vector<const tok::TokenBatch*> batch_ptrs;
      std::vector<std::size_t> counts;
      for (const auto& t : toks) {
        batch_ptrs.push_back(&t.batch);
        counts.push_back(t.walks.size());
      }
      const auto offsets = model::offsets_from_counts(counts);
      Rng drop = make_stream(seed, Stream::dropout, opt.step, 1);
      const model::ForwardContext ctx{true, &drop};
      auto p = model.encode_substructures(model::concat_walk_features(batch_ptrs, width), ctx);
      auto loss = nn::cross_entropy(model.pool_predict(model.encode(p, offsets, ctx), offsets), y);
      if (!std::isfinite(loss.value().item())) throw NumericError("non-finite fine-tuning loss at epoch " + std::to_string(epoch + 1));
      nn::backward(loss);
      nn::clip_global_norm(params, cfg.grad_clip);
      nn::adamw_step(params, opt, adam, nn::lr_at(sched, opt.step));
      loss_sum += loss.value().item();
      ++batches;
    }
    res.trace.push_back({epoch + 1, batches ? loss_sum / static_cast<Real>(batches) : 0.0, evaluate(local.val)});
  }
  res.val_acc = evaluate(local.val);
  res.test_acc = evaluate(local.test);
  return res;
}

Real hits_at_k(std::span<const QueryScores> queries, std::size_t k) {
  if (k == 0) throw ConfigError("hits@K needs K >= 1");
  if (queries.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& q : queries) {
    if (q.negatives.size() + 1 < k) {
      throw ConfigError("hits@" + std::to_string(k) + " needs at least " + std::to_string(k) + " candidates per query");
    }
    const auto above = std::count_if(q.negatives.begin(), q.negatives.end(), [&](Real s) { return s >= q.positive; });
    hits += static_cast<std::size_t>(above) < k;
  }
  return static_cast<Real>(hits) / static_cast<Real>(queries.size());
}

Real hits_at_k(std::span<const Real> positives, std::span<const Real> negatives, std::size_t k) {
  std::vector<QueryScores> q;
  q.reserve(positives.size());
  const std::vector<Real> negs(negatives.begin(), negatives.end());
  for (auto p : positives) q.push_back({p, negs});
  return hits_at_k(q, k);
}

void LinkConfig::validate() const {
  if (!(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0)) {
    throw ConfigError("link.train_frac and link.val_frac must leave a positive test share");
  }
  if (k < 1 || k > eval_negatives + 1) throw ConfigError("link.k must lie in [1, link.eval_negatives + 1]");
}

LinkResult eval_link(const G2pmModel& model, const graph::Dataset& ds, const tok::TokenizerConfig& tok_cfg,
                     const LinkConfig& cfg, const ProbeConfig& probe_cfg, std::uint64_t seed) {
  cfg.validate();
  if (ds.graphs.empty()) throw DegenerateDataError("link prediction needs a graph");
  const auto& g = ds.graphs.front();
  const auto n = g.num_nodes();
  if (n < 3) throw DegenerateDataError("link prediction needs at least 3 nodes");

  struct UEdge {
    graph::NodeId u, v;
    std::size_t csr;
  };
  std::vector<UEdge> edges;
  std::unordered_set<std::uint64_t> present;
  for (graph::NodeId u = 0; u < n; ++u) {
    for (std::size_t e = g.offsets()[u]; e < g.offsets()[u + 1]; ++e) {
      const auto v = g.targets()[e];
      present.insert(static_cast<std::uint64_t>(u) * n + v);
      if (u < v) edges.push_back({u, v, e});
    }
  }
  auto rng = make_stream(seed, Stream::split, 1);
  std::shuffle(edges.begin(), edges.end(), rng);
  const auto E = edges.size();
  const auto n_train = static_cast<std::size_t>(std::llround(static_cast<Real>(E) * cfg.train_frac));
  const auto n_val = std::min(static_cast<std::size_t>(std::llround(static_cast<Real>(E) * cfg.val_frac)), E - std::min(E, n_train));
  if (n_train == 0 || n_train + n_val >= E) throw DegenerateDataError("too few edges for a train/val/test link split");

  std::vector<graph::EdgeInput> train_edges;
  for (std::size_t i = 0; i < n_train; ++i) {
    graph::EdgeInput in{edges[i].u, edges[i].v, {}};
    if (g.edge_dim() > 0) {
      const auto f = g.edge_features(edges[i].csr);
      in.features.assign(f.begin(), f.end());
    }
    train_edges.push_back(std::move(in));
  }

  graph::Dataset lp;
  lp.task = graph::TaskKind::edge;
  lp.num_classes = 2;
  const auto feats = g.node_feature_matrix();
  lp.graphs.push_back(graph::Graph::build(n, train_edges, {feats.begin(), feats.end()}, g.feat_dim(), g.edge_dim()));

  auto nrng = make_stream(seed, Stream::negatives);
  std::uniform_int_distribution<graph::NodeId> pick(0, static_cast<graph::NodeId>(n - 1));
  auto negative = [&]() {
    for (;;) {
      const auto a = pick(nrng), b = pick(nrng);
      if (a != b && !present.count(static_cast<std::uint64_t>(a) * n + b)) return std::pair{std::min(a, b), std::max(a, b)};
    }
  };
  auto add = [&](graph::NodeId u, graph::NodeId v, int label) {
    lp.instances.push_back({.kind = graph::TaskKind::edge, .u = u, .v = v, .label = label});
    return lp.instances.size() - 1;
  };
  graph::DatasetSplit split;
  std::vector<std::size_t> test_pos, eval_neg;
  for (std::size_t i = 0; i < E; ++i) {
    const bool tr = i < n_train, va = !tr && i < n_train + n_val;
    const auto id = add(edges[i].u, edges[i].v, 1);
    if (tr || va) {
      const auto [a, b] = negative();
      (tr ? split.train : split.val).push_back(id);
      (tr ? split.train : split.val).push_back(add(a, b, 0));
    } else {
      test_pos.push_back(id);
    }
  }
  for (std::size_t i = 0; i < cfg.eval_negatives; ++i) {
    const auto [a, b] = negative();
    eval_neg.push_back(add(a, b, 0));
  }

  std::vector<std::size_t> all(lp.instances.size());
  std::iota(all.begin(), all.end(), 0);
  auto tcfg = tok_cfg;
  tcfg.seed = seed;
  const Tensor x = embed_instances(model, lp, all, tcfg);
  const auto labels = lp.labels(all);
  const auto probe = train_linear_probe(x, labels, split, 2, probe_cfg);
  const Tensor logits = probe.head.logits(x);
  auto score = [&](std::size_t id) { return logits(id, 1) - logits(id, 0); };
  std::vector<Real> pos, neg;
  for (auto id : test_pos) pos.push_back(score(id));
  for (auto id : eval_neg) neg.push_back(score(id));

  LinkResult res;
  res.hits = hits_at_k(pos, neg, cfg.k);
  res.train_edges = n_train;
  res.val_edges = n_val;
  res.test_edges = test_pos.size();
  return res;
}

}  // namespace g2pm::downstream

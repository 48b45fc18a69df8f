#include "g2pm/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "g2pm/checkpoint.hpp"
#include "g2pm/error.hpp"
#include "g2pm/reflect.hpp"

namespace g2pm::pretrain {

using json = nlohmann::json;

std::size_t masked_count(std::size_t n, Real mask_ratio) {
  if (n < 2) throw ContractError("mask plan needs at least 2 tokens, got " + std::to_string(n));
  const auto m = static_cast<long long>(std::llround(static_cast<Real>(n) * mask_ratio));
  return static_cast<std::size_t>(std::clamp<long long>(m, 1, static_cast<long long>(n) - 1));
}

MaskPlan make_mask_plan(std::size_t n, Real mask_ratio, Rng& rng) {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
  const std::size_t m = masked_count(n, mask_ratio);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 0; i < m; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(perm[i], perm[j]);
  }
  MaskPlan plan;
  plan.n = n;
  plan.masked.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(m));
  std::sort(plan.masked.begin(), plan.masked.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::binary_search(plan.masked.begin(), plan.masked.end(), i)) plan.visible.push_back(i);
  }
  return plan;
}

const char* to_string(AugmentMode m) {
  switch (m) {
    case AugmentMode::mixed: return "mixed";
    case AugmentMode::feature_mask: return "feature_mask";
    case AugmentMode::node_mask: return "node_mask";
    case AugmentMode::sub_corrupt: return "sub_corrupt";
    case AugmentMode::sub_inject: return "sub_inject";
    case AugmentMode::none: return "none";
  }
  return "?";
}

bool parse_enum(std::string_view s, AugmentMode& out) {
  for (auto m : {AugmentMode::mixed, AugmentMode::feature_mask, AugmentMode::node_mask, AugmentMode::sub_corrupt,
                 AugmentMode::sub_inject, AugmentMode::none}) {
    if (s == to_string(m)) {
      out = m;
      return true;
    }
  }
  return false;
}

void AugmentConfig::validate() const {
  if (!(p_feat >= 0.0 && p_feat <= 1.0)) throw ConfigError("augment.p_feat must lie in [0, 1]");
  if (!(p_struct >= 0.0 && p_struct <= 1.0)) throw ConfigError("augment.p_struct must lie in [0, 1]");
}

namespace {

bool coin(Rng& rng, Real p) { return uniform01(rng) < p; }

void corrupt_walk(tok::Walk& w, Real p, Rng& rng) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < w.nodes.size(); ++i) {
    if (!coin(rng, p)) keep.push_back(i);
  }
  if (keep.empty()) keep.push_back(0);
  tok::Walk out;
  out.stalled = w.stalled;
  for (std::size_t t = 0; t < keep.size(); ++t) {
    const std::size_t i = keep[t];
    out.nodes.push_back(w.nodes[i]);
    const bool contiguous = t > 0 && keep[t - 1] + 1 == i;
    out.edge_rows.push_back(contiguous && i < w.edge_rows.size() ? w.edge_rows[i] : tok::kNoEdge);
  }
  w = std::move(out);
}

void inject_walk(tok::Walk& w, Real p, std::size_t num_nodes, Rng& rng) {
  std::uniform_int_distribution<graph::NodeId> pick(0, static_cast<graph::NodeId>(num_nodes - 1));
  w.edge_rows.resize(w.nodes.size(), tok::kNoEdge);
  for (std::size_t i = 0; i < w.nodes.size(); ++i) {
    if (!coin(rng, p)) continue;
    w.nodes[i] = pick(rng);
    w.edge_rows[i] = tok::kNoEdge;
    if (i + 1 < w.edge_rows.size()) w.edge_rows[i + 1] = tok::kNoEdge;
  }
}

}  // namespace

Augmented augment(const graph::Graph& g, std::span<const tok::Walk> walks, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  AugmentMode feat = AugmentMode::none, str = AugmentMode::none;
  switch (cfg.mode) {
    case AugmentMode::mixed:
      feat = coin(rng, 0.5) ? AugmentMode::feature_mask : AugmentMode::node_mask;
      str = coin(rng, 0.5) ? AugmentMode::sub_corrupt : AugmentMode::sub_inject;
      break;
    case AugmentMode::feature_mask:
    case AugmentMode::node_mask:
      feat = cfg.mode;
      break;
    case AugmentMode::sub_corrupt:
    case AugmentMode::sub_inject:
      str = cfg.mode;
      break;
    case AugmentMode::none:
      break;
  }

  Augmented out;
  out.walks.assign(walks.begin(), walks.end());
  if (str == AugmentMode::sub_corrupt) {
    for (auto& w : out.walks) corrupt_walk(w, cfg.p_struct, rng);
  } else if (str == AugmentMode::sub_inject) {
    for (auto& w : out.walks) inject_walk(w, cfg.p_struct, g.num_nodes(), rng);
  }
  out.batch = tok::assemble_features(g, out.walks);

  const std::size_t width = out.batch.width;
  auto& rows = out.batch.rows;
  if (feat == AugmentMode::feature_mask) {
    for (auto& x : rows) {
      if (coin(rng, cfg.p_feat)) x = 0.0;
    }
  } else if (feat == AugmentMode::node_mask) {
    for (std::size_t r = 0; r < out.batch.num_rows(); ++r) {
      if (coin(rng, cfg.p_feat)) std::fill_n(rows.begin() + static_cast<std::ptrdiff_t>(r * width), width, 0.0);
    }
  }
  return out;
}

const char* to_string(LossNorm n) { return n == LossNorm::by_masked ? "by_masked" : "by_n"; }

bool parse_enum(std::string_view s, LossNorm& out) {
  if (s == "by_n") out = LossNorm::by_n;
  else if (s == "by_masked") out = LossNorm::by_masked;
  else return false;
  return true;
}

const char* to_string(MaskTokenKind k) {
  switch (k) {
    case MaskTokenKind::learnable: return "learnable";
    case MaskTokenKind::zero: return "zero";
    case MaskTokenKind::random: return "random";
    case MaskTokenKind::sampled: return "sampled";
  }
  return "?";
}

bool parse_enum(std::string_view s, MaskTokenKind& out) {
  for (auto k : {MaskTokenKind::learnable, MaskTokenKind::zero, MaskTokenKind::random, MaskTokenKind::sampled}) {
    if (s == to_string(k)) {
      out = k;
      return true;
    }
  }
  return false;
}

void PretrainConfig::validate() const {
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("pretrain.mask_ratio must lie in (0, 1)");
  if (ema_every < 1) throw ConfigError("pretrain.ema_every must be >= 1");
  if (batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ConfigError("pretrain.ema_momentum must lie in [0, 1]");
  if (!(aux_topo_weight >= 0.0)) throw ConfigError("pretrain.aux_topo_weight must be >= 0");
  if (!(lr > 0.0)) throw ConfigError("pretrain.lr must be positive");
  if (warmup_lr < 0.0 || min_lr < 0.0) throw ConfigError("pretrain.warmup_lr and pretrain.min_lr must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("pretrain.grad_clip must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("pretrain.beta1 and pretrain.beta2 must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("pretrain.eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("pretrain.weight_decay must be >= 0");
}

EmaTeacher EmaTeacher::from_student(const G2pmModel& model) {
  EmaTeacher t;
  t.params = model.sub_encoder_params().clone(false);
  return t;
}

bool EmaTeacher::tick(const G2pmModel& student, Real alpha, std::size_t every) {
  if (++steps_since_update < every) return false;
  nn::ema_update(params, student.sub_encoder_params(), alpha);
  steps_since_update = 0;
  ++updates;
  return true;
}

Tensor compute_targets(const G2pmModel& model, const ParameterStore& teacher, const model::WalkFeatures& clean) {
  nn::NoGradGuard guard;
  return model.encode_substructures(teacher, clean, model::ForwardContext{}).value();
}

Var msm_loss(const Var& recon, const Tensor& targets, const MaskPlan& plan, LossNorm norm) {
  return msm_loss(recon, targets, std::span<const MaskPlan>(&plan, 1), norm);
}

Var msm_loss(const Var& recon, const Tensor& targets, std::span<const MaskPlan> plans, LossNorm norm) {
  if (plans.empty()) throw ContractError("msm_loss needs at least one instance");
  std::vector<Real> weights;
  for (const auto& plan : plans) {
    const std::size_t denom = norm == LossNorm::by_n ? plan.n : std::max<std::size_t>(plan.masked.size(), 1);
    const Real w = 1.0 / (static_cast<Real>(denom) * static_cast<Real>(plans.size()));
    const std::size_t base = weights.size();
    weights.resize(base + plan.n, 0.0);
    for (auto m : plan.masked) {
      if (m >= plan.n) throw ContractError("mask plan index out of range");
      weights[base + m] = w;
    }
  }
  if (weights.size() != recon.rows()) {
    throw ShapeError("msm_loss: plans cover " + std::to_string(weights.size()) + " rows, reconstructions have " +
                     std::to_string(recon.rows()));
  }
  return nn::weighted_sq_error(recon, targets, weights);
}

Var aux_topo_loss(const Var& logits, std::span<const std::size_t> labels) {
  return nn::cross_entropy(logits, labels);
}

std::string metrics_record(const StepMetrics& m) {
  json j;
  j["step"] = m.step;
  j["epoch"] = m.epoch;
  j["loss"] = m.loss;
  j["aux_loss"] = m.aux_loss;
  j["lr"] = m.lr;
  j["grad_norm"] = m.grad_norm;
  j["ema_updates"] = m.ema_updates;
  return j.dump();
}

std::vector<std::size_t> pretrain_instances(const graph::Dataset& ds) {
  std::vector<std::size_t> ids(ds.instances.size());
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

namespace {

std::size_t aux_vocab_size(const PretrainSetup& s) {
  if (s.pretrain.aux_topo_weight <= 0.0) return 0;
  return tok::AnonymousVocab(s.tokenizer.walk_len + 1).size();
}

PretrainSetup validated(PretrainSetup s) {
  s.tokenizer.seed = s.seed;
  s.tokenizer.validate();
  s.model.validate();
  s.pretrain.validate();
  s.augment.validate();
  if (s.tokenizer.num_patterns < 2) throw ConfigError("masking needs tokenizer.num_patterns >= 2");
  if (s.pretrain.aux_topo_weight > 0.0 && s.tokenizer.walk_len + 1 > tok::kMaxAnonymousLength) {
    throw ConfigError("anonymous-walk head supports walk_len <= " + std::to_string(tok::kMaxAnonymousLength - 1) +
                      "; set pretrain.aux_topo_weight to 0 for longer walks");
  }
  return s;
}

model::WalkFeatures walk_features(std::span<const tok::TokenBatch> batches, std::size_t width) {
  std::vector<const tok::TokenBatch*> ptrs;
  for (const auto& b : batches) ptrs.push_back(&b);
  return model::concat_walk_features(ptrs, width);
}

}  // namespace

Pretrainer::Pretrainer(const graph::Dataset& ds, const PretrainSetup& setup)
    : ds_(ds),
      setup_(validated(setup)),
      model_(setup_.model, ds.feat_dim() + ds.edge_dim(), setup_.seed, aux_vocab_size(setup_),
             setup_.tokenizer.num_patterns) {
  if (ds.instances.empty()) throw DegenerateDataError("dataset has no instances to pre-train on");
  teacher_ = EmaTeacher::from_student(model_);
  trainable_ = model_.pretrain_params();
  if (setup_.pretrain.aux_topo_weight > 0.0) vocab_.emplace(setup_.tokenizer.walk_len + 1);
}

std::size_t Pretrainer::steps_per_epoch() const {
  const std::size_t n = ds_.instances.size(), b = setup_.pretrain.batch_size;
  return (n + b - 1) / b;
}

nn::LRSchedule Pretrainer::schedule() const {
  const auto& p = setup_.pretrain;
  nn::LRSchedule s;
  s.base_lr = p.lr;
  s.warmup_lr = p.warmup_lr;
  s.min_lr = p.min_lr;
  s.warmup_epochs = p.warmup_epochs;
  s.total_epochs = p.epochs;
  s.steps_per_epoch = steps_per_epoch();
  return s;
}

LossParts Pretrainer::forward(std::span<const std::size_t> ids, std::uint64_t epoch, bool training) const {
  if (ids.empty()) throw ContractError("empty pre-training batch");
  const auto& pc = setup_.pretrain;
  const std::size_t width = ds_.feat_dim() + ds_.edge_dim();
  const std::size_t k = setup_.tokenizer.num_patterns;
  const std::uint64_t seed = setup_.seed;
  const auto B = ids.size();

  auto toks = tok::tokenize_instances(ds_, ids, setup_.tokenizer, epoch);
  std::vector<tok::TokenBatch> clean(B), corrupted(B);
  for (std::size_t i = 0; i < B; ++i) clean[i] = toks[i].batch;
  const Tensor targets = compute_targets(model_, teacher_.params, walk_features(clean, width));

  for (std::size_t i = 0; i < B; ++i) {
    auto rng = make_stream(seed, Stream::augment, ids[i], epoch);
    corrupted[i] = augment(ds_.graph_of(ds_.instances[ids[i]]), toks[i].walks, setup_.augment, rng).batch;
  }

  Rng drop = make_stream(seed, Stream::dropout, opt_.step);
  const model::ForwardContext ctx{training, &drop};
  Var tokens = model_.encode_substructures(walk_features(corrupted, width), ctx);

  std::vector<MaskPlan> plans;
  std::vector<std::size_t> vis_rows, vis_counts, masked_rows;
  for (std::size_t i = 0; i < B; ++i) {
    auto rng = make_stream(seed, Stream::mask, ids[i], epoch);
    plans.push_back(make_mask_plan(k, pc.mask_ratio, rng));
    for (auto v : plans.back().visible) vis_rows.push_back(i * k + v);
    for (auto m : plans.back().masked) masked_rows.push_back(i * k + m);
    vis_counts.push_back(plans.back().visible.size());
  }

  Var h_vis = model_.encode(nn::gather_rows(tokens, vis_rows), model::offsets_from_counts(vis_counts), ctx);

  const std::size_t rows = B * k, d = setup_.model.hidden_dim;
  Var mask_rows;
  switch (pc.mask_token) {
    case MaskTokenKind::learnable:
      mask_rows = model_.learnable_mask_rows(rows);
      break;
    case MaskTokenKind::zero:
      mask_rows = Var(Tensor::matrix(rows, d));
      break;
    case MaskTokenKind::random: {
      auto rng = make_stream(seed, Stream::mask_token, opt_.step);
      mask_rows = nn::broadcast_rows(Var(model::truncated_normal({d}, setup_.model.init_std, rng)), rows);
      break;
    }
    case MaskTokenKind::sampled: {
      std::vector<std::size_t> src(rows);
      std::iota(src.begin(), src.end(), 0);
      for (std::size_t i = 0; i < B; ++i) {
        auto rng = make_stream(seed, Stream::mask_token, ids[i], epoch);
        for (auto m : plans[i].masked) {
          if (B > 1) {
            auto r = std::uniform_int_distribution<std::size_t>(0, rows - k - 1)(rng);
            src[i * k + m] = r < i * k ? r : r + k;
          } else {
            const auto& vis = plans[i].visible;
            src[m] = vis[std::uniform_int_distribution<std::size_t>(0, vis.size() - 1)(rng)];
          }
        }
      }
      mask_rows = nn::gather_rows(tokens.detach(), src);
      break;
    }
  }

  auto dec = model_.decode_full(h_vis, plans, mask_rows, ctx);
  LossParts out;
  out.msm = msm_loss(dec.recon, targets, plans, pc.loss_norm);
  out.total = out.msm;
  if (vocab_) {
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < B; ++i) {
      for (auto m : plans[i].masked) labels.push_back(vocab_->index_of(tok::anonymous_encode(toks[i].walks[m].nodes)));
    }
    out.aux = aux_topo_loss(model_.aux_logits(nn::gather_rows(dec.hidden, masked_rows)), labels);
    out.total = nn::add(out.msm, nn::scale(out.aux, pc.aux_topo_weight));
  }
  return out;
}

StepMetrics Pretrainer::step(std::span<const std::size_t> ids, std::uint64_t epoch) {
  const auto& pc = setup_.pretrain;
  trainable_.zero_grad();
  auto parts = forward(ids, epoch, true);
  StepMetrics m;
  m.epoch = epoch;
  m.loss = parts.total.value().item();
  m.aux_loss = parts.aux ? parts.aux.value().item() : 0.0;
  if (!std::isfinite(m.loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(opt_.step + 1) + " (msm " +
                       std::to_string(parts.msm.value().item()) + ", aux " + std::to_string(m.aux_loss) + ")");
  }
  nn::backward(parts.total);
  m.grad_norm = nn::clip_global_norm(trainable_, pc.grad_clip);
  m.lr = nn::lr_at(schedule(), opt_.step);
  nn::adamw_step(trainable_, opt_, pc.adamw(), m.lr);
  teacher_.tick(model_, pc.ema_momentum, pc.ema_every);
  m.step = opt_.step;
  m.ema_updates = teacher_.updates;
  return m;
}

namespace {

void write_nan_dump(const std::filesystem::path& path, const std::string& what, std::uint64_t step,
                    std::span<const std::size_t> ids, const ParameterStore& params) {
  json j;
  j["error"] = what;
  j["step"] = step;
  j["batch"] = std::vector<std::size_t>(ids.begin(), ids.end());
  json norms = json::object();
  for (const auto& [name, var] : params.entries()) {
    Real s = 0;
    bool finite = true;
    for (auto x : var.value().data()) {
      s += x * x;
      finite = finite && std::isfinite(x);
    }
    norms[name] = finite ? json(std::sqrt(s)) : json("non-finite");
  }
  j["param_norms"] = norms;
  std::ofstream(path) << j.dump(2) << '\n';
}

}  // namespace

std::vector<StepMetrics> Pretrainer::run(const LoopOptions& opts) {
  const auto& pc = setup_.pretrain;
  const std::size_t spe = steps_per_epoch();
  std::ofstream metrics;
  const auto ckpt_path = opts.out_dir / "checkpoint.bin";
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    const auto path = opts.out_dir / "metrics.jsonl";
    metrics.open(path, opt_.step > 0 ? std::ios::app : std::ios::trunc);
    if (!metrics) throw IoError("cannot open " + path.string() + " for writing");
  }

  std::vector<StepMetrics> trace;
  const auto all = pretrain_instances(ds_);
  for (std::uint64_t epoch = opt_.step / spe; epoch < pc.epochs; ++epoch) {
    auto order = all;
    auto rng = make_stream(setup_.seed, Stream::shuffle, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = opt_.step - epoch * spe; b < spe; ++b) {
      if (opts.max_steps && opt_.step >= *opts.max_steps) goto done;
      const auto first = b * pc.batch_size;
      const auto last = std::min(first + pc.batch_size, order.size());
      std::span<const std::size_t> ids(order.data() + first, last - first);
      StepMetrics m;
      try {
        m = step(ids, epoch);
      } catch (const NumericError& e) {
        if (!opts.out_dir.empty()) write_nan_dump(opts.out_dir / "nan_dump.json", e.what(), opt_.step + 1, ids, model_.params());
        throw;
      }
      trace.push_back(m);
      if (metrics.is_open()) metrics << metrics_record(m) << '\n' << std::flush;
      if (!opts.out_dir.empty() && pc.checkpoint_every > 0 && m.step % pc.checkpoint_every == 0) save(ckpt_path);
    }
  }
done:
  if (!opts.out_dir.empty()) save(ckpt_path);
  return trace;
}

void Pretrainer::save(const std::filesystem::path& path) const {
  nn::Checkpoint ckpt;
  model_.save(ckpt, "model/");
  auto& meta = ckpt.meta["pretrain/"];
  meta["step"] = opt_.step;
  meta["ema_updates"] = teacher_.updates;
  meta["steps_since_update"] = teacher_.steps_since_update;
  meta["seed"] = setup_.seed;
  meta["tokenizer"] = reflect::to_json(setup_.tokenizer);
  meta["pretrain"] = reflect::to_json(setup_.pretrain);
  meta["augment"] = reflect::to_json(setup_.augment);
  for (const auto& [name, var] : teacher_.params.entries()) ckpt.tensors.emplace_back("teacher/" + name, var.value());
  for (const auto& [name, _] : trainable_.entries()) {
    if (auto it = opt_.m.find(name); it != opt_.m.end()) ckpt.tensors.emplace_back("adam.m/" + name, it->second);
    if (auto it = opt_.v.find(name); it != opt_.v.end()) ckpt.tensors.emplace_back("adam.v/" + name, it->second);
  }
  nn::save_checkpoint(path, ckpt);
}

void Pretrainer::resume(const std::filesystem::path& path) {
  const auto ckpt = nn::load_checkpoint(path);
  if (!ckpt.meta.contains("pretrain/")) throw ContractError(path.string() + " is not a pre-training checkpoint");
  const auto loaded = G2pmModel::load(ckpt, "model/");
  if (loaded.params().names() != model_.params().names()) {
    throw ConfigError(path.string() + " was written by a differently configured model");
  }
  for (auto& [name, var] : model_.params().entries()) {
    const auto& t = loaded.params().at(name).value();
    if (t.shape() != var.shape()) throw ConfigError("checkpoint tensor '" + name + "' has the wrong shape");
    var.mutable_value() = t;
  }
  for (auto& [name, var] : teacher_.params.entries()) var.mutable_value() = ckpt.tensor("teacher/" + name);
  const auto& meta = ckpt.meta.at("pretrain/");
  opt_ = nn::OptimizerState{};
  opt_.step = meta.at("step").get<std::uint64_t>();
  for (const auto& [name, _] : trainable_.entries()) {
    if (ckpt.has("adam.m/" + name)) opt_.m[name] = ckpt.tensor("adam.m/" + name);
    if (ckpt.has("adam.v/" + name)) opt_.v[name] = ckpt.tensor("adam.v/" + name);
  }
  teacher_.updates = meta.at("ema_updates").get<std::uint64_t>();
  teacher_.steps_since_update = meta.at("steps_since_update").get<std::size_t>();
}

}  // namespace g2pm::pretrain

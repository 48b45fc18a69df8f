#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "g2pm/anonymous.hpp"
#include "g2pm/fields.hpp"
#include "g2pm/graph.hpp"
#include "g2pm/model.hpp"
#include "g2pm/optim.hpp"
#include "g2pm/tokenizer.hpp"

namespace g2pm::pretrain {

using model::G2pmModel;
using model::MaskPlan;
using nn::ParameterStore;
using nn::Real;
using nn::Tensor;
using nn::Var;

// |M| = clamp(round(n * ratio), 1, n - 1).
std::size_t masked_count(std::size_t n, Real mask_ratio);
// Uniform choice of |M| positions without replacement. Throws ContractError
// for n < 2 and ConfigError for a ratio outside (0, 1).
MaskPlan make_mask_plan(std::size_t n, Real mask_ratio, Rng& rng);

enum class AugmentMode { mixed, feature_mask, node_mask, sub_corrupt, sub_inject, none };
const char* to_string(AugmentMode m);
bool parse_enum(std::string_view s, AugmentMode& out);

struct AugmentConfig {
  Real p_feat = 0.3;
  Real p_struct = 0.3;
  AugmentMode mode = AugmentMode::mixed;

  void validate() const;
};

template <FieldsOf<AugmentConfig> Self, class F>
void visit_fields(Self& c, F&& f) {
  f("p_feat", c.p_feat);
  f("p_struct", c.p_struct);
  f("mode", c.mode);
}

struct Augmented {
  std::vector<tok::Walk> walks;
  tok::TokenBatch batch;
};

// Corrupts one instance: structure-level op on the walks first, then
// features are gathered and the feature-level op is applied to the rows. The
// input walks are never modified.
Augmented augment(const graph::Graph& g, std::span<const tok::Walk> walks, const AugmentConfig& cfg, Rng& rng);

enum class LossNorm { by_n, by_masked };
const char* to_string(LossNorm n);
bool parse_enum(std::string_view s, LossNorm& out);

// What fills the masked slots of the decoder input.
enum class MaskTokenKind { learnable, zero, random, sampled };
const char* to_string(MaskTokenKind k);
bool parse_enum(std::string_view s, MaskTokenKind& out);

struct PretrainConfig {
  Real mask_ratio = 0.5;
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  Real ema_momentum = 0.99;
  std::size_t ema_every = 10;
  Real aux_topo_weight = 0.1;
  Real lr = 3e-4;
  Real warmup_lr = 1e-7;
  Real min_lr = 1e-7;
  std::size_t warmup_epochs = 1;
  Real weight_decay = 0.05;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real grad_clip = 1.0;
  LossNorm loss_norm = LossNorm::by_n;
  MaskTokenKind mask_token = MaskTokenKind::learnable;
  std::size_t checkpoint_every = 0;  // steps; 0 writes only the final checkpoint

  void validate() const;
  nn::AdamWConfig adamw() const { return {beta1, beta2, eps, weight_decay}; }
};

template <FieldsOf<PretrainConfig> Self, class F>
void visit_fields(Self& c, F&& f) {
  f("mask_ratio", c.mask_ratio);
  f("epochs", c.epochs);
  f("batch_size", c.batch_size);
  f("ema_momentum", c.ema_momentum);
  f("ema_every", c.ema_every);
  f("aux_topo_weight", c.aux_topo_weight);
  f("lr", c.lr);
  f("warmup_lr", c.warmup_lr);
  f("min_lr", c.min_lr);
  f("warmup_epochs", c.warmup_epochs);
  f("weight_decay", c.weight_decay);
  f("beta1", c.beta1);
  f("beta2", c.beta2);
  f("eps", c.eps);
  f("grad_clip", c.grad_clip);
  f("loss_norm", c.loss_norm);
  f("mask_token", c.mask_token);
  f("checkpoint_every", c.checkpoint_every);
}

// EMA copy of the substructure encoder. It owns separate tensors and is only
// ever written by ema_update.
struct EmaTeacher {
  ParameterStore params;
  std::size_t steps_since_update = 0;
  std::uint64_t updates = 0;

  static EmaTeacher from_student(const G2pmModel& model);
  // Counts one optimizer step and applies the EMA every `every` steps. Returns
  // whether an update happened.
  bool tick(const G2pmModel& student, Real alpha, std::size_t every);
};

// Teacher embeddings of clean walks, one row per walk, without gradient.
Tensor compute_targets(const G2pmModel& model, const ParameterStore& teacher, const model::WalkFeatures& clean);

// Reconstruction loss of one instance: sum over masked slots of
// ||r_i - target_i||^2 divided by n (by_n) or |M| (by_masked). Zero when nothing
// is masked.
Var msm_loss(const Var& recon, const Tensor& targets, const MaskPlan& plan, LossNorm norm);
// Mean of the per-instance losses; instances occupy consecutive rows.
Var msm_loss(const Var& recon, const Tensor& targets, std::span<const MaskPlan> plans, LossNorm norm);

// Cross-entropy of anonymous-walk logits against vocabulary indices, averaged
// over the rows.
Var aux_topo_loss(const Var& logits, std::span<const std::size_t> labels);

// Everything needed to build and train a model on one dataset.
struct PretrainSetup {
  tok::TokenizerConfig tokenizer;
  model::ModelConfig model;
  PretrainConfig pretrain;
  AugmentConfig augment;
  std::uint64_t seed = 0;
};

struct StepMetrics {
  std::uint64_t step = 0;  // 1-based index of the optimizer step just taken
  std::uint64_t epoch = 0;
  Real loss = 0.0;         // total objective
  Real aux_loss = 0.0;
  Real lr = 0.0;
  Real grad_norm = 0.0;    // before clipping
  std::uint64_t ema_updates = 0;
};

std::string metrics_record(const StepMetrics& m);

struct LossParts {
  Var total;
  Var msm;
  Var aux;  // empty when the aux head is off
};

class Pretrainer {
 public:
  Pretrainer(const graph::Dataset& ds, const PretrainSetup& setup);

  // One optimizer step on the given instances. `epoch` keys the walk,
  // augmentation and mask streams; the dropout stream is keyed by the step.
  StepMetrics step(std::span<const std::size_t> ids, std::uint64_t epoch);
  // Forward pass only (no parameter change); used by step and by the tests.
  LossParts forward(std::span<const std::size_t> ids, std::uint64_t epoch, bool training) const;

  struct LoopOptions {
    std::filesystem::path out_dir;                  // empty: no files
    std::optional<std::uint64_t> max_steps;         // stop early (resume tests)
  };
  // Runs the configured epochs from the current step. Instances are shuffled
  // per epoch by (seed, epoch), so a resumed run sees the same batches.
  std::vector<StepMetrics> run(const LoopOptions& opts);

  void save(const std::filesystem::path& path) const;
  // Restores model, optimizer moments, teacher and counters from `path`.
  void resume(const std::filesystem::path& path);

  std::size_t steps_per_epoch() const;
  std::uint64_t global_step() const { return opt_.step; }
  const G2pmModel& model() const { return model_; }
  G2pmModel& model() { return model_; }
  const EmaTeacher& teacher() const { return teacher_; }
  const nn::OptimizerState& optimizer() const { return opt_; }
  const PretrainSetup& setup() const { return setup_; }
  nn::LRSchedule schedule() const;

 private:
  const graph::Dataset& ds_;
  PretrainSetup setup_;
  G2pmModel model_;
  EmaTeacher teacher_;
  nn::OptimizerState opt_;
  ParameterStore trainable_;
  std::optional<tok::AnonymousVocab> vocab_;
};

// Pretrain instances: every instance of the dataset (labels are not used).
std::vector<std::size_t> pretrain_instances(const graph::Dataset& ds);

}  // namespace g2pm::pretrain

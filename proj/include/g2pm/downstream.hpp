#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "g2pm/fields.hpp"
#include "g2pm/graph.hpp"
#include "g2pm/model.hpp"
#include "g2pm/tokenizer.hpp"

namespace g2pm::downstream {

using model::G2pmModel;
using nn::Real;
using nn::Tensor;

// Walk stream key used for evaluation embeddings, kept apart from the
// per-epoch training streams.
inline constexpr std::uint64_t kEvalEpoch = std::numeric_limits<std::uint64_t>::max();

// One row per instance: k walks, substructure encoder, backbone encoder on all
// tokens (no masking, no augmentation, no dropout), mean over tokens.
Tensor embed_instances(const G2pmModel& model, const graph::Dataset& ds, std::span<const std::size_t> ids,
                       const tok::TokenizerConfig& cfg, std::uint64_t stream_epoch = kEvalEpoch,
                       std::size_t chunk = 256);

// Linear classifier acting on raw embeddings: logits = x w + b.
struct LinearHead {
  Tensor w;  // d x C
  Tensor b;  // C

  Tensor logits(const Tensor& x) const;
  std::vector<std::size_t> predict(const Tensor& x) const;
};

Real accuracy(std::span<const std::size_t> pred, std::span<const int> labels);

struct ProbeConfig {
  Real lr = 0.01;
  Real weight_decay = 0.001;
  std::size_t epochs = 500;
  std::size_t patience = 50;  // epochs without a val-loss improvement before stopping
  bool standardize = true;    // z-score inputs with train statistics

  void validate() const;
};

template <FieldsOf<ProbeConfig> Self, class F>
void visit_fields(Self& c, F&& f) {
  f("lr", c.lr);
  f("weight_decay", c.weight_decay);
  f("epochs", c.epochs);
  f("patience", c.patience);
  f("standardize", c.standardize);
}

struct ProbeResult {
  LinearHead head;  // folded back to raw embedding space
  Real train_acc = 0.0;
  Real val_acc = 0.0;
  Real test_acc = 0.0;
  std::size_t epochs_run = 0;
};

// Multinomial logistic regression trained full-batch with AdamW on the rows
// in split.train (row indices into `x`), early-stopped on split.val. The head
// starts at zero, so the result depends only on the data. Throws
// DegenerateDataError when the training rows hold fewer than two classes.
ProbeResult train_linear_probe(const Tensor& x, std::span<const int> labels, const graph::DatasetSplit& split,
                               std::size_t num_classes, const ProbeConfig& cfg);

// mean +- std over seeds; std is the sample deviation, 0 for a single seed.
struct EvalReport {
  std::string task;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<Real> values;
  std::string config_fingerprint;
  nlohmann::json extra = nlohmann::json::object();

  Real mean() const;
  Real std() const;
  nlohmann::json to_json() const;
};

// FNV-1a of the compact dump, as 16 hex digits.
std::string fingerprint(const nlohmann::json& config);

enum class InitFrom { scratch, pretrained };
const char* to_string(InitFrom f);
bool parse_enum(std::string_view s, InitFrom& out);

struct FinetuneConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 256;
  Real lr = 3e-4;
  Real weight_decay = 0.05;
  Real warmup_lr = 1e-7;
  Real min_lr = 1e-7;
  std::size_t warmup_epochs = 1;
  Real grad_clip = 1.0;
  // Prepend a linear adapter mapping the dataset's feature width to the
  // model's input width. Required when the widths differ.
  bool adapter = false;

  void validate() const;
};

template <FieldsOf<FinetuneConfig> Self, class F>
void visit_fields(Self& c, F&& f) {
  f("epochs", c.epochs);
  f("batch_size", c.batch_size);
  f("lr", c.lr);
  f("weight_decay", c.weight_decay);
  f("warmup_lr", c.warmup_lr);
  f("min_lr", c.min_lr);
  f("warmup_epochs", c.warmup_epochs);
  f("grad_clip", c.grad_clip);
  f("adapter", c.adapter);
}

struct TraceRow {
  std::size_t epoch = 0;  // 1-based
  Real train_loss = 0.0;
  Real val_metric = 0.0;
};

std::string trace_record(const TraceRow& r);

struct FinetuneResult {
  ProbeResult initial;  // frozen probe that initialises the head
  std::vector<TraceRow> trace;
  Real val_acc = 0.0;
  Real test_acc = 0.0;
};

// Full fine-tuning of adapter + substructure encoder + backbone encoder + head.
// The head starts from a frozen linear probe of the initial weights, so with
// epochs == 0 the result equals that probe. `model` is modified in place.
FinetuneResult finetune(G2pmModel& model, const graph::Dataset& ds, const tok::TokenizerConfig& tok_cfg,
                        const FinetuneConfig& cfg, const ProbeConfig& probe_cfg, std::uint64_t seed);

// Adapter from the dataset width to the model input width, when needed or
// requested. Throws ConfigError on a mismatch with `allow` false.
void prepare_input_width(G2pmModel& model, std::size_t data_width, bool allow);

struct QueryScores {
  Real positive = 0.0;
  std::vector<Real> negatives;
};

// Fraction of queries whose positive beats all but fewer than K negatives; a
// negative scoring equal to the positive counts against it. Throws ConfigError
// when a query has fewer than K candidates.
Real hits_at_k(std::span<const QueryScores> queries, std::size_t k);
// Same with one negative set shared by every query.
Real hits_at_k(std::span<const Real> positives, std::span<const Real> negatives, std::size_t k);

struct LinkConfig {
  Real train_frac = 0.80;
  Real val_frac = 0.05;  // the remainder is the test share
  std::size_t eval_negatives = 100;
  std::size_t k = 20;

  void validate() const;
};

template <FieldsOf<LinkConfig> Self, class F>
void visit_fields(Self& c, F&& f) {
  f("train_frac", c.train_frac);
  f("val_frac", c.val_frac);
  f("eval_negatives", c.eval_negatives);
  f("k", c.k);
}

struct LinkResult {
  Real hits = 0.0;
  std::size_t train_edges = 0, val_edges = 0, test_edges = 0;
};

// Link prediction on graph 0 of `ds`: undirected edges are split, the
// encoder only sees the training edges, a 2-class probe on edge-instance
// embeddings is trained with 1:1 uniform non-edge negatives, and each test edge
// is ranked against a shared set of sampled non-edges.
LinkResult eval_link(const G2pmModel& model, const graph::Dataset& ds, const tok::TokenizerConfig& tok_cfg,
                     const LinkConfig& cfg, const ProbeConfig& probe_cfg, std::uint64_t seed);

}  // namespace g2pm::downstream

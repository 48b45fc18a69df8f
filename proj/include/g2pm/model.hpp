#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "g2pm/autograd.hpp"
#include "g2pm/checkpoint.hpp"
#include "g2pm/fields.hpp"
#include "g2pm/optim.hpp"
#include "g2pm/rng.hpp"
#include "g2pm/tokenizer.hpp"

namespace g2pm::model {

using nn::ParameterStore;
using nn::Real;
using nn::Tensor;
using nn::Var;

enum class SubEncoderKind { transformer, mean };
const char* to_string(SubEncoderKind k);
bool parse_enum(std::string_view s, SubEncoderKind& out);

struct ModelConfig {
  std::size_t hidden_dim = 768;
  std::size_t num_heads = 12;
  std::size_t enc_layers = 3;
  std::size_t dec_layers = 1;
  std::size_t sub_enc_layers = 1;
  std::size_t ffn_multiplier = 4;
  Real dropout = 0.3;
  SubEncoderKind sub_encoder_kind = SubEncoderKind::transformer;
  // Adds layer norms and a residual around the FFN (pre-norm block) instead
  // of the literal FFN(P + Attn(P)) layer.
  bool pre_norm = false;
  // Decoder-only learned embedding per token slot, added at every position.
  bool slot_embedding = false;
  Real init_std = 0.02;

  void validate() const;
};

template <FieldsOf<ModelConfig> Self, class F>
void visit_fields(Self& c, F&& f) {
  f("hidden_dim", c.hidden_dim);
  f("num_heads", c.num_heads);
  f("enc_layers", c.enc_layers);
  f("dec_layers", c.dec_layers);
  f("sub_enc_layers", c.sub_enc_layers);
  f("ffn_multiplier", c.ffn_multiplier);
  f("dropout", c.dropout);
  f("sub_encoder_kind", c.sub_encoder_kind);
  f("pre_norm", c.pre_norm);
  f("slot_embedding", c.slot_embedding);
  f("init_std", c.init_std);
}

// Dropout is active only when `training` is set; it then draws from `rng`.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
};

// Feature rows of a list of walks; walk i owns rows [offsets[i], offsets[i+1]).
struct WalkFeatures {
  Tensor rows;
  std::vector<std::size_t> offsets{0};

  std::size_t num_walks() const { return offsets.size() - 1; }
};

WalkFeatures to_walk_features(const tok::TokenBatch& batch);
// Concatenates several batches (walk order preserved).
WalkFeatures concat_walk_features(std::span<const tok::TokenBatch* const> batches, std::size_t width);

// Which token positions of one instance are hidden from the encoder.
struct MaskPlan {
  std::size_t n = 0;
  std::vector<std::size_t> masked;   // ascending
  std::vector<std::size_t> visible;  // ascending, complement of masked

  bool is_masked(std::size_t i) const;
};

// Everything the decoder produces: hidden states (aux head input) and the
// reconstructions projected into the target embedding space.
struct Decoded {
  Var hidden;
  Var recon;
};

Tensor truncated_normal(const nn::Shape& shape, Real stddev, Rng& rng);

void init_transformer_layer(ParameterStore& store, const std::string& prefix, std::size_t dim,
                            std::size_t ffn_dim, bool pre_norm, Real init_std, Rng& rng);
// One backbone layer over independent row segments:
//   literal:  P' = FFN(P + Attn(P))
//   pre-norm: X = P + Attn(LN(P)); P' = X + FFN(LN(X))
// Dropout hits the attention output and the FFN hidden activations.
Var transformer_layer(const ParameterStore& store, const std::string& prefix, const Var& x,
                      std::span<const std::size_t> offsets, std::size_t heads, bool pre_norm, Real dropout,
                      const ForwardContext& ctx);

// Substructure encoder, backbone encoder/decoder and heads. Parameter names:
//   adapter.*  optional transfer projection ahead of the substructure encoder
//   sub.*      substructure encoder (the EMA teacher mirrors exactly these)
//   enc.* dec.* mask_token recon.* aux.* slot   pre-training backbone
//   head.*     downstream linear head
class G2pmModel {
 public:
  // aux_vocab > 0 adds the anonymous-walk head; max_tokens sizes the optional
  // slot embedding.
  G2pmModel(const ModelConfig& cfg, std::size_t input_dim, std::uint64_t seed, std::size_t aux_vocab = 0,
            std::size_t max_tokens = 0);

  const ModelConfig& config() const { return cfg_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t feature_dim() const;  // expected walk feature width (adapter input if attached)
  std::size_t aux_vocab() const { return aux_vocab_; }
  std::size_t num_classes() const { return num_classes_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // f(w): project every row, run the substructure layers within each walk,
  // mean-pool per walk. `store` supplies sub.* (the student or the teacher).
  Var encode_substructures(const ParameterStore& store, const WalkFeatures& walks, const ForwardContext& ctx) const;
  Var encode_substructures(const WalkFeatures& walks, const ForwardContext& ctx) const {
    return encode_substructures(params_, walks, ctx);
  }

  // Backbone encoder over token rows grouped per instance by `offsets`.
  Var encode(const Var& tokens, std::span<const std::size_t> offsets, const ForwardContext& ctx) const;

  // Rebuilds the full sequences: encoder outputs at visible slots, rows of
  // `mask_rows` at masked slots; then decoder layers and reconstruction head.
  // `h_vis` rows are ordered instance by instance, visible slots ascending.
  Decoded decode_full(const Var& h_vis, std::span<const MaskPlan> plans, const Var& mask_rows,
                      const ForwardContext& ctx) const;
  // Shared learnable mask token repeated `rows` times.
  Var learnable_mask_rows(std::size_t rows) const;

  Var aux_logits(const Var& hidden_rows) const;

  // Mean over each instance's tokens, then the linear head.
  Var pool_predict(const Var& encoded, std::span<const std::size_t> offsets) const;

  void add_head(std::size_t num_classes, std::uint64_t seed);
  bool has_head() const { return num_classes_ > 0; }
  // Linear map target_dim -> input_dim ahead of the substructure encoder,
  // initialised to the (pseudo-)identity.
  void attach_adapter(std::size_t target_dim);
  bool has_adapter() const { return adapter_dim_ > 0; }

  ParameterStore sub_encoder_params() const { return params_.subset({"sub."}); }
  ParameterStore pretrain_params() const;
  ParameterStore finetune_params() const;

  void save(nn::Checkpoint& ckpt, const std::string& prefix = "model/") const;
  static G2pmModel load(const nn::Checkpoint& ckpt, const std::string& prefix = "model/");

 private:
  ModelConfig cfg_;
  std::size_t input_dim_ = 0;
  std::size_t aux_vocab_ = 0;
  std::size_t max_tokens_ = 0;
  std::size_t num_classes_ = 0;
  std::size_t adapter_dim_ = 0;
  ParameterStore params_;
};

// Instance offsets for `counts` tokens per instance.
std::vector<std::size_t> offsets_from_counts(std::span<const std::size_t> counts);
std::vector<std::size_t> uniform_offsets(std::size_t segments, std::size_t len);

}  // namespace g2pm::model

#include "g2pm/model.hpp"

#include <algorithm>
#include <cmath>

#include "g2pm/error.hpp"
#include "g2pm/reflect.hpp"

namespace g2pm::model {

const char* to_string(SubEncoderKind k) { return k == SubEncoderKind::mean ? "mean" : "transformer"; }

bool parse_enum(std::string_view s, SubEncoderKind& out) {
  if (s == "transformer") out = SubEncoderKind::transformer;
  else if (s == "mean") out = SubEncoderKind::mean;
  else return false;
  return true;
}

void ModelConfig::validate() const {
  if (hidden_dim == 0 || num_heads == 0 || hidden_dim % num_heads != 0) {
    throw ConfigError("model.hidden_dim (" + std::to_string(hidden_dim) + ") must be a positive multiple of model.num_heads (" +
                      std::to_string(num_heads) + ")");
  }
  if (enc_layers < 1) throw ConfigError("model.enc_layers must be >= 1");
  if (sub_encoder_kind == SubEncoderKind::transformer && sub_enc_layers < 1) {
    throw ConfigError("model.sub_enc_layers must be >= 1 for the transformer substructure encoder");
  }
  if (ffn_multiplier < 1) throw ConfigError("model.ffn_multiplier must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  if (!(init_std > 0.0)) throw ConfigError("model.init_std must be positive");
}

WalkFeatures to_walk_features(const tok::TokenBatch& batch) {
  WalkFeatures w;
  w.rows = Tensor(nn::Shape{batch.num_rows(), batch.width}, batch.rows);
  w.offsets = batch.offsets;
  return w;
}

WalkFeatures concat_walk_features(std::span<const tok::TokenBatch* const> batches, std::size_t width) {
  std::size_t rows = 0;
  for (const auto* b : batches) rows += b->num_rows();
  WalkFeatures w;
  std::vector<Real> data;
  data.reserve(rows * width);
  for (const auto* b : batches) {
    if (b->num_walks() > 0 && b->width != width) throw ShapeError("walk feature width mismatch");
    const std::size_t base = w.offsets.back();
    for (std::size_t i = 1; i < b->offsets.size(); ++i) w.offsets.push_back(base + b->offsets[i]);
    data.insert(data.end(), b->rows.begin(), b->rows.end());
  }
  w.rows = Tensor(nn::Shape{rows, width}, std::move(data));
  return w;
}

bool MaskPlan::is_masked(std::size_t i) const { return std::binary_search(masked.begin(), masked.end(), i); }

Tensor truncated_normal(const nn::Shape& shape, Real stddev, Rng& rng) {
  Tensor t(shape);
  std::normal_distribution<Real> normal(0.0, 1.0);
  for (auto& x : t.data()) {
    Real z;
    do {
      z = normal(rng);
    } while (std::abs(z) > 2.0);
    x = z * stddev;
  }
  return t;
}

void init_transformer_layer(ParameterStore& store, const std::string& prefix, std::size_t dim,
                            std::size_t ffn_dim, bool pre_norm, Real init_std, Rng& rng) {
  for (const char* name : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
    store.add(prefix + name, truncated_normal({dim, dim}, init_std, rng));
  }
  store.add(prefix + "attn.bo", Tensor({dim}));
  store.add(prefix + "ffn.w1", truncated_normal({dim, ffn_dim}, init_std, rng));
  store.add(prefix + "ffn.b1", Tensor({ffn_dim}));
  store.add(prefix + "ffn.w2", truncated_normal({ffn_dim, dim}, init_std, rng));
  store.add(prefix + "ffn.b2", Tensor({dim}));
  if (pre_norm) {
    store.add(prefix + "ln1.g", Tensor({dim}, 1.0));
    store.add(prefix + "ln1.b", Tensor({dim}));
    store.add(prefix + "ln2.g", Tensor({dim}, 1.0));
    store.add(prefix + "ln2.b", Tensor({dim}));
  }
}

namespace {

Var attention(const ParameterStore& s, const std::string& p, const Var& x, std::span<const std::size_t> offsets,
              std::size_t heads) {
  auto q = nn::matmul(x, s.at(p + "attn.wq"));
  auto k = nn::matmul(x, s.at(p + "attn.wk"));
  auto v = nn::matmul(x, s.at(p + "attn.wv"));
  auto a = nn::segment_attention(q, k, v, offsets, heads);
  return nn::linear(a, s.at(p + "attn.wo"), s.at(p + "attn.bo"));
}

Var maybe_dropout(const Var& x, Real p, const ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0) return x;
  if (!ctx.rng) throw ContractError("training forward pass needs a dropout stream");
  return nn::dropout(x, p, *ctx.rng, true);
}

Var ffn(const ParameterStore& s, const std::string& p, const Var& x, Real dropout, const ForwardContext& ctx) {
  auto h = nn::gelu(nn::linear(x, s.at(p + "ffn.w1"), s.at(p + "ffn.b1")));
  return nn::linear(maybe_dropout(h, dropout, ctx), s.at(p + "ffn.w2"), s.at(p + "ffn.b2"));
}

}  // namespace

Var transformer_layer(const ParameterStore& s, const std::string& p, const Var& x,
                      std::span<const std::size_t> offsets, std::size_t heads, bool pre_norm, Real dropout,
                      const ForwardContext& ctx) {
  if (!pre_norm) {
    auto h = nn::add(x, maybe_dropout(attention(s, p, x, offsets, heads), dropout, ctx));
    return ffn(s, p, h, dropout, ctx);
  }
  auto n1 = nn::layer_norm(x, s.at(p + "ln1.g"), s.at(p + "ln1.b"));
  auto h = nn::add(x, maybe_dropout(attention(s, p, n1, offsets, heads), dropout, ctx));
  auto n2 = nn::layer_norm(h, s.at(p + "ln2.g"), s.at(p + "ln2.b"));
  return nn::add(h, ffn(s, p, n2, dropout, ctx));
}

G2pmModel::G2pmModel(const ModelConfig& cfg, std::size_t input_dim, std::uint64_t seed, std::size_t aux_vocab,
                     std::size_t max_tokens)
    : cfg_(cfg), input_dim_(input_dim), aux_vocab_(aux_vocab), max_tokens_(max_tokens) {
  cfg_.validate();
  if (input_dim == 0) throw ConfigError("model input width must be positive");
  if (cfg_.slot_embedding && max_tokens == 0) throw ConfigError("slot embedding needs the token count");
  auto rng = make_stream(seed, Stream::init);
  const std::size_t d = cfg_.hidden_dim, f = d * cfg_.ffn_multiplier;
  const Real sd = cfg_.init_std;

  params_.add("sub.proj.w", truncated_normal({input_dim, d}, sd, rng));
  params_.add("sub.proj.b", Tensor({d}));
  if (cfg_.sub_encoder_kind == SubEncoderKind::transformer) {
    for (std::size_t l = 0; l < cfg_.sub_enc_layers; ++l) {
      init_transformer_layer(params_, "sub." + std::to_string(l) + ".", d, f, cfg_.pre_norm, sd, rng);
    }
  }
  for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
    init_transformer_layer(params_, "enc." + std::to_string(l) + ".", d, f, cfg_.pre_norm, sd, rng);
  }
  for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
    init_transformer_layer(params_, "dec." + std::to_string(l) + ".", d, f, cfg_.pre_norm, sd, rng);
  }
  params_.add("mask_token", truncated_normal({d}, sd, rng));
  params_.add("recon.w", truncated_normal({d, d}, sd, rng));
  params_.add("recon.b", Tensor({d}));
  if (aux_vocab_ > 0) {
    params_.add("aux.w", truncated_normal({d, aux_vocab_}, sd, rng));
    params_.add("aux.b", Tensor({aux_vocab_}));
  }
  if (cfg_.slot_embedding) params_.add("slot", truncated_normal({max_tokens_, d}, sd, rng));
}

std::size_t G2pmModel::feature_dim() const { return has_adapter() ? adapter_dim_ : input_dim_; }

Var G2pmModel::encode_substructures(const ParameterStore& store, const WalkFeatures& walks,
                                    const ForwardContext& ctx) const {
  const bool adapt = store.contains("adapter.w");
  const std::size_t expected = adapt ? store.at("adapter.w").rows() : store.at("sub.proj.w").rows();
  if (walks.rows.cols() != expected) {
    throw ShapeError("walk features are " + std::to_string(walks.rows.cols()) + " wide, encoder expects " +
                     std::to_string(expected));
  }
  if (walks.offsets.back() != walks.rows.rows()) throw ShapeError("walk offsets do not cover the feature rows");
  Var x(walks.rows);
  if (adapt) x = nn::linear(x, store.at("adapter.w"), store.at("adapter.b"));
  auto h = nn::linear(x, store.at("sub.proj.w"), store.at("sub.proj.b"));
  if (cfg_.sub_encoder_kind == SubEncoderKind::transformer) {
    for (std::size_t l = 0; l < cfg_.sub_enc_layers; ++l) {
      h = transformer_layer(store, "sub." + std::to_string(l) + ".", h, walks.offsets, cfg_.num_heads, cfg_.pre_norm,
                            cfg_.dropout, ctx);
    }
  }
  return nn::segment_mean(h, walks.offsets);
}

Var G2pmModel::encode(const Var& tokens, std::span<const std::size_t> offsets, const ForwardContext& ctx) const {
  if (tokens.rows() == 0) throw ContractError("encoder needs at least one visible token");
  Var h = tokens;
  for (std::size_t l = 0; l < cfg_.enc_layers; ++l) {
    h = transformer_layer(params_, "enc." + std::to_string(l) + ".", h, offsets, cfg_.num_heads, cfg_.pre_norm,
                          cfg_.dropout, ctx);
  }
  return h;
}

Var G2pmModel::learnable_mask_rows(std::size_t rows) const { return nn::broadcast_rows(params_.at("mask_token"), rows); }

Decoded G2pmModel::decode_full(const Var& h_vis, std::span<const MaskPlan> plans, const Var& mask_rows,
                               const ForwardContext& ctx) const {
  std::vector<std::size_t> dst, counts, slots;
  std::size_t base = 0, vis_total = 0;
  for (const auto& plan : plans) {
    if (plan.masked.size() + plan.visible.size() != plan.n) throw ContractError("mask plan does not partition its tokens");
    for (auto v : plan.visible) {
      if (v >= plan.n) throw ContractError("mask plan index out of range");
      dst.push_back(base + v);
    }
    for (std::size_t i = 0; i < plan.n; ++i) slots.push_back(i);
    vis_total += plan.visible.size();
    counts.push_back(plan.n);
    base += plan.n;
  }
  if (h_vis.rows() != vis_total) {
    throw ContractError("decoder got " + std::to_string(h_vis.rows()) + " visible rows, plans expect " +
                        std::to_string(vis_total));
  }
  if (mask_rows.rows() != base || mask_rows.cols() != cfg_.hidden_dim) {
    throw ContractError("mask rows must be " + std::to_string(base) + " x " + std::to_string(cfg_.hidden_dim));
  }
  Var h = nn::scatter_rows(mask_rows, h_vis, dst);
  if (cfg_.slot_embedding) {
    if (*std::max_element(counts.begin(), counts.end()) > max_tokens_) throw ContractError("more tokens than slot embeddings");
    h = nn::add(h, nn::gather_rows(params_.at("slot"), slots));
  }
  const auto offsets = offsets_from_counts(counts);
  for (std::size_t l = 0; l < cfg_.dec_layers; ++l) {
    h = transformer_layer(params_, "dec." + std::to_string(l) + ".", h, offsets, cfg_.num_heads, cfg_.pre_norm,
                          cfg_.dropout, ctx);
  }
  return {h, nn::linear(h, params_.at("recon.w"), params_.at("recon.b"))};
}

Var G2pmModel::aux_logits(const Var& hidden_rows) const {
  if (aux_vocab_ == 0) throw ConfigError("model has no anonymous-walk head");
  return nn::linear(hidden_rows, params_.at("aux.w"), params_.at("aux.b"));
}

Var G2pmModel::pool_predict(const Var& encoded, std::span<const std::size_t> offsets) const {
  if (!has_head()) throw ContractError("model has no prediction head");
  return nn::linear(nn::segment_mean(encoded, offsets), params_.at("head.w"), params_.at("head.b"));
}

void G2pmModel::add_head(std::size_t num_classes, std::uint64_t seed) {
  if (num_classes == 0) throw ConfigError("head needs at least one class");
  if (has_head()) throw ContractError("model already has a head");
  auto rng = make_stream(seed, Stream::init, 1);
  params_.add("head.w", truncated_normal({cfg_.hidden_dim, num_classes}, cfg_.init_std, rng));
  params_.add("head.b", Tensor({num_classes}));
  num_classes_ = num_classes;
}

void G2pmModel::attach_adapter(std::size_t target_dim) {
  if (has_adapter()) throw ContractError("model already has an adapter");
  if (target_dim == 0) throw ConfigError("adapter input width must be positive");
  Tensor w = Tensor::matrix(target_dim, input_dim_);
  for (std::size_t i = 0; i < std::min(target_dim, input_dim_); ++i) w(i, i) = 1.0;
  params_.add("adapter.w", std::move(w));
  params_.add("adapter.b", Tensor({input_dim_}));
  adapter_dim_ = target_dim;
}

ParameterStore G2pmModel::pretrain_params() const {
  return params_.subset({"sub.", "enc.", "dec.", "mask_token", "recon.", "aux.", "slot"});
}

ParameterStore G2pmModel::finetune_params() const { return params_.subset({"adapter.", "sub.", "enc.", "head."}); }

void G2pmModel::save(nn::Checkpoint& ckpt, const std::string& prefix) const {
  auto& m = ckpt.meta[prefix];
  m["config"] = reflect::to_json(cfg_);
  m["input_dim"] = input_dim_;
  m["aux_vocab"] = aux_vocab_;
  m["max_tokens"] = max_tokens_;
  m["num_classes"] = num_classes_;
  m["adapter_dim"] = adapter_dim_;
  for (const auto& [name, var] : params_.entries()) ckpt.tensors.emplace_back(prefix + name, var.value());
}

G2pmModel G2pmModel::load(const nn::Checkpoint& ckpt, const std::string& prefix) {
  if (!ckpt.meta.contains(prefix)) throw ContractError("checkpoint has no model under '" + prefix + "'");
  const auto& m = ckpt.meta.at(prefix);
  ModelConfig cfg;
  reflect::from_json(cfg, m.at("config"));
  G2pmModel model(cfg, m.at("input_dim").get<std::size_t>(), 0, m.at("aux_vocab").get<std::size_t>(),
                  m.at("max_tokens").get<std::size_t>());
  if (auto c = m.at("num_classes").get<std::size_t>(); c > 0) model.add_head(c, 0);
  if (auto a = m.at("adapter_dim").get<std::size_t>(); a > 0) model.attach_adapter(a);
  for (auto& [name, var] : model.params_.entries()) {
    const auto& t = ckpt.tensor(prefix + name);
    if (t.shape() != var.shape()) throw ContractError("checkpoint tensor '" + name + "' has the wrong shape");
    var.mutable_value() = t;
  }
  return model;
}

std::vector<std::size_t> offsets_from_counts(std::span<const std::size_t> counts) {
  std::vector<std::size_t> off{0};
  for (auto c : counts) off.push_back(off.back() + c);
  return off;
}

std::vector<std::size_t> uniform_offsets(std::size_t segments, std::size_t len) {
  std::vector<std::size_t> off(segments + 1);
  for (std::size_t s = 0; s <= segments; ++s) off[s] = s * len;
  return off;
}

}  // namespace g2pm::model

#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "g2pm/downstream.hpp"
#include "g2pm/fields.hpp"
#include "g2pm/model.hpp"
#include "g2pm/pretrain.hpp"
#include "g2pm/tokenizer.hpp"

namespace g2pm::cli {

struct RunOptions {
  std::string data;
  std::string out;
  std::string checkpoint;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t workers = 1;
  downstream::InitFrom init = downstream::InitFrom::pretrained;
  std::uint64_t split_seed = 0;
};

template <FieldsOf<RunOptions> Self, class F>
void visit_fields(Self& c, F&& f) {
  f("data", c.data);
  f("out", c.out);
  f("checkpoint", c.checkpoint);
  f("seeds", c.seeds);
  f("workers", c.workers);
  f("init", c.init);
  f("split_seed", c.split_seed);
}

// Every knob of every pipeline, addressed by flat dotted keys such as
// "model.hidden_dim" or "pretrain.mask_ratio".
struct RunConfig {
  tok::TokenizerConfig tokenizer;
  model::ModelConfig model;
  pretrain::PretrainConfig pretrain;
  pretrain::AugmentConfig augment;
  downstream::ProbeConfig probe;
  downstream::FinetuneConfig finetune;
  downstream::LinkConfig link;
  RunOptions run;

  nlohmann::json to_json() const;
  // Applies the keys of a flat JSON object over the current values. Unknown
  // keys and ill-typed values throw ConfigError.
  void merge_json(const nlohmann::json& flat);
  // Sets one key from text (command line or environment).
  void set(const std::string& key, std::string_view text);
  // Applies G2PM_* variables; G2PM_MODEL__HIDDEN_DIM sets model.hidden_dim.
  void apply_env(char** envp);
  void validate() const;

  std::vector<std::string> keys() const;
};

// "G2PM_PRETRAIN__MASK_RATIO" -> "pretrain.mask_ratio"; empty for other names.
std::string env_to_key(std::string_view name);

RunConfig load_config_file(const std::string& path);

}  // namespace g2pm::cli

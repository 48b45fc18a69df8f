#include "g2pm/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "g2pm/error.hpp"
#include "g2pm/reflect.hpp"

namespace g2pm::cli {

using json = nlohmann::json;

namespace {

template <class Cfg, class F>
void for_each_section(Cfg& c, F&& f) {
  f("tokenizer.", c.tokenizer);
  f("model.", c.model);
  f("pretrain.", c.pretrain);
  f("augment.", c.augment);
  f("probe.", c.probe);
  f("finetune.", c.finetune);
  f("link.", c.link);
  f("run.", c.run);
}

template <typename T>
struct is_vector : std::false_type {};
template <typename T>
struct is_vector<std::vector<T>> : std::true_type {};

}  // namespace

json RunConfig::to_json() const {
  json out = json::object();
  for_each_section(*this, [&](const std::string& prefix, const auto& sec) { out.update(reflect::to_json(sec, prefix)); });
  return out;
}

std::vector<std::string> RunConfig::keys() const {
  std::vector<std::string> k;
  for (const auto& [key, _] : to_json().items()) k.push_back(key);
  return k;
}

void RunConfig::merge_json(const json& flat) {
  if (!flat.is_object()) throw ConfigError("configuration must be a JSON object of dotted keys");
  std::set<std::string> used;
  for_each_section(*this, [&](const std::string& prefix, auto& sec) {
    auto u = reflect::from_json(sec, flat, prefix);
    used.insert(u.begin(), u.end());
  });
  std::vector<std::string> unknown;
  for (const auto& [key, _] : flat.items()) {
    if (!used.count(key)) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string msg = "unknown configuration key";
    msg += unknown.size() > 1 ? "s: " : ": ";
    for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", '" : "'") + unknown[i] + "'";
    throw ConfigError(msg);
  }
}

void RunConfig::set(const std::string& key, std::string_view text) {
  bool found = false;
  for_each_section(*this, [&](const std::string& prefix, auto& sec) {
    visit_fields(sec, [&](const char* name, auto& field) {
      if (prefix + name != key) return;
      using T = std::remove_reference_t<decltype(field)>;
      if constexpr (is_vector<T>::value) {
        std::string s(text);
        if (s.empty() || s.front() != '[') s = "[" + s + "]";
        reflect::field_from_json(reflect::text_to_json<T>(s), field, key);
      } else {
        reflect::field_from_json(reflect::text_to_json<T>(text), field, key);
      }
      found = true;
    });
  });
  if (!found) throw ConfigError("unknown configuration key '" + key + "'");
}

std::string env_to_key(std::string_view name) {
  constexpr std::string_view prefix = "G2PM_";
  if (name.substr(0, prefix.size()) != prefix) return {};
  std::string rest(name.substr(prefix.size()));
  std::string key;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    if (rest[i] == '_' && i + 1 < rest.size() && rest[i + 1] == '_') {
      key += '.';
      ++i;
    } else {
      key += static_cast<char>(std::tolower(static_cast<unsigned char>(rest[i])));
    }
  }
  return key;
}

void RunConfig::apply_env(char** envp) {
  if (!envp) return;
  for (char** e = envp; *e; ++e) {
    std::string_view entry(*e);
    const auto eq = entry.find('=');
    if (eq == std::string_view::npos) continue;
    const auto key = env_to_key(entry.substr(0, eq));
    if (key.empty()) continue;
    try {
      set(key, entry.substr(eq + 1));
    } catch (const ConfigError& err) {
      throw ConfigError(std::string(entry.substr(0, eq)) + ": " + err.what());
    }
  }
}

void RunConfig::validate() const {
  tokenizer.validate();
  model.validate();
  pretrain.validate();
  augment.validate();
  probe.validate();
  finetune.validate();
  link.validate();
  if (run.seeds.empty()) throw ConfigError("run.seeds must not be empty");
  if (run.workers < 1) throw ConfigError("run.workers must be >= 1");
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  RunConfig cfg;
  cfg.merge_json(j);
  return cfg;
}

}  // namespace g2pm::cli

#include "g2pm/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "g2pm/checkpoint.hpp"
#include "g2pm/config.hpp"
#include "g2pm/dataset.hpp"
#include "g2pm/diagnostics.hpp"
#include "g2pm/downstream.hpp"
#include "g2pm/error.hpp"
#include "g2pm/parallel.hpp"
#include "g2pm/pretrain.hpp"

namespace g2pm::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Flags shared by the training and evaluation subcommands. Each maps to a
// dotted config key and overrides the config file and the environment.
struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> direct;  // key -> text, filled by callbacks
};

void add_common(CLI::App* sub, CommonFlags& f, const std::string& epochs_key) {
  sub->add_option("--config", f.config, "JSON file of dotted keys");
  sub->add_option("--set", f.sets, "override one key: key=value (repeatable)");
  auto direct = [&f, sub](const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&f, key](const std::string& v) { f.direct[key] = v; }, help);
  };
  direct("--data", "run.data", "dataset directory");
  direct("--out", "run.out", "output directory");
  direct("--checkpoint", "run.checkpoint", "pre-trained checkpoint");
  direct("--seeds", "run.seeds", "comma separated seed list");
  direct("--workers", "run.workers", "worker threads (1 keeps runs bit-reproducible)");
  if (!epochs_key.empty()) direct("--epochs", epochs_key, "training epochs");
}

RunConfig resolve(const CommonFlags& f, char** envp) {
  RunConfig cfg = f.config.empty() ? RunConfig{} : load_config_file(f.config);
  cfg.apply_env(envp);
  for (const auto& [key, text] : f.direct) cfg.set(key, text);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    cfg.set(s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
  set_num_threads(static_cast<int>(cfg.run.workers));
  return cfg;
}

fs::path prepare_out(const RunConfig& cfg) {
  if (cfg.run.out.empty()) throw ConfigError("an output directory is required (--out or run.out)");
  fs::path out(cfg.run.out);
  fs::create_directories(out);
  std::ofstream(out / "config.json") << cfg.to_json().dump(2) << '\n';
  return out;
}

graph::Dataset load_data(const RunConfig& cfg) {
  if (cfg.run.data.empty()) throw ConfigError("a dataset directory is required (--data or run.data)");
  return graph::load_dataset(cfg.run.data, std::nullopt, cfg.run.split_seed);
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

model::G2pmModel make_model(const RunConfig& cfg, const graph::Dataset& ds, std::uint64_t seed, bool pretrained) {
  if (pretrained) {
    if (cfg.run.checkpoint.empty()) throw ConfigError("run.init=pretrained needs --checkpoint");
    return model::G2pmModel::load(nn::load_checkpoint(cfg.run.checkpoint));
  }
  return model::G2pmModel(cfg.model, ds.feat_dim() + ds.edge_dim(), seed);
}

int cmd_pretrain(const CommonFlags& f, const std::string& resume, char** envp) {
  const auto cfg = resolve(f, envp);
  const auto ds = load_data(cfg);
  const auto out = prepare_out(cfg);
  pretrain::PretrainSetup setup{cfg.tokenizer, cfg.model, cfg.pretrain, cfg.augment, cfg.run.seeds.front()};
  pretrain::Pretrainer trainer(ds, setup);
  if (!resume.empty()) trainer.resume(resume);
  std::cerr << "pretrain: " << ds.instances.size() << " instances, " << trainer.steps_per_epoch()
            << " steps/epoch, " << trainer.model().params().num_elements() << " parameters, seed "
            << setup.seed << '\n';
  const auto trace = trainer.run({out, std::nullopt});
  if (!trace.empty()) {
    std::cerr << "pretrain: step " << trace.back().step << " loss " << trace.back().loss << " (first "
              << trace.front().loss << ")\n";
  }
  std::cout << (out / "checkpoint.bin").string() << '\n';
  return 0;
}

std::vector<std::size_t> split_rows(const graph::DatasetSplit& sp, graph::DatasetSplit& local) {
  std::vector<std::size_t> rows(sp.train);
  rows.insert(rows.end(), sp.val.begin(), sp.val.end());
  rows.insert(rows.end(), sp.test.begin(), sp.test.end());
  local = {};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    (i < sp.train.size() ? local.train : i < sp.train.size() + sp.val.size() ? local.val : local.test).push_back(i);
  }
  return rows;
}

downstream::EvalReport new_report(const RunConfig& cfg, const graph::Dataset& ds, const std::string& metric) {
  downstream::EvalReport rep;
  rep.task = graph::to_string(ds.task);
  rep.metric = metric;
  rep.config_fingerprint = downstream::fingerprint(cfg.to_json());
  rep.extra["per_seed"] = json::array();
  return rep;
}

void finish_report(const fs::path& out, const downstream::EvalReport& rep) {
  write_json(out / "report.json", rep.to_json());
  std::cout << rep.metric << " " << rep.mean() << " +- " << rep.std() << " over " << rep.values.size()
            << " seed(s)\n";
}

int cmd_probe(const CommonFlags& f, char** envp) {
  const auto cfg = resolve(f, envp);
  const auto ds = load_data(cfg);
  const auto out = prepare_out(cfg);
  graph::DatasetSplit local;
  const auto rows = split_rows(ds.split, local);
  const auto labels = ds.labels(rows);
  const bool pretrained = !cfg.run.checkpoint.empty();
  auto rep = new_report(cfg, ds, "accuracy");
  rep.extra["encoder"] = pretrained ? "pretrained" : "random";
  for (auto seed : cfg.run.seeds) {
    const auto m = make_model(cfg, ds, seed, pretrained);
    auto tc = cfg.tokenizer;
    tc.seed = seed;
    const auto before = m.params().checksum();
    const auto x = downstream::embed_instances(m, ds, rows, tc);
    const auto res = downstream::train_linear_probe(x, labels, local, ds.num_classes, cfg.probe);
    if (m.params().checksum() != before) throw ContractError("probe modified the encoder");
    rep.seeds.push_back(seed);
    rep.values.push_back(res.test_acc);
    rep.extra["per_seed"].push_back(
        {{"seed", seed}, {"train_acc", res.train_acc}, {"val_acc", res.val_acc}, {"test_acc", res.test_acc},
         {"epochs", res.epochs_run}});
    std::cerr << "probe: seed " << seed << " test accuracy " << res.test_acc << '\n';
  }
  finish_report(out, rep);
  return 0;
}

int cmd_finetune(const CommonFlags& f, char** envp) {
  const auto cfg = resolve(f, envp);
  const auto ds = load_data(cfg);
  const auto out = prepare_out(cfg);
  const bool pretrained = cfg.run.init == downstream::InitFrom::pretrained;
  auto rep = new_report(cfg, ds, "accuracy");
  rep.extra["init"] = downstream::to_string(cfg.run.init);
  for (auto seed : cfg.run.seeds) {
    auto m = make_model(cfg, ds, seed, pretrained);
    const auto res = downstream::finetune(m, ds, cfg.tokenizer, cfg.finetune, cfg.probe, seed);
    std::ofstream trace(out / ("trace_seed" + std::to_string(seed) + ".jsonl"));
    for (const auto& row : res.trace) trace << downstream::trace_record(row) << '\n';
    rep.seeds.push_back(seed);
    rep.values.push_back(res.test_acc);
    rep.extra["per_seed"].push_back({{"seed", seed}, {"val_acc", res.val_acc}, {"test_acc", res.test_acc},
                                     {"initial_probe_test_acc", res.initial.test_acc}});
    std::cerr << "finetune: seed " << seed << " test accuracy " << res.test_acc << '\n';
  }
  finish_report(out, rep);
  return 0;
}

int cmd_eval_link(const CommonFlags& f, char** envp) {
  const auto cfg = resolve(f, envp);
  const auto ds = load_data(cfg);
  const auto out = prepare_out(cfg);
  const bool pretrained = !cfg.run.checkpoint.empty();
  auto rep = new_report(cfg, ds, "hits@" + std::to_string(cfg.link.k));
  rep.task = "edge";
  for (auto seed : cfg.run.seeds) {
    const auto m = make_model(cfg, ds, seed, pretrained);
    const auto res = downstream::eval_link(m, ds, cfg.tokenizer, cfg.link, cfg.probe, seed);
    rep.seeds.push_back(seed);
    rep.values.push_back(res.hits);
    rep.extra["per_seed"].push_back({{"seed", seed}, {"hits", res.hits}, {"train_edges", res.train_edges},
                                     {"val_edges", res.val_edges}, {"test_edges", res.test_edges}});
    std::cerr << "eval-link: seed " << seed << ' ' << rep.metric << ' ' << res.hits << '\n';
  }
  finish_report(out, rep);
  return 0;
}

struct GenFlags {
  std::string spec = "sbm";
  std::uint64_t seed = 0;
  std::string out;
  graph::GeneratorSpec gen;
  std::vector<std::size_t> blocks;
};

int cmd_gen(GenFlags& f) {
  f.gen.kind = graph::generator_kind_from_string(f.spec);
  if (!f.blocks.empty()) f.gen.block_sizes = f.blocks;
  const auto ds = graph::gen_synthetic(f.gen, f.seed);
  graph::write_dataset(ds, f.out);
  std::cerr << "gen-synthetic: " << f.spec << " with " << ds.graphs.front().num_nodes() << " nodes and "
            << ds.graphs.front().num_edges() << " edges written to " << f.out << '\n';
  return 0;
}

struct WalkFlags {
  std::string data;
  std::string out;
  std::string dump_tokens;
  diag::WalkStatsConfig stats;
  std::size_t num_patterns = 8;
};

int cmd_walk_stats(const WalkFlags& f) {
  const auto ds = graph::load_dataset(f.data);
  json all = json::array();
  for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi) {
    auto rep = diag::walk_stats(ds.graphs[gi], f.stats).to_json();
    rep["graph"] = gi;
    all.push_back(rep);
  }
  const json report = ds.graphs.size() == 1 ? all.front() : json{{"graphs", all}};
  if (!f.out.empty()) {
    fs::create_directories(f.out);
    write_json(fs::path(f.out) / "walk_stats.json", report);
  }
  if (!f.dump_tokens.empty()) {
    tok::TokenizerConfig tc;
    tc.walk_len = f.stats.walk_len;
    tc.num_patterns = f.num_patterns;
    tc.seed = f.stats.seed;
    std::vector<std::size_t> ids(ds.instances.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    const auto toks = tok::tokenize_instances(ds, ids, tc, 0);
    std::ofstream dump(f.dump_tokens);
    if (!dump) throw IoError("cannot write " + f.dump_tokens);
    for (std::size_t i = 0; i < ids.size(); ++i) dump << tok::token_dump_record(ids[i], toks[i].walks) << '\n';
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_grad_check(const diag::GradCheckConfig& c, const std::string& out) {
  const auto rep = diag::grad_check(c);
  if (!out.empty()) {
    fs::create_directories(out);
    write_json(fs::path(out) / "grad_check.json", rep.to_json());
  }
  for (const auto& t : rep.tensors) {
    std::cerr << t.objective << ' ' << t.name << " rel_error " << t.rel_error << '\n';
  }
  std::cout << "max relative error " << rep.max_rel_error << " (tolerance " << rep.tolerance << ", "
            << rep.tensors.size() << " tensors, " << rep.seconds << " s)\n";
  return rep.passed() ? 0 : 1;
}

}  // namespace

int cli_main(int argc, char** argv, char** envp) {
  CLI::App app{"G2PM: graph pattern masked pre-training toolkit"};
  app.require_subcommand(1);

  CommonFlags pre, probe, ft, link;
  std::string resume;
  auto* s_pre = app.add_subcommand("pretrain", "masked substructure pre-training");
  add_common(s_pre, pre, "pretrain.epochs");
  s_pre->add_option("--resume", resume, "continue from a pre-training checkpoint");
  auto* s_probe = app.add_subcommand("probe", "linear probe on frozen embeddings");
  add_common(s_probe, probe, "");
  auto* s_ft = app.add_subcommand("finetune", "end-to-end fine-tuning");
  add_common(s_ft, ft, "finetune.epochs");
  s_ft->add_option_function<std::string>("--init", [&ft](const std::string& v) { ft.direct["run.init"] = v; },
                                         "scratch or pretrained");
  auto* s_link = app.add_subcommand("eval-link", "link prediction (hits@K)");
  add_common(s_link, link, "");

  GenFlags gen;
  auto* s_gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset directory");
  s_gen->add_option("--spec", gen.spec, "sbm, path, cycle, star or complete")->capture_default_str();
  s_gen->add_option("--seed", gen.seed)->capture_default_str();
  s_gen->add_option("--out", gen.out, "output directory")->required();
  s_gen->add_option("--n", gen.gen.n, "size of path/cycle/complete, leaves of star")->capture_default_str();
  s_gen->add_option("--blocks", gen.blocks, "SBM block sizes")->delimiter(',');
  s_gen->add_option("--p-in", gen.gen.p_in)->capture_default_str();
  s_gen->add_option("--p-out", gen.gen.p_out)->capture_default_str();
  s_gen->add_option("--mu", gen.gen.mu)->capture_default_str();
  s_gen->add_option("--noise", gen.gen.noise)->capture_default_str();
  s_gen->add_option("--feat-dim", gen.gen.feat_dim)->capture_default_str();

  WalkFlags walk;
  auto* s_walk = app.add_subcommand("walk-stats", "check sampled transitions against the walk law");
  s_walk->add_option("--data", walk.data, "dataset directory")->required();
  s_walk->add_option("--out", walk.out, "write walk_stats.json here");
  s_walk->add_option("--samples", walk.stats.samples_per_node)->capture_default_str();
  s_walk->add_option("--max-nodes", walk.stats.max_nodes)->capture_default_str();
  s_walk->add_option("--walk-len", walk.stats.walk_len)->capture_default_str();
  s_walk->add_option("--num-patterns", walk.num_patterns, "walks per instance in the token dump")->capture_default_str();
  s_walk->add_option("--seed", walk.stats.seed)->capture_default_str();
  s_walk->add_option("--dump-tokens", walk.dump_tokens, "write a JSON-lines token dump");

  diag::GradCheckConfig gc;
  std::string gc_out;
  auto* s_gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  s_gc->add_option("--seed", gc.seed)->capture_default_str();
  s_gc->add_option("--tolerance", gc.tolerance)->capture_default_str();
  s_gc->add_option("--out", gc_out, "write grad_check.json here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (s_pre->parsed()) return cmd_pretrain(pre, resume, envp);
    if (s_probe->parsed()) return cmd_probe(probe, envp);
    if (s_ft->parsed()) return cmd_finetune(ft, envp);
    if (s_link->parsed()) return cmd_eval_link(link, envp);
    if (s_gen->parsed()) return cmd_gen(gen);
    if (s_walk->parsed()) return cmd_walk_stats(walk);
    if (s_gc->parsed()) return cmd_grad_check(gc, gc_out);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace g2pm::cli

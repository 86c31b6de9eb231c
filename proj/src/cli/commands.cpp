#include "memdpc/cli/commands.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <optional>

#include "memdpc/cli/config.hpp"
#include "memdpc/core/error.hpp"
#include "memdpc/evaluation/embedding.hpp"
#include "memdpc/evaluation/memory_export.hpp"
#include "memdpc/evaluation/probe.hpp"
#include "memdpc/evaluation/retrieval.hpp"
#include "memdpc/evaluation/unintentional.hpp"
#include "memdpc/training/batching.hpp"
#include "memdpc/training/checkpoint.hpp"
#include "memdpc/training/pretrain.hpp"
#include "memdpc/videodata/synthetic.hpp"

namespace memdpc::cli {

namespace fs = std::filesystem;
using nlohmann::json;

RunLock::RunLock(const fs::path& run_dir) {
  const auto file = run_dir / ".lock";
  fd_ = ::open(file.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd_ < 0) fail(ErrorKind::IoError, "cannot open " + file.string() + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    fail(ErrorKind::IoError, "run directory " + run_dir.string() + " is locked by another process");
  }
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

fs::path run_directory(const json& cfg, const std::string& command) {
  fs::path root = cfg.at("run.root").get<std::string>();
  if (root.empty()) {
    const char* env = std::getenv("MEMDPC_RUN_ROOT");
    root = env && *env ? fs::path(env) : fs::path("runs");
  }
  std::string name = cfg.at("run.name").get<std::string>();
  if (name.empty()) name = command;
  return root / name;
}

std::string error_line(const std::string& kind, int exit_code, const std::string& message) {
  return json{{"error", kind}, {"exit_code", exit_code}, {"message", message}}.dump();
}

namespace {

struct Context {
  std::string command;
  json cfg;
  fs::path run_dir;
};

std::string str(const json& cfg, const std::string& key) { return cfg.at(key).get<std::string>(); }

videodata::DatasetIndex open_dataset(const json& cfg) {
  const std::string root = str(cfg, "data.root");
  if (root.empty()) fail(ErrorKind::ConfigError, "data.root is required");
  return videodata::read_index(fs::path(root) / "index.csv");
}

training::Model make_model(const json& cfg, const training::TrainConfig& tc) {
  const std::string ckpt = str(cfg, "model.checkpoint");
  if (ckpt.empty()) return training::Model(tc.model, tc.seed);
  return training::load_model(training::load_checkpoint(ckpt), tc.model);
}

std::vector<videodata::LoadedClip> split_clips(const videodata::DatasetIndex& index, videodata::Split split,
                                               const training::TrainConfig& tc) {
  return training::load_split(index, split, tc.modality, tc.data, tc.model.backbone.block_len);
}

void write_json(const fs::path& file, const json& j) {
  std::ofstream out(file);
  if (!out) fail(ErrorKind::IoError, "cannot write " + file.string());
  out << j.dump(2) << '\n';
}

json cmd_gen_synthetic(const Context& ctx) {
  const auto spec = synthetic_spec(ctx.cfg);
  const std::string root = str(ctx.cfg, "data.root");
  if (root.empty()) fail(ErrorKind::ConfigError, "data.root is required");
  if (fs::exists(fs::path(root) / "index.csv")) {
    fail(ErrorKind::IoError, "refusing to overwrite the dataset at " + root);
  }
  const auto index = videodata::gen_synthetic(spec, root);
  return {{"clips", index.entries.size()}, {"num_classes", index.num_classes}, {"index", (fs::path(root) / "index.csv").string()}};
}

json cmd_pretrain(const Context& ctx) {
  const auto tc = train_config(ctx.cfg);
  const auto index = open_dataset(ctx.cfg);
  const std::string resume = str(ctx.cfg, "train.resume");
  if (resume.empty() && fs::exists(ctx.run_dir / "metrics.csv")) {
    fail(ErrorKind::ConfigError, "run directory " + ctx.run_dir.string() +
                                     " already holds a pretraining run; set train.resume or another run.name");
  }
  training::Pretrainer trainer(tc, index, ctx.run_dir);
  if (!resume.empty()) trainer.resume(training::load_checkpoint(resume));
  trainer.run();
  std::vector<double> train_losses;
  for (const auto& row : trainer.history())
    if (row.split == "train") train_losses.push_back(row.loss);
  const std::size_t tail = std::min<std::size_t>(50, train_losses.size());
  double final_loss = 0.0;
  for (std::size_t i = train_losses.size() - tail; i < train_losses.size(); ++i) final_loss += train_losses[i];
  if (tail > 0) final_loss /= static_cast<double>(tail);
  const json summary = {{"steps", trainer.step()},
                        {"chance_loss", trainer.chance_loss()},
                        {"final_train_loss", final_loss},
                        {"checkpoint", (ctx.run_dir / "checkpoints" / "final.ckpt").string()}};
  write_json(ctx.run_dir / "summary.json", summary);
  return summary;
}

json cmd_probe(const Context& ctx) {
  const auto tc = train_config(ctx.cfg);
  const auto pc = probe_config(ctx.cfg);
  const auto index = open_dataset(ctx.cfg);
  const auto train = split_clips(index, videodata::Split::Train, tc);
  const auto test = split_clips(index, videodata::Split::Test, tc);
  const auto fractions = ctx.cfg.at("probe.fractions").get<std::vector<double>>();

  if (!fractions.empty()) {
    const std::string ckpt = str(ctx.cfg, "model.checkpoint");
    if (ckpt.empty()) fail(ErrorKind::ConfigError, "the data-efficiency sweep needs model.checkpoint");
    std::vector<std::uint64_t> seeds;
    for (auto s : ctx.cfg.at("probe.seeds").get<std::vector<std::int64_t>>()) {
      if (s < 0) fail(ErrorKind::ConfigError, "probe.seeds must be >= 0");
      seeds.push_back(static_cast<std::uint64_t>(s));
    }
    if (seeds.empty()) fail(ErrorKind::ConfigError, "probe.seeds is empty");
    const auto pretrained = training::load_checkpoint(ckpt);
    training::load_model(pretrained, tc.model);  // architecture check
    auto sweep_cfg = pc;
    sweep_cfg.mode = evaluation::ProbeMode::Finetune;
    const auto rows = evaluation::data_efficiency_sweep(fractions, seeds, sweep_cfg, pretrained, train, test,
                                                        index.num_classes, tc.data);
    evaluation::write_efficiency(rows, ctx.run_dir / "efficiency.csv");
    json out = json::array();
    for (const auto& r : rows)
      out.push_back({{"fraction", r.fraction}, {"init", r.init}, {"seed", r.seed}, {"accuracy", r.accuracy}});
    return {{"efficiency", out}};
  }

  auto model = make_model(ctx.cfg, tc);
  const auto r = evaluation::train_classifier(model, train, test, index.num_classes, tc.data, pc);
  std::ofstream pred(ctx.run_dir / "predictions.csv");
  if (!pred) fail(ErrorKind::IoError, "cannot write predictions.csv");
  pred << "clip_id,label,prediction\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    pred << evaluation::clip_id(test[i].entry) << ',' << test[i].entry.label << ',' << r.test_predictions[i] << '\n';
  }
  const json summary = {{"mode", evaluation::to_string(pc.mode)},
                        {"train_accuracy", r.train_accuracy},
                        {"test_accuracy", r.test_accuracy},
                        {"num_train", r.num_train},
                        {"num_test", test.size()}};
  write_json(ctx.run_dir / "probe.json", summary);
  return summary;
}

json cmd_retrieve(const Context& ctx) {
  const auto ks = ctx.cfg.at("retrieve.ks").get<std::vector<int>>();
  const std::string qfile = str(ctx.cfg, "retrieve.queries"), gfile = str(ctx.cfg, "retrieve.gallery");
  std::vector<evaluation::ClipEmbedding> queries, gallery;
  if (!qfile.empty() || !gfile.empty()) {
    if (qfile.empty() || gfile.empty()) {
      fail(ErrorKind::ConfigError, "retrieve.queries and retrieve.gallery must be given together");
    }
    queries = evaluation::read_embeddings(qfile);
    gallery = evaluation::read_embeddings(gfile);
  } else {
    const auto tc = train_config(ctx.cfg);
    const auto index = open_dataset(ctx.cfg);
    const auto model = make_model(ctx.cfg, tc);
    gallery = evaluation::extract_embeddings(split_clips(index, videodata::Split::Train, tc), model, tc.data);
    queries = evaluation::extract_embeddings(split_clips(index, videodata::Split::Test, tc), model, tc.data);
    evaluation::write_embeddings(gallery, ctx.run_dir / "embeddings_train.csv");
    evaluation::write_embeddings(queries, ctx.run_dir / "embeddings_test.csv");
  }
  const auto recall = evaluation::retrieve(queries, gallery, ks);
  evaluation::write_recall(recall, ctx.run_dir / "recall.csv");
  json out = json::object();
  for (const auto& r : recall) out["R@" + std::to_string(r.k)] = r.recall;
  return {{"recall", out}, {"queries", queries.size()}, {"gallery", gallery.size()}};
}

json cmd_unintentional(const Context& ctx) {
  const auto tc = train_config(ctx.cfg);
  const auto uc = unintentional_config(ctx.cfg);
  const auto index = open_dataset(ctx.cfg);
  auto model = make_model(ctx.cfg, tc);
  const auto r = evaluation::unintentional_train_eval(model, split_clips(index, videodata::Split::Train, tc),
                                                      split_clips(index, videodata::Split::Test, tc), tc.data, uc);
  const json summary = {{"mode", uc.finetune ? "finetune" : "freeze"},
                        {"accuracy", r.accuracy},
                        {"balanced_accuracy", r.balanced_accuracy},
                        {"confusion", r.confusion},
                        {"num_test_blocks", r.num_test_blocks}};
  write_json(ctx.run_dir / "unintentional.json", summary);
  return summary;
}

json cmd_export_memory(const Context& ctx) {
  const auto tc = train_config(ctx.cfg);
  const auto index = open_dataset(ctx.cfg);
  const auto model = make_model(ctx.cfg, tc);
  const auto split = videodata::parse_split(str(ctx.cfg, "export.split"));
  evaluation::export_memory_views(model, split_clips(index, split, tc), tc.data, tc.pred_steps, ctx.run_dir);
  return {{"slots", model.memory.slots()}, {"out_dir", ctx.run_dir.string()}};
}

struct CommandDef {
  std::string name;
  std::string help;
  std::function<json(const Context&)> fn;
};

const std::vector<CommandDef>& commands() {
  static const std::vector<CommandDef> c = {
      {"gen-synthetic", "write a moving-sprite dataset to data.root", cmd_gen_synthetic},
      {"pretrain", "self-supervised pretraining", cmd_pretrain},
      {"probe", "linear, non-linear or finetuned classification; data-efficiency sweep", cmd_probe},
      {"retrieve", "nearest-neighbour retrieval, recall at k", cmd_retrieve},
      {"unintentional", "three-class unintentional-action classification", cmd_unintentional},
      {"export-memory", "memory magnitudes, nearest clips and addressing vectors", cmd_export_memory},
  };
  return c;
}

std::vector<std::pair<std::string, std::string>> key_flags(const std::vector<std::string>& extras) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& tok = extras[i];
    if (tok.rfind("--", 0) != 0 || tok.size() == 2) fail(ErrorKind::ConfigError, "unexpected argument '" + tok + "'");
    const std::string body = tok.substr(2);
    const auto eq = body.find('=');
    const std::string name = body.substr(0, eq);
    if (!find_key(name)) fail(ErrorKind::ConfigError, "unknown config key '" + name + "'");
    if (eq != std::string::npos) {
      out.emplace_back(name, body.substr(eq + 1));
    } else {
      if (i + 1 >= extras.size()) fail(ErrorKind::ConfigError, "missing value for '" + name + "'");
      out.emplace_back(name, extras[++i]);
    }
  }
  return out;
}

void print_keys(std::ostream& out) {
  for (const auto& k : registry()) {
    out << k.name << " (" << to_string(k.type) << ", default " << k.default_value.dump() << "): " << k.doc << '\n';
  }
  out << "profiles:";
  for (const auto& p : profile_names()) out << ' ' << p;
  out << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memory-augmented dense predictive coding"};
  app.name("memdpc");
  app.require_subcommand(1);
  std::optional<std::string> config_file, profile_name;
  std::vector<std::pair<CLI::App*, const CommandDef*>> subs;
  for (const auto& def : commands()) {
    auto* sub = app.add_subcommand(def.name, def.help);
    sub->add_option("--config", config_file, "flat JSON file of dotted keys");
    sub->add_option("--profile", profile_name, "named defaults: paper_ucf_r18, desk_tiny");
    sub->allow_extras();
    sub->footer("Any key listed by `memdpc keys` can be given as --key value or --key=value.");
    subs.emplace_back(sub, &def);
  }
  auto* keys = app.add_subcommand("keys", "list configuration keys and profiles");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    const int code = exit_code(ErrorKind::ConfigError);
    err << error_line(std::string(to_string(ErrorKind::ConfigError)), code, e.what()) << std::endl;
    return code;
  }

  if (keys->parsed()) {
    print_keys(out);
    return 0;
  }

  try {
    for (const auto& [sub, def] : subs) {
      if (!sub->parsed()) continue;
      Context ctx;
      ctx.command = def->name;
      ctx.cfg = resolve(profile_name, config_file, key_flags(sub->remaining()));
      ctx.run_dir = run_directory(ctx.cfg, ctx.command);
      fs::create_directories(ctx.run_dir);
      RunLock lock(ctx.run_dir);
      write_json(ctx.run_dir / "run_config.json", ctx.cfg);
      json result = def->fn(ctx);
      result["command"] = ctx.command;
      result["run_dir"] = ctx.run_dir.string();
      out << result.dump() << std::endl;
      return 0;
    }
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    err << error_line(std::string(to_string(e.kind())), code, e.what()) << std::endl;
    return code;
  } catch (const fs::filesystem_error& e) {
    const int code = exit_code(ErrorKind::IoError);
    err << error_line(std::string(to_string(ErrorKind::IoError)), code, e.what()) << std::endl;
    return code;
  } catch (const std::exception& e) {
    err << error_line(std::string(to_string(ErrorKind::Internal)), 1, e.what()) << std::endl;
    return 1;
  }
  return 1;
}

}  // namespace memdpc::cli

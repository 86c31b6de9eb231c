#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "memdpc/cli/commands.hpp"
#include "memdpc/cli/config.hpp"
#include "memdpc/core/error.hpp"
#include "support/tmpdir.hpp"

namespace memdpc::cli {
namespace {

using nlohmann::json;

struct Outcome {
  int code;
  std::string out, err;
};

Outcome call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json last_json(const std::string& text) {
  std::istringstream in(text);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return json::parse(last);
}

/// Small packed dataset shared by the command tests.
class CliRun : public ::testing::Test {
 protected:
  testing::TempDir dir;
  std::string data, runs;

  void SetUp() override {
    data = (dir / "data").string();
    runs = (dir / "runs").string();
    const auto r = call({"gen-synthetic", "--profile", "desk_tiny", "--data.root", data, "--run.root", runs,
                         "--synthetic.clips_per_class", "4", "--synthetic.clip_len", "40",
                         "--synthetic.write_png", "false", "--synthetic.glitch", "true"});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  std::vector<std::string> base(const std::string& cmd, const std::string& name) const {
    return {cmd, "--profile", "desk_tiny", "--data.root", data, "--run.root", runs, "--run.name", name,
            "--model.memory_k", "8", "--train.batch_size", "4"};
  }

  std::vector<std::string> pretrain_args(const std::string& name) const {
    auto a = base("pretrain", name);
    for (const char* s : {"--train.max_steps", "4", "--train.val_every", "2", "--train.val_batches", "1",
                          "--train.checkpoint_every", "2", "--train.deterministic", "true", "--seed", "3"})
      a.push_back(s);
    return a;
  }
};

TEST(CliConfig, DefaultsMatchTheLibraryDefaults) {
  const json d = defaults();
  EXPECT_EQ(train_config(d).to_json(), training::TrainConfig{}.to_json());
  const auto s = synthetic_spec(d);
  const videodata::SyntheticSpec ref;
  EXPECT_EQ(s.clips_per_class, ref.clips_per_class);
  EXPECT_EQ(s.clip_len, ref.clip_len);
  EXPECT_EQ(s.speed, ref.speed);
  EXPECT_EQ(s.colour_jitter, ref.colour_jitter);
  EXPECT_EQ(s.train_fraction, ref.train_fraction);
  const auto p = probe_config(d);
  const evaluation::ProbeConfig pref;
  EXPECT_EQ(p.dropout, pref.dropout);
  EXPECT_EQ(p.epochs, pref.epochs);
  EXPECT_EQ(p.lr, pref.lr);
  const auto u = unintentional_config(d);
  EXPECT_EQ(u.steps, evaluation::UnintentionalConfig{}.steps);
  EXPECT_FALSE(u.finetune);
}

TEST(CliConfig, EveryKeyIsDocumentedAndUnique) {
  std::set<std::string> seen;
  for (const auto& k : registry()) {
    EXPECT_FALSE(k.doc.empty()) << k.name;
    EXPECT_TRUE(seen.insert(k.name).second) << k.name;
    EXPECT_NO_THROW(coerce(k, k.default_value)) << k.name;
  }
}

TEST(CliConfig, PaperProfileValues) {
  json cfg = defaults();
  merge(cfg, profile("paper_ucf_r18"), "profile");
  const auto tc = train_config(cfg);
  EXPECT_EQ(tc.model.memory_k, 1024);
  EXPECT_EQ(tc.data.num_blocks, 8);
  EXPECT_EQ(tc.model.backbone.block_len, 5);
  EXPECT_EQ(tc.data.sampling_stride, 3);
  EXPECT_EQ(tc.model.backbone.depth, backbone::EncoderDepth::R18);
  EXPECT_EQ(tc.model.backbone.input_size, 128);
  EXPECT_DOUBLE_EQ(tc.lr, 1e-3);
  EXPECT_DOUBLE_EQ(tc.lr * tc.lr_decay_factor, 1e-4);
  EXPECT_EQ(tc.batch_size, 16);
  EXPECT_DOUBLE_EQ(probe_config(cfg).dropout, 0.9);
}

TEST(CliConfig, DeskProfileValues) {
  json cfg = defaults();
  merge(cfg, profile("desk_tiny"), "profile");
  const auto tc = train_config(cfg);
  EXPECT_EQ(tc.model.memory_k, 64);
  EXPECT_EQ(tc.model.backbone.input_size, 32);
  EXPECT_EQ(tc.model.backbone.depth, backbone::EncoderDepth::Tiny);
  EXPECT_EQ(synthetic_spec(cfg).frame_size, 32);
}

TEST(CliConfig, PrecedenceIsProfileThenFileThenFlags) {
  testing::TempDir dir;
  std::ofstream(dir / "c.json") << R"({"model.memory_k": 32, "train.lr": 0.01})";
  const auto cfg = resolve(std::string("desk_tiny"), (dir / "c.json").string(), {{"train.lr", "0.002"}});
  EXPECT_EQ(cfg.at("model.memory_k"), 32);
  EXPECT_DOUBLE_EQ(cfg.at("train.lr").get<double>(), 0.002);
  EXPECT_EQ(cfg.at("data.sampling_stride"), 1);
}

TEST(CliConfig, TypedParsing) {
  const auto* ks = find_key("retrieve.ks");
  ASSERT_NE(ks, nullptr);
  EXPECT_EQ(parse_value(*ks, "1,5,10"), json::array({1, 5, 10}));
  const auto* lr = find_key("train.lr");
  EXPECT_DOUBLE_EQ(parse_value(*lr, "1e-4").get<double>(), 1e-4);
  EXPECT_THROW(parse_value(*lr, "fast"), Error);
  EXPECT_THROW(parse_value(*find_key("seed"), "1.5"), Error);
  EXPECT_THROW(parse_value(*find_key("train.deterministic"), "yes"), Error);
  EXPECT_EQ(coerce(*lr, json(1)).get<double>(), 1.0);
  EXPECT_THROW(coerce(*find_key("model.memory_k"), json("64")), Error);
}

TEST(Cli, UnknownFlagKeyExitsTwoNamingTheKey) {
  testing::TempDir dir;
  const auto r = call({"pretrain", "--memroy_k", "64", "--run.root", dir.path().string()});
  EXPECT_EQ(r.code, 2);
  const auto line = last_json(r.err);
  EXPECT_EQ(line.at("exit_code"), 2);
  EXPECT_EQ(line.at("error"), "ConfigError");
  EXPECT_NE(line.at("message").get<std::string>().find("memroy_k"), std::string::npos);
}

TEST(Cli, UnknownFileKeyExitsTwoNamingTheKey) {
  testing::TempDir dir;
  std::ofstream(dir / "c.json") << R"({"memroy_k": 64})";
  const auto r = call({"retrieve", "--config", (dir / "c.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("memroy_k"), std::string::npos);
}

TEST(Cli, BadValuesAndMissingDataAreConfigErrors) {
  testing::TempDir dir;
  EXPECT_EQ(call({"pretrain", "--train.lr", "fast"}).code, 2);
  EXPECT_EQ(call({"pretrain", "--run.root", dir.path().string()}).code, 2);  // no data.root
  EXPECT_EQ(call({"probe", "--profile", "nope"}).code, 2);
  EXPECT_EQ(call({"frobnicate"}).code, 2);
  EXPECT_EQ(call({}).code, 2);
}

TEST(Cli, MissingDatasetIsADataError) {
  testing::TempDir dir;
  const auto r = call({"pretrain", "--data.root", (dir / "none").string(), "--run.root", dir.path().string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(last_json(r.err).at("error"), "IoError");
}

TEST(Cli, HelpAndKeyListingSucceed) {
  const auto h = call({"--help"});
  EXPECT_EQ(h.code, 0);
  EXPECT_NE(h.out.find("pretrain"), std::string::npos);
  const auto k = call({"keys"});
  EXPECT_EQ(k.code, 0);
  EXPECT_NE(k.out.find("model.memory_k"), std::string::npos);
  EXPECT_NE(k.out.find("paper_ucf_r18"), std::string::npos);
}

TEST(Cli, RunRootFallsBackToTheEnvironment) {
  testing::TempDir dir;
  ::setenv("MEMDPC_RUN_ROOT", dir.path().c_str(), 1);
  EXPECT_EQ(run_directory(defaults(), "probe"), dir.path() / "probe");
  ::unsetenv("MEMDPC_RUN_ROOT");
  EXPECT_EQ(run_directory(defaults(), "probe"), std::filesystem::path("runs") / "probe");
  json cfg = defaults();
  cfg["run.root"] = "/x";
  cfg["run.name"] = "y";
  EXPECT_EQ(run_directory(cfg, "probe"), std::filesystem::path("/x/y"));
}

TEST(Cli, RunLockExcludesASecondWriter) {
  testing::TempDir dir;
  {
    RunLock first(dir.path());
    try {
      RunLock second(dir.path());
      FAIL() << "second lock acquired";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::IoError);
    }
  }
  EXPECT_NO_THROW(RunLock again(dir.path()));
}

TEST_F(CliRun, LockedRunDirectoryIsRefused) {
  std::filesystem::create_directories(std::filesystem::path(runs) / "held");
  RunLock held(std::filesystem::path(runs) / "held");
  const auto r = call(base("export-memory", "held"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("locked"), std::string::npos);
}

TEST_F(CliRun, GenSyntheticNeverOverwrites) {
  const auto before = slurp(std::filesystem::path(data) / "index.csv");
  const auto r = call({"gen-synthetic", "--data.root", data, "--run.root", runs, "--synthetic.clips_per_class", "2"});
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(slurp(std::filesystem::path(data) / "index.csv"), before);
}

TEST_F(CliRun, PretrainTwiceGivesIdenticalMetricsAndTheSnapshotReproducesIt) {
  const auto a = call(pretrain_args("a"));
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = call(pretrain_args("b"));
  ASSERT_EQ(b.code, 0) << b.err;
  const std::filesystem::path root(runs);
  const auto metrics = slurp(root / "a" / "metrics.csv");
  EXPECT_FALSE(metrics.empty());
  EXPECT_EQ(slurp(root / "b" / "metrics.csv"), metrics);
  EXPECT_EQ(slurp(root / "a" / "checkpoints" / "final.ckpt"), slurp(root / "b" / "checkpoints" / "final.ckpt"));

  // The snapshot alone re-runs the command; only the run name differs.
  const auto c = call({"pretrain", "--config", (root / "a" / "run_config.json").string(), "--run.name", "c"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(slurp(root / "c" / "metrics.csv"), metrics);

  const auto summary = last_json(a.out);
  EXPECT_EQ(summary.at("steps"), 4);
  EXPECT_GT(summary.at("chance_loss").get<double>(), 0.0);

  // A second pretrain into a used directory must name a checkpoint to resume.
  EXPECT_EQ(call(pretrain_args("a")).code, 2);
}

TEST_F(CliRun, ResumeContinuesFromACheckpoint) {
  ASSERT_EQ(call(pretrain_args("full")).code, 0);
  auto first = pretrain_args("half");
  first[std::find(first.begin(), first.end(), "--train.max_steps") - first.begin() + 1] = "2";
  ASSERT_EQ(call(first).code, 0);
  auto rest = pretrain_args("half");
  rest.push_back("--train.resume");
  rest.push_back((std::filesystem::path(runs) / "half" / "checkpoints" / "step_000002.ckpt").string());
  const auto r = call(rest);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::filesystem::path root(runs);
  EXPECT_EQ(slurp(root / "half" / "checkpoints" / "final.ckpt"), slurp(root / "full" / "checkpoints" / "final.ckpt"));
}

TEST_F(CliRun, DownstreamCommandsWriteTheirReportsAndLeaveDataUntouched) {
  const auto index_before = slurp(std::filesystem::path(data) / "index.csv");
  ASSERT_EQ(call(pretrain_args("pre")).code, 0);
  const std::string ckpt = (std::filesystem::path(runs) / "pre" / "checkpoints" / "final.ckpt").string();
  const std::filesystem::path root(runs);

  auto probe = base("probe", "probe");
  for (const char* s : {"--probe.epochs", "2", "--model.checkpoint"}) probe.push_back(s);
  probe.push_back(ckpt);
  const auto p = call(probe);
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_TRUE(std::filesystem::exists(root / "probe" / "probe.json"));
  const auto pj = last_json(p.out);
  EXPECT_EQ(pj.at("mode"), "linear");
  EXPECT_EQ(pj.at("num_test"), 4);

  auto sweep = base("probe", "sweep");
  for (const char* s : {"--probe.epochs", "1", "--probe.fractions", "0.5,1", "--probe.seeds", "0,1", "--model.checkpoint"})
    sweep.push_back(s);
  sweep.push_back(ckpt);
  ASSERT_EQ(call(sweep).code, 0);
  std::ifstream eff(root / "sweep" / "efficiency.csv");
  int rows = 0;
  for (std::string line; std::getline(eff, line);) ++rows;
  EXPECT_EQ(rows, 1 + 2 * 2 * 2);

  auto retr = base("retrieve", "retr");
  retr.push_back("--model.checkpoint");
  retr.push_back(ckpt);
  ASSERT_EQ(call(retr).code, 0);
  const auto emb = (root / "retr" / "embeddings_test.csv").string();
  const auto self = call({"retrieve", "--retrieve.queries", emb, "--retrieve.gallery", emb, "--run.root", runs,
                          "--run.name", "self"});
  ASSERT_EQ(self.code, 0) << self.err;
  EXPECT_DOUBLE_EQ(last_json(self.out).at("recall").at("R@1").get<double>(), 1.0);
  EXPECT_NE(slurp(root / "self" / "recall.csv").find("1,1"), std::string::npos);

  auto unint = base("unintentional", "unint");
  for (const char* s : {"--unintentional.steps", "5", "--model.checkpoint"}) unint.push_back(s);
  unint.push_back(ckpt);
  const auto u = call(unint);
  ASSERT_EQ(u.code, 0) << u.err;
  EXPECT_TRUE(std::filesystem::exists(root / "unint" / "unintentional.json"));

  auto mem = base("export-memory", "mem");
  mem.push_back("--model.checkpoint");
  mem.push_back(ckpt);
  ASSERT_EQ(call(mem).code, 0);
  for (const char* f : {"memory_magnitude.csv", "memory_neighbours.csv", "addressing_vectors.csv", "run_config.json"})
    EXPECT_TRUE(std::filesystem::exists(root / "mem" / f)) << f;

  EXPECT_EQ(slurp(std::filesystem::path(data) / "index.csv"), index_before);
}

TEST_F(CliRun, CheckpointArchitectureMismatchIsAConfigError) {
  ASSERT_EQ(call(pretrain_args("pre")).code, 0);
  auto probe = base("probe", "bad");
  probe[std::find(probe.begin(), probe.end(), "--model.memory_k") - probe.begin() + 1] = "16";
  probe.push_back("--model.checkpoint");
  probe.push_back((std::filesystem::path(runs) / "pre" / "checkpoints" / "final.ckpt").string());
  const auto r = call(probe);
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(last_json(r.err).at("error"), "ConfigMismatch");
}

TEST_F(CliRun, UnintentionalNeedsFailureTimestamps) {
  const std::string plain = (dir / "plain").string();
  ASSERT_EQ(call({"gen-synthetic", "--data.root", plain, "--run.root", runs, "--synthetic.clips_per_class", "4",
                  "--synthetic.clip_len", "40", "--synthetic.write_png", "false"})
                .code,
            0);
  auto a = base("unintentional", "u");
  a[std::find(a.begin(), a.end(), "--data.root") - a.begin() + 1] = plain;
  const auto r = call(a);
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(last_json(r.err).at("error"), "MissingTimestamp");
}

}  // namespace
}  // namespace memdpc::cli

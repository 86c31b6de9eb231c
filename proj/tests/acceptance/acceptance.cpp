// One line per acceptance criterion: PASS or FAIL, the measured values, and
// the wall time. Exit status is nonzero when any criterion fails. Passing
// criterion names as arguments runs only those.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "memdpc/cli/config.hpp"
#include "memdpc/core/error.hpp"
#include "memdpc/evaluation/embedding.hpp"
#include "memdpc/evaluation/probe.hpp"
#include "memdpc/evaluation/retrieval.hpp"
#include "memdpc/evaluation/unintentional.hpp"
#include "memdpc/loss/contrastive.hpp"
#include "memdpc/memory/memory.hpp"
#include "memdpc/training/checkpoint.hpp"
#include "memdpc/training/pretrain.hpp"
#include "memdpc/videodata/flow.hpp"
#include "memdpc/videodata/synthetic.hpp"
#include "support/gradcheck.hpp"
#include "support/tmpdir.hpp"

using namespace memdpc;
namespace fs = std::filesystem;

namespace {

constexpr int kSeeds = 3;
constexpr int kSweepEpochs = 30;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

nlohmann::json desk_config(int seed, bool glitch = false) {
  return cli::resolve(std::string("desk_tiny"), std::nullopt,
                      {{"seed", std::to_string(seed)},
                       {"synthetic.seed", std::to_string(seed)},
                       {"synthetic.glitch", glitch ? "true" : "false"},
                       {"synthetic.write_png", "false"}});
}

// ------------------------------------------------------------ exact checks

Verdict oracle_equivalence() {
  Rng rng(101);
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::int64_t largest = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::int64_t B, S, H, W;
    do {
      B = rng.integer(1, 4);
      S = rng.integer(1, 3);
      H = rng.integer(1, 4);
      W = rng.integer(1, 4);
    } while (B * S * H * W > 256 || B * S * H * W < 2);
    const std::int64_t C = rng.integer(1, 16);
    const double scale = std::exp(rng.uniform(-2.0, 1.5));
    const Tensor pred = rng.normal_tensor({B, S, C, H, W}, scale);
    const Tensor target = rng.normal_tensor({B, S, C, H, W}, scale);
    const bool normalized = trial % 2 == 1;
    const auto fast = loss::dense_contrastive_loss(pred, target, normalized);
    const double slow = loss::contrastive_loss_oracle(pred, target, normalized);
    worst = std::max(worst, std::abs(fast.value - slow));
    largest = std::max(largest, fast.num_candidates);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-10 && secs < 60.0, "max |loss - oracle| = " + fmt(worst) + " over 100 instances (N <= " +
                                             std::to_string(largest) + "), " + fmt(secs, 3) + " s"};
}

Verdict expected_critic_identity() {
  Rng rng(202);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = static_cast<int>(rng.integer(1, 64));
    const int C = static_cast<int>(rng.integer(1, 32));
    Tensor p({k, 1, 1});
    double total = 0.0;
    for (int i = 0; i < k; ++i) total += (p[i] = -std::log(rng.uniform(1e-12, 1.0)));
    for (int i = 0; i < k; ++i) p[i] /= total;
    const memory::MemoryBank bank(rng.normal_tensor({k, C}, 1.0));
    const Tensor z = rng.normal_tensor({C}, 1.0);
    const auto zhat = memory::expect_future(memory::AddressingDistribution{p}, bank).values;
    const double lhs = memory::critic(zhat.data(), z.data(), false);
    double rhs = 0.0;
    for (int i = 0; i < k; ++i) {
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += bank.rows()->value[i * C + c] * z[c];
      rhs += p[i] * dot;
    }
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return {worst <= 1e-10, "max |critic(sum p m, z) - sum p (m.z)| = " + fmt(worst) + " over 1000 draws"};
}

Verdict gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = desk_config(0);
  auto tc = cli::train_config(cfg);
  tc.model.backbone.batch_norm = false;
  tc.model.memory_k = 8;
  training::Model model(tc.model, 31);
  Rng rng(32);
  const int B = 2, N = tc.data.num_blocks;
  const Tensor x = rng.normal_tensor({B * N, 3, tc.model.backbone.block_len, 32, 32}, 1.0);
  auto params = model.parameters();
  std::set<std::string> groups;
  for (const auto& p : params) groups.insert(p.name.substr(0, p.name.find('.')));
  const auto res = testing::check_gradients(
      params, [&] { return training::pretext_loss(model, x, B, tc.pred_steps, false, true).loss; }, 1e-4, 4);
  const double secs = seconds_since(t0);
  std::string names;
  for (const auto& g : groups) names += (names.empty() ? "" : ",") + g;
  const bool covered = groups.count("encoder") && groups.count("aggregator") && groups.count("phi") &&
                       groups.count("memory");
  return {covered && res.max_rel_error <= 1e-4 && secs < 300.0 && res.checked >= static_cast<int>(params.size()),
          "max rel error " + fmt(res.max_rel_error) + " over " + std::to_string(res.checked) + " entries of " +
              std::to_string(params.size()) + " tensors {" + names + "}, " + fmt(secs, 3) + " s"};
}

Verdict addressing_invariants() {
  Rng rng(303);
  double worst_sum = 0.0, min_p = 1.0, worst_excess = -1e300;
  for (int trial = 0; trial < 1000; ++trial) {
    const int C = static_cast<int>(rng.integer(1, 16)), k = static_cast<int>(rng.integer(1, 64));
    const int H = static_cast<int>(rng.integer(1, 3)), W = static_cast<int>(rng.integer(1, 3));
    memory::Predictor phi(C, C, k, rng);
    const memory::MemoryBank bank(k, C, rng);
    const double scale = std::exp(rng.uniform(-3.0, 3.0));
    const double temperature = std::exp(rng.uniform(-2.0, 1.0));
    const auto p = memory::address(backbone::ContextFeature{rng.normal_tensor({C, H, W}, scale)}, phi, temperature);
    const auto zhat = memory::expect_future(p, bank).values;
    double max_row = 0.0;
    for (int i = 0; i < k; ++i) {
      double s = 0.0;
      for (int c = 0; c < C; ++c) s += std::pow(bank.rows()->value[i * C + c], 2);
      max_row = std::max(max_row, std::sqrt(s));
    }
    for (int pos = 0; pos < H * W; ++pos) {
      double sum = 0.0, norm = 0.0;
      for (int i = 0; i < k; ++i) {
        const double v = p.p[i * H * W + pos];
        min_p = std::min(min_p, v);
        sum += v;
      }
      for (int c = 0; c < C; ++c) norm += std::pow(zhat[c * H * W + pos], 2);
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
      worst_excess = std::max(worst_excess, std::sqrt(norm) - max_row);
    }
  }
  return {min_p >= 0.0 && worst_sum <= 1e-6 && worst_excess <= 1e-12,
          "min p = " + fmt(min_p) + ", max |sum p - 1| = " + fmt(worst_sum) +
              ", max(|zhat| - max|m_i|) = " + fmt(worst_excess) + " over 1000 draws"};
}

Verdict bit_exact(const training::Checkpoint& ckpt, const videodata::DatasetIndex& index) {
  std::vector<std::string> notes;
  bool ok = videodata::encode_displacement(-20.0) == 0 && videodata::encode_displacement(20.0) == 255;
  notes.push_back(std::string("flow endpoints ") + (ok ? "0/255" : "wrong"));

  const auto bytes = training::serialize(ckpt);
  const bool round = training::serialize(training::deserialize(bytes)) == bytes;
  testing::TempDir dir;
  training::save_checkpoint(ckpt, dir / "a.ckpt");
  training::save_checkpoint(training::load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
  const bool files = training::serialize(training::load_checkpoint(dir / "b.ckpt")) == bytes;
  notes.push_back(std::string("checkpoint round trip ") + (round && files ? "identical" : "differs"));
  ok = ok && round && files;

  auto tc = cli::train_config(desk_config(5));
  tc.max_steps = 20;
  tc.val_every = 10;
  tc.checkpoint_every = 10;
  tc.deterministic = true;
  const auto a = training::pretrain(tc, index, dir / "run_a");
  const auto b = training::pretrain(tc, index, dir / "run_b");
  std::ifstream ma(dir / "run_a" / "metrics.csv"), mb(dir / "run_b" / "metrics.csv");
  const std::string sa{std::istreambuf_iterator<char>(ma), {}}, sb{std::istreambuf_iterator<char>(mb), {}};
  const bool rerun = sa == sb && !sa.empty() &&
                     training::serialize(a.final_checkpoint) == training::serialize(b.final_checkpoint);
  notes.push_back(std::string("20-step reruns ") + (rerun ? "identical" : "differ"));
  ok = ok && rerun;
  std::string detail;
  for (const auto& n : notes) detail += (detail.empty() ? "" : "; ") + n;
  return {ok, detail};
}

Verdict bidirectional_symmetry(const videodata::DatasetIndex& index) {
  auto tc = cli::train_config(desk_config(0));
  tc.model.bidirectional = true;
  const auto clips = training::load_split(index, videodata::Split::Train, tc.modality, tc.data,
                                          tc.model.backbone.block_len);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    training::Model m(tc.model, 40 + static_cast<std::uint64_t>(trial));
    auto params = m.parameters();
    for (const auto& p : params) {
      if (p.name.rfind("aggregator_backward.", 0) != 0) continue;
      const std::string twin = "aggregator." + p.name.substr(std::string("aggregator_backward.").size());
      for (const auto& q : params)
        if (q.name == twin) p.var->value = q.var->value;
    }
    std::vector<training::WindowRequest> w;
    for (int i = 0; i < tc.batch_size; ++i)
      w.push_back({&clips[static_cast<std::size_t>(trial * tc.batch_size + i) % clips.size()].clip, 0,
                   static_cast<std::uint64_t>(i)});
    const Tensor x = training::make_batch(w, tc.data, tc.model.backbone.block_len, tc.data.augment);
    ag::NoGradGuard guard;
    const auto z = m.encode(ag::constant(x), tc.batch_size, false);
    const std::vector<ag::Var> reversed(z.rbegin(), z.rend());
    const double a = training::pretext_loss(m, z, tc.pred_steps, false).value;
    const double b = training::pretext_loss(m, reversed, tc.pred_steps, false).value;
    worst = std::max(worst, std::abs(a - b));
  }
  return {worst <= 1e-8, "max |L(z) - L(reversed z)| = " + fmt(worst) + " over 5 batches, tied aggregators"};
}

// ------------------------------------------------------ experiment checks

struct SeedRun {
  double train_loss = 0.0;
  double threshold = 0.0;
  double pretrain_seconds = 0.0;
  int steps = 0;
  double lin_pre = 0, lin_rand = 0, nl_pre = 0;
  double r1_pre = 0, r1_rand = 0;
  bool monotone = true, self_one = true;
  std::vector<double> eff_pre, eff_rand;  // per fraction
  double unintentional = 0.0;
};

const std::vector<double> kFractions = {0.1, 0.2, 0.5};

bool monotone(const std::vector<evaluation::RecallAtK>& r) {
  for (std::size_t i = 1; i < r.size(); ++i)
    if (r[i - 1].recall > r[i].recall) return false;
  return true;
}

SeedRun run_seed(int seed, const fs::path& work, const std::set<std::string>& wanted, training::Checkpoint* keep) {
  SeedRun out;
  const auto cfg = desk_config(seed);
  const auto tc = cli::train_config(cfg);
  const auto index = videodata::gen_synthetic(cli::synthetic_spec(cfg), work / ("data_" + std::to_string(seed)));

  auto t0 = std::chrono::steady_clock::now();
  const auto result = training::pretrain(tc, index);
  out.pretrain_seconds = seconds_since(t0);
  out.train_loss = result.final_train_loss;
  out.threshold = 0.8 * result.chance_loss;
  out.steps = tc.max_steps;
  if (keep) *keep = result.final_checkpoint;

  const auto pretrained = training::load_model(result.final_checkpoint);
  const training::Model random(tc.model, derive_seed(static_cast<std::uint64_t>(seed), 0x72616e64));
  const auto train = training::load_split(index, videodata::Split::Train, tc.modality, tc.data,
                                          tc.model.backbone.block_len);
  const auto test = training::load_split(index, videodata::Split::Test, tc.modality, tc.data,
                                         tc.model.backbone.block_len);

  if (wanted.count("representation-quality") || wanted.count("retrieval")) {
    const auto etr_p = evaluation::extract_embeddings(train, pretrained, tc.data);
    const auto ete_p = evaluation::extract_embeddings(test, pretrained, tc.data);
    const auto etr_r = evaluation::extract_embeddings(train, random, tc.data);
    const auto ete_r = evaluation::extract_embeddings(test, random, tc.data);

    auto pc = cli::probe_config(cfg);
    pc.mode = evaluation::ProbeMode::Linear;
    out.lin_pre = evaluation::train_probe(etr_p, ete_p, index.num_classes, pc).test_accuracy;
    out.lin_rand = evaluation::train_probe(etr_r, ete_r, index.num_classes, pc).test_accuracy;
    pc.mode = evaluation::ProbeMode::Nonlinear;
    out.nl_pre = evaluation::train_probe(etr_p, ete_p, index.num_classes, pc).test_accuracy;

    const std::vector<int> ks = {1, 5, 10, 20};
    const auto rp = evaluation::retrieve(ete_p, etr_p, ks), rr = evaluation::retrieve(ete_r, etr_r, ks);
    out.r1_pre = rp[0].recall;
    out.r1_rand = rr[0].recall;
    out.monotone = monotone(rp) && monotone(rr);
    out.self_one = evaluation::retrieve(ete_p, ete_p, {1})[0].recall == 1.0 &&
                   evaluation::retrieve(ete_r, ete_r, {1})[0].recall == 1.0;
  }

  if (wanted.count("data-efficiency")) {
    auto pc = cli::probe_config(cfg);
    pc.mode = evaluation::ProbeMode::Finetune;
    pc.epochs = kSweepEpochs;
    const auto rows = evaluation::data_efficiency_sweep(kFractions, {static_cast<std::uint64_t>(seed)}, pc,
                                                        result.final_checkpoint, train, test, index.num_classes,
                                                        tc.data);
    out.eff_pre.assign(kFractions.size(), 0.0);
    out.eff_rand.assign(kFractions.size(), 0.0);
    for (const auto& r : rows) {
      const auto f = static_cast<std::size_t>(
          std::find(kFractions.begin(), kFractions.end(), r.fraction) - kFractions.begin());
      (r.init == "pretrained" ? out.eff_pre : out.eff_rand)[f] = r.accuracy;
    }
  }

  if (wanted.count("unintentional")) {
    const auto gcfg = desk_config(seed, true);
    const auto gindex =
        videodata::gen_synthetic(cli::synthetic_spec(gcfg), work / ("glitch_" + std::to_string(seed)));
    const auto gtrain = training::load_split(gindex, videodata::Split::Train, tc.modality, tc.data,
                                             tc.model.backbone.block_len);
    const auto gtest = training::load_split(gindex, videodata::Split::Test, tc.modality, tc.data,
                                            tc.model.backbone.block_len);
    auto frozen = training::load_model(result.final_checkpoint);
    out.unintentional =
        evaluation::unintentional_train_eval(frozen, gtrain, gtest, tc.data, cli::unintentional_config(gcfg))
            .accuracy;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> all = {"oracle-equivalence",    "expected-critic-identity", "gradient-suite",
                                        "addressing-invariants", "training-sanity",          "representation-quality",
                                        "data-efficiency",       "retrieval",                "unintentional",
                                        "bit-exact",             "bidirectional-symmetry"};
  std::set<std::string> wanted(argv + 1, argv + argc);
  if (wanted.empty()) wanted.insert(all.begin(), all.end());
  for (const auto& w : wanted) {
    if (std::find(all.begin(), all.end(), w) == all.end()) {
      std::cerr << "unknown criterion " << w << '\n';
      return 2;
    }
  }

  int failures = 0;
  const auto report = [&](const std::string& name, const std::function<Verdict()>& fn) {
    if (!wanted.count(name)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failures;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << " [" << fmt(seconds_since(t0), 3)
              << " s]" << std::endl;
  };

  report("oracle-equivalence", oracle_equivalence);
  report("expected-critic-identity", expected_critic_identity);
  report("gradient-suite", gradient_suite);
  report("addressing-invariants", addressing_invariants);

  testing::TempDir work("memdpc_acceptance");
  const auto small = videodata::gen_synthetic(
      [] {
        auto s = cli::synthetic_spec(desk_config(0));
        s.clips_per_class = 10;
        return s;
      }(),
      work / "small");

  const std::set<std::string> experiments = {"training-sanity", "representation-quality", "data-efficiency",
                                             "retrieval", "unintentional"};
  const bool need_runs = std::any_of(experiments.begin(), experiments.end(),
                                     [&](const auto& e) { return wanted.count(e) > 0; }) ||
                         wanted.count("bit-exact");
  std::vector<SeedRun> runs;
  training::Checkpoint first_ckpt;
  std::string run_error;
  if (need_runs) {
    try {
      const int seeds = std::any_of(experiments.begin(), experiments.end(),
                                    [&](const auto& e) { return wanted.count(e) > 0; })
                            ? kSeeds
                            : 1;
      for (int s = 0; s < seeds; ++s) {
        runs.push_back(run_seed(s, work.path(), wanted, s == 0 ? &first_ckpt : nullptr));
        const auto& r = runs.back();
        std::cout << "  seed " << s << ": loss " << fmt(r.train_loss) << " (threshold " << fmt(r.threshold)
                  << "), linear " << fmt(r.lin_pre) << " vs " << fmt(r.lin_rand) << ", nonlinear " << fmt(r.nl_pre)
                  << ", R@1 " << fmt(r.r1_pre) << " vs " << fmt(r.r1_rand) << ", unintentional "
                  << fmt(r.unintentional) << ", pretrain " << fmt(r.pretrain_seconds, 3) << " s" << std::endl;
      }
    } catch (const std::exception& e) {
      run_error = e.what();
    }
  }
  const auto guarded = [&](const std::function<Verdict()>& fn) {
    return [&, fn]() -> Verdict {
      if (!run_error.empty()) return {false, "pretraining failed: " + run_error};
      return fn();
    };
  };

  report("training-sanity", guarded([&] {
           bool ok = true;
           std::string d;
           for (std::size_t s = 0; s < runs.size(); ++s) {
             ok = ok && runs[s].train_loss < runs[s].threshold && runs[s].pretrain_seconds < 1800.0;
             d += (s ? "; " : "") + std::string("seed ") + std::to_string(s) + " loss " + fmt(runs[s].train_loss) +
                  " < " + fmt(runs[s].threshold) + " after " + std::to_string(runs[s].steps) + " steps in " +
                  fmt(runs[s].pretrain_seconds, 3) + " s";
           }
           return Verdict{ok, d};
         }));

  report("representation-quality", guarded([&] {
           std::vector<double> lp, lr, nl;
           for (const auto& r : runs) {
             lp.push_back(r.lin_pre);
             lr.push_back(r.lin_rand);
             nl.push_back(r.nl_pre);
           }
           const double gap = mean(lp) - mean(lr);
           return Verdict{gap >= 0.15 && mean(nl) >= mean(lp) - 0.02,
                          "linear pretrained " + fmt(mean(lp)) + " vs random " + fmt(mean(lr)) + " (gap " +
                              fmt(100 * gap, 3) + " points, need 15); nonlinear " + fmt(mean(nl)) +
                              " (need >= linear - 0.02)"};
         }));

  report("data-efficiency", guarded([&] {
           bool ok = true;
           std::string d;
           for (std::size_t f = 0; f < kFractions.size(); ++f) {
             std::vector<double> p, r;
             for (const auto& run : runs) {
               p.push_back(run.eff_pre[f]);
               r.push_back(run.eff_rand[f]);
             }
             ok = ok && mean(p) >= mean(r);
             d += (f ? "; " : "") + std::string("fraction ") + fmt(kFractions[f]) + ": pretrained " + fmt(mean(p)) +
                  " vs random " + fmt(mean(r));
           }
           return Verdict{ok, d};
         }));

  report("retrieval", guarded([&] {
           std::vector<double> p, r;
           bool mono = true, self = true;
           for (const auto& run : runs) {
             p.push_back(run.r1_pre);
             r.push_back(run.r1_rand);
             mono = mono && run.monotone;
             self = self && run.self_one;
           }
           const double gap = mean(p) - mean(r);
           return Verdict{mono && self && gap >= 0.10,
                          std::string("R@k monotone ") + (mono ? "yes" : "no") + ", self R@1 = 1 " +
                              (self ? "yes" : "no") + ", R@1 pretrained " + fmt(mean(p)) + " vs random " +
                              fmt(mean(r)) + " (gap " + fmt(100 * gap, 3) + " points, need 10)"};
         }));

  report("unintentional", guarded([&] {
           std::vector<double> a;
           for (const auto& run : runs) a.push_back(run.unintentional);
           return Verdict{mean(a) >= 0.45, "3-class accuracy " + fmt(mean(a)) + " (need 0.45, chance 0.333)"};
         }));

  report("bit-exact", guarded([&] { return bit_exact(first_ckpt, small); }));
  report("bidirectional-symmetry", [&] { return bidirectional_symmetry(small); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}

#include "memdpc/training/pretrain.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "memdpc/core/error.hpp"
#include "memdpc/loss/contrastive.hpp"

namespace memdpc::training {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kDataStream = 0x64617461ULL;

std::int64_t now_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void append_metric(const fs::path& csv, const MetricRow& row) {
  const bool fresh = !fs::exists(csv);
  std::ofstream out(csv, std::ios::app);
  if (!out) fail(ErrorKind::IoError, "cannot append to " + csv.string());
  if (fresh) out << "step,split,loss,top1,lr,wall_ms\n";
  out << row.step << ',' << row.split << ',' << fmt(row.loss) << ',' << fmt(row.top1) << ','
      << fmt(row.lr) << ',' << row.wall_ms << '\n';
}

std::vector<MetricRow> read_metrics(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) fail(ErrorKind::IoError, "cannot read " + csv.string());
  std::string line;
  std::getline(in, line);
  std::vector<MetricRow> rows;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string f[6];
    for (auto& x : f) std::getline(ls, x, ',');
    rows.push_back({std::stoll(f[0]), f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[4]),
                    std::stoll(f[5])});
  }
  return rows;
}

namespace {
const TrainConfig& checked(const TrainConfig& c) {
  c.validate();
  return c;
}
}  // namespace

Pretrainer::Pretrainer(const TrainConfig& config, const videodata::DatasetIndex& data,
                       fs::path run_dir)
    : config_(checked(config)),
      run_dir_(std::move(run_dir)),
      train_(load_split(data, videodata::Split::Train, config_.modality, config_.data,
                        config_.model.backbone.block_len)),
      model_(config_.model, config_.seed),
      params_(model_.parameters()),
      adam_(params_, AdamOptions{0.9, 0.999, 1e-8, config_.weight_decay}),
      schedule_(config_.lr, config_.lr_decay_factor, config_.plateau_patience,
                config_.plateau_threshold),
      rng_(derive_seed(config_.seed, kDataStream)) {
  try {
    val_ = load_split(data, videodata::Split::Test, config_.modality, config_.data,
                      config_.model.backbone.block_len);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DataExhausted) throw;
    val_ = train_;
  }
  if (!run_dir_.empty()) {
    fs::create_directories(run_dir_ / "checkpoints");
    if (!fs::exists(run_dir_ / "config.json")) {
      std::ofstream(run_dir_ / "config.json") << config_.to_json().dump(2) << '\n';
    }
  }
  last_wall_ms_ = now_ms();
}

double Pretrainer::chance_loss() const {
  const auto& b = config_.model.backbone;
  const double side = b.feature_size();
  return std::log(static_cast<double>(config_.batch_size) * config_.pred_steps * side * side);
}

std::vector<int> Pretrainer::next_indices() {
  std::vector<int> out;
  while (static_cast<int>(out.size()) < config_.batch_size) {
    if (cursor_ >= order_.size()) {
      order_.resize(train_.size());
      std::iota(order_.begin(), order_.end(), 0);
      std::shuffle(order_.begin(), order_.end(), rng_.engine());
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

void Pretrainer::record(const MetricRow& row) {
  history_.push_back(row);
  if (!run_dir_.empty()) append_metric(run_dir_ / "metrics.csv", row);
}

MetricRow Pretrainer::train_step() {
  const int L = config_.model.backbone.block_len;
  const int window = config_.data.window_frames(L);
  std::vector<WindowRequest> windows;
  for (int idx : next_indices()) {
    const auto& clip = train_[static_cast<std::size_t>(idx)].clip;
    WindowRequest w{&clip, 0, 0};
    if (clip.frames > window) w.start = static_cast<int>(rng_.integer(0, clip.frames - window));
    w.seed = rng_.engine()();
    windows.push_back(w);
  }
  const Tensor x = make_batch(windows, config_.data, L, config_.data.augment);

  zero_grads(params_);
  PretextLoss res;
  try {
    res = pretext_loss(model_, x, config_.batch_size, config_.pred_steps, config_.normalized_critic,
                       true);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NonFiniteInput || e.kind() == ErrorKind::NonFiniteLogits ||
        e.kind() == ErrorKind::DivergedTraining) {
      std::string where;
      if (!run_dir_.empty()) where = "; last good checkpoint is under " + (run_dir_ / "checkpoints").string();
      fail(ErrorKind::DivergedTraining,
           "training diverged at step " + std::to_string(step_ + 1) + ": " + e.what() + where);
    }
    throw;
  }
  ag::backward(res.loss);
  adam_.step(schedule_.lr());
  ++step_;

  const std::int64_t t = now_ms();
  MetricRow row{step_, "train", res.value, res.top1, schedule_.lr(),
                config_.deterministic ? 0 : t - last_wall_ms_};
  last_wall_ms_ = t;
  record(row);
  return row;
}

MetricRow Pretrainer::validate() {
  const int L = config_.model.backbone.block_len;
  const int window = config_.data.window_frames(L);
  const auto policy = config_.data.augment.eval_view();
  ag::NoGradGuard guard;
  double loss_sum = 0.0, top1_sum = 0.0;
  std::size_t next = 0;
  for (int b = 0; b < config_.val_batches; ++b) {
    std::vector<WindowRequest> windows;
    for (int i = 0; i < config_.batch_size; ++i) {
      const auto& clip = val_[next++ % val_.size()].clip;
      windows.push_back({&clip, std::max(0, (clip.frames - window) / 2), 0});
    }
    const Tensor x = make_batch(windows, config_.data, L, policy);
    auto res = pretext_loss(model_, x, config_.batch_size, config_.pred_steps,
                            config_.normalized_critic, false);
    loss_sum += res.value;
    top1_sum += res.top1;
  }
  const double loss = loss_sum / config_.val_batches;
  const bool best = schedule_.observe(loss);
  const std::int64_t t = now_ms();
  MetricRow row{step_, "val", loss, top1_sum / config_.val_batches, schedule_.lr(),
                config_.deterministic ? 0 : t - last_wall_ms_};
  last_wall_ms_ = t;
  record(row);
  if (best) save("best.ckpt");
  return row;
}

void Pretrainer::save(const std::string& name) const {
  if (run_dir_.empty()) return;
  save_checkpoint(checkpoint(), run_dir_ / "checkpoints" / name);
}

void Pretrainer::run() {
  while (step_ < config_.max_steps) {
    train_step();
    if (step_ % config_.val_every == 0) validate();
    if (step_ % config_.checkpoint_every == 0) {
      std::ostringstream name;
      name << "step_" << std::setw(6) << std::setfill('0') << step_ << ".ckpt";
      save(name.str());
    }
  }
  save("final.ckpt");
}

Checkpoint Pretrainer::checkpoint() const {
  Checkpoint c;
  store_state(c, params_, model_.buffers());
  adam_.export_state(c.arrays);
  c.manifest["format"] = "memdpc-checkpoint";
  c.manifest["config"] = config_.to_json();
  c.manifest["model"] = config_.model.to_json();
  c.manifest["step"] = step_;
  c.manifest["best_val_loss"] = schedule_.has_best() ? json(schedule_.best()) : json(nullptr);
  c.manifest["rng_state"] = rng_.state();
  c.manifest["metadata"] = {{"schedule", schedule_.state()},
                            {"adam_steps", adam_.steps()},
                            {"data_order", order_},
                            {"data_cursor", cursor_},
                            {"modality", videodata::to_string(config_.modality)}};
  return c;
}

void Pretrainer::resume(const Checkpoint& ckpt) {
  const ModelSpec stored = checkpoint_model_spec(ckpt);
  if (!(stored == config_.model)) {
    fail(ErrorKind::ConfigMismatch, "checkpoint architecture differs from the training config");
  }
  auto arrays = ckpt.arrays;
  try {
    const auto& meta = ckpt.manifest.at("metadata");
    take_state(arrays, params_, model_.buffers());
    adam_.import_state(arrays, meta.at("adam_steps").get<std::int64_t>());
    require_consumed(arrays);
    schedule_.set_state(meta.at("schedule"));
    order_ = meta.at("data_order").get<std::vector<int>>();
    cursor_ = meta.at("data_cursor").get<std::size_t>();
    step_ = ckpt.manifest.at("step").get<std::int64_t>();
    rng_.set_state(ckpt.manifest.at("rng_state").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorKind::CorruptArchive, std::string("incomplete training manifest: ") + e.what());
  }
  for (int i : order_) {
    if (i < 0 || static_cast<std::size_t>(i) >= train_.size()) {
      fail(ErrorKind::ConfigMismatch, "checkpoint sampler state does not match the dataset");
    }
  }
}

PretrainResult pretrain(const TrainConfig& config, const videodata::DatasetIndex& data,
                        const fs::path& run_dir) {
  Pretrainer trainer(config, data, run_dir);
  trainer.run();
  PretrainResult out;
  out.final_checkpoint = trainer.checkpoint();
  out.metrics = trainer.history();
  out.chance_loss = trainer.chance_loss();
  std::vector<double> train_losses;
  for (const auto& r : out.metrics)
    if (r.split == "train") train_losses.push_back(r.loss);
  const std::size_t n = std::min<std::size_t>(50, train_losses.size());
  if (n > 0) {
    out.final_train_loss =
        std::accumulate(train_losses.end() - static_cast<std::ptrdiff_t>(n), train_losses.end(), 0.0) / n;
  }
  return out;
}

}  // namespace memdpc::training

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "memdpc/training/batching.hpp"
#include "memdpc/training/checkpoint.hpp"
#include "memdpc/training/config.hpp"
#include "memdpc/training/model.hpp"
#include "memdpc/training/optimizer.hpp"
#include "memdpc/videodata/dataset_index.hpp"

namespace memdpc::training {

/// One row of metrics.csv.
struct MetricRow {
  std::int64_t step = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double top1 = 0.0;
  double lr = 0.0;
  std::int64_t wall_ms = 0;
};

void append_metric(const std::filesystem::path& csv, const MetricRow& row);
std::vector<MetricRow> read_metrics(const std::filesystem::path& csv);

/// Self-supervised pretraining state machine. With a run directory it
/// writes config.json (if absent), metrics.csv and checkpoints/.
class Pretrainer {
 public:
  Pretrainer(const TrainConfig& config, const videodata::DatasetIndex& data,
             std::filesystem::path run_dir = {});

  const TrainConfig& config() const { return config_; }
  Model& model() { return model_; }
  std::int64_t step() const { return step_; }
  double lr() const { return schedule_.lr(); }
  const std::vector<MetricRow>& history() const { return history_; }
  /// ln of the number of candidates per anchor: the equal-score loss.
  double chance_loss() const;

  MetricRow train_step();
  MetricRow validate();
  /// Trains until config.max_steps, validating and checkpointing on schedule.
  void run();

  Checkpoint checkpoint() const;
  /// Restores parameters, optimizer moments, schedule and sampler state.
  void resume(const Checkpoint& ckpt);

 private:
  std::vector<int> next_indices();
  void record(const MetricRow& row);
  void save(const std::string& name) const;

  TrainConfig config_;
  std::filesystem::path run_dir_;
  std::vector<videodata::LoadedClip> train_;
  std::vector<videodata::LoadedClip> val_;
  Model model_;
  ParamList params_;
  Adam adam_;
  PlateauSchedule schedule_;
  Rng rng_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  std::int64_t step_ = 0;
  std::int64_t last_wall_ms_ = 0;
  std::vector<MetricRow> history_;
};

struct PretrainResult {
  Checkpoint final_checkpoint;
  std::vector<MetricRow> metrics;
  double chance_loss = 0.0;
  /// Mean train loss over the last min(50, steps) steps.
  double final_train_loss = 0.0;
};

/// Runs a full pretraining job; see Pretrainer.
PretrainResult pretrain(const TrainConfig& config, const videodata::DatasetIndex& data,
                        const std::filesystem::path& run_dir = {});

}  // namespace memdpc::training

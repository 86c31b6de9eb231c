#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "memdpc/evaluation/embedding.hpp"
#include "memdpc/training/checkpoint.hpp"

namespace memdpc::evaluation {

enum class ProbeMode { Linear, Nonlinear, Finetune };

std::string to_string(ProbeMode m);
ProbeMode parse_probe_mode(const std::string& s);

struct ProbeConfig {
  ProbeMode mode = ProbeMode::Linear;
  double dropout = 0.9;
  int epochs = 100;
  int batch_size = 16;
  double lr = 1e-3;
  double lr_decay_factor = 0.1;
  std::vector<int> decay_epochs;  // lr is multiplied by the factor at each
  double weight_decay = 0.0;
  double label_fraction = 1.0;
  /// Frozen modes: z-score every feature with train-set statistics.
  bool standardize = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Dropout then affine (linear), or affine, rectifier, dropout, affine
/// (non-linear, hidden width `hidden`).
class ClassifierHead {
 public:
  ClassifierHead(int in, int hidden, int classes, Rng& rng);
  int classes() const { return classes_; }
  ag::Var forward(const ag::Var& x, double dropout, Rng& rng, bool training) const;
  void parameters(const std::string& prefix, ParamList& out) const;

 private:
  int classes_;
  ag::Var hidden_w_, hidden_b_;  // null for a linear head
  ag::Var out_w_, out_b_;
};

struct ProbeResult {
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  int num_train = 0;  // labelled examples actually used
  std::vector<int> test_predictions;
  std::vector<std::vector<double>> test_logits;
};

/// Per class, the first round(fraction * count) (at least one) indices of
/// a seeded shuffle, returned in ascending order.
std::vector<std::size_t> stratified_subset(const std::vector<int>& labels, double fraction,
                                           std::uint64_t seed);

/// Linear or non-linear probe on frozen embeddings. Throws
/// InsufficientClasses when the labelled subset covers fewer than 2 classes.
ProbeResult train_probe(const std::vector<ClipEmbedding>& train,
                        const std::vector<ClipEmbedding>& test, int num_classes,
                        const ProbeConfig& config);

/// End-to-end training of f, g and a linear head on clips. Test logits are
/// averaged over every centre-view window of a clip.
ProbeResult finetune_classifier(training::Model& model,
                                const std::vector<videodata::LoadedClip>& train,
                                const std::vector<videodata::LoadedClip>& test, int num_classes,
                                const training::DataSpec& data, const ProbeConfig& config);

/// Dispatches on config.mode: frozen modes extract embeddings from `model`
/// first; finetune mode updates `model` in place.
ProbeResult train_classifier(training::Model& model, const std::vector<videodata::LoadedClip>& train,
                             const std::vector<videodata::LoadedClip>& test, int num_classes,
                             const training::DataSpec& data, const ProbeConfig& config);

struct EfficiencyRow {
  double fraction = 0.0;
  std::string init;  // "pretrained" or "random"
  std::uint64_t seed = 0;
  double accuracy = 0.0;
};

/// For every seed and fraction, finetunes once from `pretrained` and once
/// from a fresh model with the same architecture.
std::vector<EfficiencyRow> data_efficiency_sweep(const std::vector<double>& fractions,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 const ProbeConfig& config,
                                                 const training::Checkpoint& pretrained,
                                                 const std::vector<videodata::LoadedClip>& train,
                                                 const std::vector<videodata::LoadedClip>& test,
                                                 int num_classes, const training::DataSpec& data);

/// CSV `fraction,init,seed,accuracy`.
void write_efficiency(const std::vector<EfficiencyRow>& rows, const std::filesystem::path& csv);

}  // namespace memdpc::evaluation

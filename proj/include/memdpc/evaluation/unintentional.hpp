#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "memdpc/training/model.hpp"
#include "memdpc/videodata/dataset_index.hpp"

namespace memdpc::evaluation {

enum class IntentLabel { Intentional = 0, Transitioning = 1, Unintentional = 2 };
inline constexpr int kIntentClasses = 3;

std::string to_string(IntentLabel l);

/// Label of a block covering frames [first, last]: transitioning when it
/// contains the failure frame, intentional before it, unintentional after.
IntentLabel block_label(int first, int last, int failure_frame);

/// Frame span [first, last] of block `j` of the window starting at `start`.
std::array<int, 2> block_span(const training::DataSpec& data, int block_len, int start, int j);

/// Draws a class uniformly, then an item of that class uniformly.
class BalancedSampler {
 public:
  BalancedSampler(const std::vector<int>& labels, std::uint64_t seed);
  std::size_t next();

 private:
  std::vector<std::vector<std::size_t>> by_class_;
  Rng rng_;
};

/// Majority vote over {intentional, transitioning, unintentional}; a tie
/// involving transitioning resolves to it, other ties to the lower label.
IntentLabel majority_vote(const std::array<int, kIntentClasses>& votes);

/// Linear xi: concat(pooled z_t, pooled zhat_t) -> 3 logits.
class DiscrepancyClassifier {
 public:
  DiscrepancyClassifier(int channels, Rng& rng);
  int input_dim() const { return input_dim_; }
  ag::Var forward(const ag::Var& x) const;
  void parameters(const std::string& prefix, ParamList& out) const;

 private:
  int input_dim_;
  ag::Var weight_, bias_;
};

/// For an encoder batch of `batch` windows, the [B][2C] discrepancy input
/// of every block t = 1..N-1: pooled z_t next to pooled zhat_t, the one-step
/// prediction from blocks 0..t-1.
std::vector<ag::Var> discrepancy_inputs(const training::Model& model, const ag::Var& blocks, int batch,
                                        bool training);

struct UnintentionalConfig {
  bool finetune = false;
  int steps = 1500;  // balanced minibatches
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 0.0;
  bool standardize = true;  // freeze mode: z-score inputs with train statistics
  std::uint64_t seed = 0;

  void validate() const;
};

struct UnintentionalResult {
  double accuracy = 0.0;           // over every voted test block
  double balanced_accuracy = 0.0;  // mean per-class recall over present classes
  std::array<std::array<int, kIntentClasses>, kIntentClasses> confusion{};  // [truth][pred]
  int num_test_blocks = 0;
};

/// Trains xi (freeze) or everything (finetune) on per-block samples of
/// windows hopping one block, oversampling by class, then labels each test
/// block by majority vote over the windows that predict it. Throws
/// MissingTimestamp for clips without a failure frame.
UnintentionalResult unintentional_train_eval(training::Model& model,
                                             const std::vector<videodata::LoadedClip>& train,
                                             const std::vector<videodata::LoadedClip>& test,
                                             const training::DataSpec& data,
                                             const UnintentionalConfig& config);

}  // namespace memdpc::evaluation

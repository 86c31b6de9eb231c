#include "memdpc/evaluation/unintentional.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "memdpc/core/error.hpp"
#include "memdpc/core/ops.hpp"
#include "memdpc/evaluation/embedding.hpp"
#include "memdpc/training/batching.hpp"
#include "memdpc/training/optimizer.hpp"

namespace memdpc::evaluation {

std::string to_string(IntentLabel l) {
  switch (l) {
    case IntentLabel::Intentional: return "intentional";
    case IntentLabel::Transitioning: return "transitioning";
    case IntentLabel::Unintentional: return "unintentional";
  }
  return "intentional";
}

IntentLabel block_label(int first, int last, int failure_frame) {
  if (last < failure_frame) return IntentLabel::Intentional;
  if (first > failure_frame) return IntentLabel::Unintentional;
  return IntentLabel::Transitioning;
}

std::array<int, 2> block_span(const training::DataSpec& data, int block_len, int start, int j) {
  const int span = block_len * data.sampling_stride;
  return {start + j * span, start + (j + 1) * span - 1};
}

BalancedSampler::BalancedSampler(const std::vector<int>& labels, std::uint64_t seed)
    : rng_(derive_seed(seed, 0x62616c616e6365ULL)) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) groups[labels[i]].push_back(i);
  for (auto& [label, idx] : groups) by_class_.push_back(std::move(idx));
  if (by_class_.empty()) fail(ErrorKind::DataExhausted, "balanced sampler has no items");
}

std::size_t BalancedSampler::next() {
  const auto& group = by_class_[static_cast<std::size_t>(rng_.integer(0, static_cast<std::int64_t>(by_class_.size()) - 1))];
  return group[static_cast<std::size_t>(rng_.integer(0, static_cast<std::int64_t>(group.size()) - 1))];
}

IntentLabel majority_vote(const std::array<int, kIntentClasses>& votes) {
  const int best = *std::max_element(votes.begin(), votes.end());
  if (votes[1] == best) return IntentLabel::Transitioning;
  return votes[0] == best ? IntentLabel::Intentional : IntentLabel::Unintentional;
}

DiscrepancyClassifier::DiscrepancyClassifier(int channels, Rng& rng) : input_dim_(2 * channels) {
  weight_ = ag::parameter(rng.normal_tensor({kIntentClasses, input_dim_}, std::sqrt(1.0 / input_dim_)));
  bias_ = ag::parameter(Tensor({kIntentClasses}, 0.0));
}

ag::Var DiscrepancyClassifier::forward(const ag::Var& x) const {
  if (x->shape().size() != 2 || x->shape()[1] != input_dim_) {
    fail(ErrorKind::DimensionMismatch, "discrepancy classifier expects [B][" + std::to_string(input_dim_) +
                                           "], got " + shape_str(x->shape()));
  }
  return ag::pointwise(x, weight_, bias_);
}

void DiscrepancyClassifier::parameters(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + "weight", weight_});
  out.push_back({prefix + "bias", bias_});
}

namespace {

ag::Var pool(const ag::Var& f) {
  const Shape s = f->shape();
  return ag::mean_axis(ag::reshape(f, {s[0], s[1], s[2] * s[3]}), 2);
}

// One training or test item: a block t of a window.
struct Item {
  std::size_t clip;
  int start;
  int t;
  int label;
};

std::vector<Item> items_for(const std::vector<videodata::LoadedClip>& clips, const training::DataSpec& data,
                            int L) {
  const int hop = L * data.sampling_stride;
  std::vector<Item> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto& e = clips[i].entry;
    if (!e.failure_frame) {
      fail(ErrorKind::MissingTimestamp, "clip " + e.clip_path + " has no failure frame");
    }
    for (int s : window_starts(clips[i].clip.frames, data, L, hop))
      for (int t = 1; t < data.num_blocks; ++t) {
        const auto span = block_span(data, L, s, t);
        out.push_back({i, s, t, static_cast<int>(block_label(span[0], span[1], *e.failure_frame))});
      }
  }
  return out;
}

// Discrepancy inputs of a set of windows, eval mode: rows[window][t-1] = 2C vector.
std::vector<std::vector<std::vector<double>>> frozen_inputs(const training::Model& model,
                                                            const std::vector<training::WindowRequest>& windows,
                                                            const training::DataSpec& data) {
  constexpr std::size_t kChunk = 8;
  const int L = model.spec().backbone.block_len;
  const auto policy = data.augment.eval_view();
  ag::NoGradGuard guard;
  std::vector<std::vector<std::vector<double>>> out;
  for (std::size_t w0 = 0; w0 < windows.size(); w0 += kChunk) {
    const std::size_t w1 = std::min(windows.size(), w0 + kChunk);
    const std::vector<training::WindowRequest> chunk(windows.begin() + static_cast<std::ptrdiff_t>(w0),
                                                     windows.begin() + static_cast<std::ptrdiff_t>(w1));
    const Tensor x = training::make_batch(chunk, data, L, policy);
    const auto per_t = discrepancy_inputs(model, ag::constant(x), static_cast<int>(chunk.size()), false);
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      std::vector<std::vector<double>> rows;
      for (const auto& v : per_t) {
        const std::int64_t D = v->shape()[1];
        rows.emplace_back(v->value.ptr() + static_cast<std::int64_t>(b) * D,
                          v->value.ptr() + static_cast<std::int64_t>(b + 1) * D);
      }
      out.push_back(std::move(rows));
    }
  }
  return out;
}

struct Standardizer {
  std::vector<double> mean, inv_std;
  void fit(const std::vector<const std::vector<double>*>& rows) {
    const std::size_t D = rows.front()->size();
    mean.assign(D, 0.0);
    inv_std.assign(D, 1.0);
    for (const auto* r : rows)
      for (std::size_t d = 0; d < D; ++d) mean[d] += (*r)[d] / static_cast<double>(rows.size());
    for (std::size_t d = 0; d < D; ++d) {
      double v = 0;
      for (const auto* r : rows) v += ((*r)[d] - mean[d]) * ((*r)[d] - mean[d]);
      const double sd = std::sqrt(v / static_cast<double>(rows.size()));
      inv_std[d] = sd > 1e-12 ? 1.0 / sd : 1.0;
    }
  }
  void apply(std::vector<double>& r) const {
    if (mean.empty()) return;
    for (std::size_t d = 0; d < r.size(); ++d) r[d] = (r[d] - mean[d]) * inv_std[d];
  }
};

Tensor stack(const std::vector<std::vector<double>>& rows) {
  const std::int64_t D = static_cast<std::int64_t>(rows.front().size());
  Tensor t({static_cast<std::int64_t>(rows.size()), D});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), t.ptr() + static_cast<std::int64_t>(i) * D);
  return t;
}

}  // namespace

std::vector<ag::Var> discrepancy_inputs(const training::Model& model, const ag::Var& blocks, int batch,
                                        bool training) {
  const auto z = model.encode(blocks, batch, training);
  if (z.size() < 2) fail(ErrorKind::TooFewBlocks, "discrepancy needs at least 2 blocks");
  const auto pm = model.forward_model();
  std::vector<ag::Var> out;
  ag::Var hidden = pm.aggregator.run({z[0]});
  for (std::size_t t = 1; t < z.size(); ++t) {
    const ag::Var zhat = memory::expect_future(memory::address(hidden, pm.phi, pm.temperature), pm.bank);
    out.push_back(ag::concat({pool(z[t]), pool(zhat)}, 1));
    if (t + 1 < z.size()) hidden = pm.aggregator.step(z[t], hidden);
  }
  return out;
}

void UnintentionalConfig::validate() const {
  if (steps < 1 || batch_size < 1) fail(ErrorKind::ConfigError, "steps and batch_size must be >= 1");
  if (!(lr >= 0)) fail(ErrorKind::ConfigError, "lr must be >= 0");
}

UnintentionalResult unintentional_train_eval(training::Model& model,
                                             const std::vector<videodata::LoadedClip>& train,
                                             const std::vector<videodata::LoadedClip>& test,
                                             const training::DataSpec& data,
                                             const UnintentionalConfig& config) {
  config.validate();
  const int L = model.spec().backbone.block_len;
  const auto train_items = items_for(train, data, L);
  const auto test_items = items_for(test, data, L);
  if (train_items.empty()) fail(ErrorKind::DataExhausted, "no training windows");

  Rng rng(derive_seed(config.seed, 0x6f6f7073ULL));
  DiscrepancyClassifier xi(model.channels(), rng);
  ParamList params;
  if (config.finetune) params = model.parameters();
  xi.parameters("xi.", params);
  training::Adam adam(params, {0.9, 0.999, 1e-8, config.weight_decay});

  std::vector<int> labels;
  for (const auto& it : train_items) labels.push_back(it.label);
  BalancedSampler sampler(labels, config.seed);
  Standardizer standardizer;

  if (!config.finetune) {
    // Windows are shared by the N-1 items they contain.
    std::vector<training::WindowRequest> windows;
    std::vector<std::size_t> window_of;
    std::map<std::pair<std::size_t, int>, std::size_t> seen;
    for (const auto& it : train_items) {
      auto [pos, fresh] = seen.try_emplace({it.clip, it.start}, windows.size());
      if (fresh) windows.push_back({&train[it.clip].clip, it.start, 0});
      window_of.push_back(pos->second);
    }
    const auto inputs = frozen_inputs(model, windows, data);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < train_items.size(); ++i)
      rows.push_back(inputs[window_of[i]][static_cast<std::size_t>(train_items[i].t - 1)]);
    if (config.standardize) {
      std::vector<const std::vector<double>*> ptrs;
      for (const auto& r : rows) ptrs.push_back(&r);
      standardizer.fit(ptrs);
      for (auto& r : rows) standardizer.apply(r);
    }
    for (int step = 0; step < config.steps; ++step) {
      std::vector<std::vector<double>> batch;
      std::vector<int> y;
      for (int b = 0; b < config.batch_size; ++b) {
        const std::size_t i = sampler.next();
        batch.push_back(rows[i]);
        y.push_back(labels[i]);
      }
      zero_grads(params);
      ag::backward(ag::cross_entropy(xi.forward(ag::constant(stack(batch))), y));
      adam.step(config.lr);
    }
  } else {
    for (int step = 0; step < config.steps; ++step) {
      std::vector<training::WindowRequest> windows;
      std::vector<std::pair<int, int>> picks;  // (window, t)
      std::vector<int> y;
      for (int b = 0; b < config.batch_size; ++b) {
        const auto& it = train_items[sampler.next()];
        windows.push_back({&train[it.clip].clip, it.start, rng.engine()()});
        picks.emplace_back(b, it.t);
        y.push_back(it.label);
      }
      const Tensor x = training::make_batch(windows, data, L, data.augment);
      zero_grads(params);
      const auto per_t = discrepancy_inputs(model, ag::constant(x), static_cast<int>(windows.size()), true);
      std::vector<ag::Var> rows;
      for (const auto& [w, t] : picks) rows.push_back(ag::index_select(per_t[static_cast<std::size_t>(t - 1)], 0, {w}));
      auto loss = ag::cross_entropy(xi.forward(ag::concat(rows, 0)), y);
      if (!std::isfinite(loss->value.item())) fail(ErrorKind::DivergedTraining, "finetuning diverged");
      ag::backward(loss);
      adam.step(config.lr);
    }
  }

  // Test: every window hopping one block votes for the blocks it predicts.
  const int hop = L * data.sampling_stride;
  UnintentionalResult result;
  ag::NoGradGuard guard;
  for (std::size_t c = 0; c < test.size(); ++c) {
    std::vector<training::WindowRequest> windows;
    for (int s : window_starts(test[c].clip.frames, data, L, hop)) windows.push_back({&test[c].clip, s, 0});
    const auto inputs = frozen_inputs(model, windows, data);
    std::map<int, std::array<int, kIntentClasses>> votes;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      std::vector<std::vector<double>> rows = inputs[w];
      for (auto& r : rows) standardizer.apply(r);
      const Tensor logits = xi.forward(ag::constant(stack(rows)))->value;
      for (std::size_t t = 1; t <= rows.size(); ++t) {
        const double* row = logits.ptr() + static_cast<std::int64_t>(t - 1) * kIntentClasses;
        const int pred = static_cast<int>(std::max_element(row, row + kIntentClasses) - row);
        const int block = windows[w].start / hop + static_cast<int>(t);
        votes[block][static_cast<std::size_t>(pred)] += 1;
      }
    }
    for (const auto& [block, v] : votes) {
      const auto span = block_span(data, L, 0, block);
      const int truth = static_cast<int>(block_label(span[0], span[1], *test[c].entry.failure_frame));
      const int pred = static_cast<int>(majority_vote(v));
      result.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)] += 1;
      ++result.num_test_blocks;
    }
  }
  int correct = 0, present = 0;
  double recall_sum = 0;
  for (int k = 0; k < kIntentClasses; ++k) {
    int row_total = 0;
    for (int p = 0; p < kIntentClasses; ++p) row_total += result.confusion[k][p];
    correct += result.confusion[k][k];
    if (row_total > 0) {
      ++present;
      recall_sum += static_cast<double>(result.confusion[k][k]) / row_total;
    }
  }
  if (result.num_test_blocks > 0) result.accuracy = static_cast<double>(correct) / result.num_test_blocks;
  if (present > 0) result.balanced_accuracy = recall_sum / present;
  return result;
}

}  // namespace memdpc::evaluation

#include "memdpc/evaluation/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "memdpc/core/error.hpp"
#include "memdpc/core/ops.hpp"
#include "memdpc/training/batching.hpp"
#include "memdpc/training/optimizer.hpp"

namespace memdpc::evaluation {

std::string to_string(ProbeMode m) {
  switch (m) {
    case ProbeMode::Linear: return "linear";
    case ProbeMode::Nonlinear: return "nonlinear";
    case ProbeMode::Finetune: return "finetune";
  }
  return "linear";
}

ProbeMode parse_probe_mode(const std::string& s) {
  if (s == "linear") return ProbeMode::Linear;
  if (s == "nonlinear") return ProbeMode::Nonlinear;
  if (s == "finetune") return ProbeMode::Finetune;
  fail(ErrorKind::ConfigError, "unknown probe mode '" + s + "' (linear, nonlinear, finetune)");
}

void ProbeConfig::validate() const {
  if (!(dropout >= 0 && dropout < 1)) fail(ErrorKind::ConfigError, "dropout must be in [0, 1)");
  if (epochs < 1 || batch_size < 1) fail(ErrorKind::ConfigError, "epochs and batch_size must be >= 1");
  if (!(lr >= 0) || !(label_fraction > 0 && label_fraction <= 1)) {
    fail(ErrorKind::ConfigError, "lr must be >= 0 and label_fraction in (0, 1]");
  }
}

ClassifierHead::ClassifierHead(int in, int hidden, int classes, Rng& rng) : classes_(classes) {
  int width = in;
  if (hidden > 0) {
    hidden_w_ = ag::parameter(rng.normal_tensor({hidden, in}, std::sqrt(2.0 / in)));
    hidden_b_ = ag::parameter(Tensor({hidden}, 0.0));
    width = hidden;
  }
  out_w_ = ag::parameter(rng.normal_tensor({classes, width}, std::sqrt(1.0 / width)));
  out_b_ = ag::parameter(Tensor({classes}, 0.0));
}

ag::Var ClassifierHead::forward(const ag::Var& x, double dropout, Rng& rng, bool training) const {
  ag::Var h = x;
  if (hidden_w_) h = ag::relu(ag::pointwise(h, hidden_w_, hidden_b_));
  h = ag::dropout(h, dropout, rng, training);
  return ag::pointwise(h, out_w_, out_b_);
}

void ClassifierHead::parameters(const std::string& prefix, ParamList& out) const {
  if (hidden_w_) {
    out.push_back({prefix + "hidden.weight", hidden_w_});
    out.push_back({prefix + "hidden.bias", hidden_b_});
  }
  out.push_back({prefix + "out.weight", out_w_});
  out.push_back({prefix + "out.bias", out_b_});
}

std::vector<std::size_t> stratified_subset(const std::vector<int>& labels, double fraction,
                                           std::uint64_t seed) {
  if (!(fraction > 0 && fraction <= 1)) fail(ErrorKind::ConfigError, "label fraction must be in (0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Rng rng(derive_seed(seed, 0x7375627365ULL));
  std::vector<std::size_t> out;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size()))));
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(std::min(keep, idx.size())));
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

void require_classes(const std::vector<int>& labels, int num_classes) {
  std::set<int> seen;
  for (int l : labels) {
    if (l < 0 || l >= num_classes) fail(ErrorKind::InvalidIndex, "label " + std::to_string(l) + " out of range");
    seen.insert(l);
  }
  if (seen.size() < 2) {
    fail(ErrorKind::InsufficientClasses,
         "classifier needs at least 2 classes, training labels cover " + std::to_string(seen.size()));
  }
}

int argmax(const double* v, int n) {
  return static_cast<int>(std::max_element(v, v + n) - v);
}

double lr_at(const ProbeConfig& c, int epoch) {
  double lr = c.lr;
  for (int e : c.decay_epochs)
    if (epoch >= e) lr *= c.lr_decay_factor;
  return lr;
}

Tensor stack(const std::vector<const std::vector<double>*>& rows) {
  const std::int64_t C = static_cast<std::int64_t>(rows.front()->size());
  Tensor t({static_cast<std::int64_t>(rows.size()), C});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i]->begin(), rows[i]->end(), t.ptr() + i * C);
  return t;
}

}  // namespace

ProbeResult train_probe(const std::vector<ClipEmbedding>& train, const std::vector<ClipEmbedding>& test,
                        int num_classes, const ProbeConfig& config) {
  config.validate();
  if (config.mode == ProbeMode::Finetune) fail(ErrorKind::ConfigError, "train_probe is for frozen modes");
  if (train.empty()) fail(ErrorKind::DataExhausted, "no training embeddings");
  std::vector<int> all_labels;
  for (const auto& e : train) all_labels.push_back(e.label);
  const auto subset = stratified_subset(all_labels, config.label_fraction, config.seed);
  std::vector<int> labels;
  for (auto i : subset) labels.push_back(train[i].label);
  require_classes(labels, num_classes);

  const std::size_t C = train.front().vector.size();
  std::vector<double> mean(C, 0.0), stdev(C, 1.0);
  if (config.standardize) {
    for (auto i : subset)
      for (std::size_t c = 0; c < C; ++c) mean[c] += train[i].vector[c] / subset.size();
    for (std::size_t c = 0; c < C; ++c) {
      double v = 0;
      for (auto i : subset) v += std::pow(train[i].vector[c] - mean[c], 2) / subset.size();
      stdev[c] = std::sqrt(v) > 1e-12 ? std::sqrt(v) : 1.0;
    }
  }
  auto normalise = [&](const std::vector<double>& v) {
    if (v.size() != C) fail(ErrorKind::DimensionMismatch, "embedding widths differ");
    std::vector<double> out(C);
    for (std::size_t c = 0; c < C; ++c) out[c] = (v[c] - mean[c]) / stdev[c];
    return out;
  };
  std::vector<std::vector<double>> xs, xt;
  for (auto i : subset) xs.push_back(normalise(train[i].vector));
  for (const auto& e : test) xt.push_back(normalise(e.vector));

  Rng rng(derive_seed(config.seed, 0x70726f6265ULL));
  const int hidden = config.mode == ProbeMode::Nonlinear ? static_cast<int>(C) : 0;
  ClassifierHead head(static_cast<int>(C), hidden, num_classes, rng);
  ParamList params;
  head.parameters("classifier.", params);
  training::Adam adam(params, {0.9, 0.999, 1e-8, config.weight_decay});

  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(config.batch_size));
      std::vector<const std::vector<double>*> rows;
      std::vector<int> y;
      for (std::size_t j = b0; j < b1; ++j) {
        rows.push_back(&xs[order[j]]);
        y.push_back(labels[order[j]]);
      }
      zero_grads(params);
      auto loss = ag::cross_entropy(head.forward(ag::constant(stack(rows)), config.dropout, rng, true), y);
      ag::backward(loss);
      adam.step(lr_at(config, epoch));
    }
  }

  ProbeResult r;
  r.num_train = static_cast<int>(subset.size());
  ag::NoGradGuard guard;
  auto accuracy = [&](const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                      std::vector<int>* preds, std::vector<std::vector<double>>* logits) {
    if (x.empty()) return 0.0;
    std::vector<const std::vector<double>*> rows;
    for (const auto& v : x) rows.push_back(&v);
    const Tensor out = head.forward(ag::constant(stack(rows)), 0.0, rng, false)->value;
    int correct = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double* row = out.ptr() + i * num_classes;
      const int p = argmax(row, num_classes);
      correct += p == y[i];
      if (preds) preds->push_back(p);
      if (logits) logits->emplace_back(row, row + num_classes);
    }
    return static_cast<double>(correct) / static_cast<double>(x.size());
  };
  std::vector<int> test_labels;
  for (const auto& e : test) test_labels.push_back(e.label);
  r.train_accuracy = accuracy(xs, labels, nullptr, nullptr);
  r.test_accuracy = accuracy(xt, test_labels, &r.test_predictions, &r.test_logits);
  return r;
}

ProbeResult finetune_classifier(training::Model& model, const std::vector<videodata::LoadedClip>& train,
                                const std::vector<videodata::LoadedClip>& test, int num_classes,
                                const training::DataSpec& data, const ProbeConfig& config) {
  config.validate();
  if (train.empty()) fail(ErrorKind::DataExhausted, "no training clips");
  std::vector<int> all_labels;
  for (const auto& c : train) all_labels.push_back(c.entry.label);
  const auto subset = stratified_subset(all_labels, config.label_fraction, config.seed);
  std::vector<int> labels;
  for (auto i : subset) labels.push_back(train[i].entry.label);
  require_classes(labels, num_classes);

  const int L = model.spec().backbone.block_len;
  const int window = data.window_frames(L);
  Rng rng(derive_seed(config.seed, 0x66696e65ULL));
  ClassifierHead head(model.channels(), 0, num_classes, rng);
  ParamList params;
  model.encoder.parameters("encoder.", params);
  model.aggregator.parameters("aggregator.", params);
  head.parameters("classifier.", params);
  training::Adam adam(params, {0.9, 0.999, 1e-8, config.weight_decay});

  std::vector<std::size_t> order(subset.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(config.batch_size));
      std::vector<training::WindowRequest> windows;
      std::vector<int> y;
      for (std::size_t j = b0; j < b1; ++j) {
        const auto& clip = train[subset[order[j]]].clip;
        training::WindowRequest w{&clip, 0, 0};
        if (clip.frames > window) w.start = static_cast<int>(rng.integer(0, clip.frames - window));
        w.seed = rng.engine()();
        windows.push_back(w);
        y.push_back(labels[order[j]]);
      }
      const Tensor x = training::make_batch(windows, data, L, data.augment);
      zero_grads(params);
      auto feats = pooled_context(model, ag::constant(x), static_cast<int>(windows.size()), true);
      auto loss = ag::cross_entropy(head.forward(feats, config.dropout, rng, true), y);
      if (!std::isfinite(loss->value.item())) fail(ErrorKind::DivergedTraining, "finetuning diverged");
      ag::backward(loss);
      adam.step(lr_at(config, epoch));
    }
  }

  ag::NoGradGuard guard;
  const auto policy = data.augment.eval_view();
  auto evaluate = [&](const std::vector<videodata::LoadedClip>& clips, const std::vector<std::size_t>& which,
                      std::vector<int>* preds, std::vector<std::vector<double>>* logits_out) {
    if (which.empty()) return 0.0;
    int correct = 0;
    for (auto i : which) {
      const auto& clip = clips[i];
      std::vector<training::WindowRequest> windows;
      for (int s : window_starts(clip.clip.frames, data, L)) windows.push_back({&clip.clip, s, 0});
      const Tensor x = training::make_batch(windows, data, L, policy);
      const Tensor logits =
          head.forward(pooled_context(model, ag::constant(x), static_cast<int>(windows.size()), false), 0.0,
                       rng, false)->value;
      std::vector<double> mean(static_cast<std::size_t>(num_classes), 0.0);
      for (std::size_t w = 0; w < windows.size(); ++w)
        for (int k = 0; k < num_classes; ++k) mean[k] += logits[w * num_classes + k] / windows.size();
      const int p = argmax(mean.data(), num_classes);
      correct += p == clip.entry.label;
      if (preds) preds->push_back(p);
      if (logits_out) logits_out->push_back(mean);
    }
    return static_cast<double>(correct) / static_cast<double>(which.size());
  };
  ProbeResult r;
  r.num_train = static_cast<int>(subset.size());
  r.train_accuracy = evaluate(train, subset, nullptr, nullptr);
  std::vector<std::size_t> all(test.size());
  std::iota(all.begin(), all.end(), 0);
  r.test_accuracy = evaluate(test, all, &r.test_predictions, &r.test_logits);
  return r;
}

ProbeResult train_classifier(training::Model& model, const std::vector<videodata::LoadedClip>& train,
                             const std::vector<videodata::LoadedClip>& test, int num_classes,
                             const training::DataSpec& data, const ProbeConfig& config) {
  if (config.mode == ProbeMode::Finetune) {
    return finetune_classifier(model, train, test, num_classes, data, config);
  }
  return train_probe(extract_embeddings(train, model, data), extract_embeddings(test, model, data),
                     num_classes, config);
}

std::vector<EfficiencyRow> data_efficiency_sweep(const std::vector<double>& fractions,
                                                 const std::vector<std::uint64_t>& seeds,
                                                 const ProbeConfig& config,
                                                 const training::Checkpoint& pretrained,
                                                 const std::vector<videodata::LoadedClip>& train,
                                                 const std::vector<videodata::LoadedClip>& test,
                                                 int num_classes, const training::DataSpec& data) {
  for (double f : fractions) {
    if (!(f > 0 && f <= 1)) fail(ErrorKind::ConfigError, "fractions must lie in (0, 1]");
  }
  const training::ModelSpec spec = training::checkpoint_model_spec(pretrained);
  std::vector<EfficiencyRow> rows;
  for (auto seed : seeds) {
    for (double f : fractions) {
      ProbeConfig c = config;
      c.mode = ProbeMode::Finetune;
      c.label_fraction = f;
      c.seed = seed;
      {
        training::Model m = training::load_model(pretrained);
        rows.push_back({f, "pretrained", seed,
                        finetune_classifier(m, train, test, num_classes, data, c).test_accuracy});
      }
      {
        training::Model m(spec, derive_seed(seed, 0x72616e64ULL));
        rows.push_back({f, "random", seed,
                        finetune_classifier(m, train, test, num_classes, data, c).test_accuracy});
      }
    }
  }
  return rows;
}

void write_efficiency(const std::vector<EfficiencyRow>& rows, const std::filesystem::path& csv) {
  std::ofstream out(csv);
  if (!out) fail(ErrorKind::IoError, "cannot write " + csv.string());
  out << "fraction,init,seed,accuracy\n";
  out.precision(17);
  for (const auto& r : rows) out << r.fraction << ',' << r.init << ',' << r.seed << ',' << r.accuracy << '\n';
}

}  // namespace memdpc::evaluation

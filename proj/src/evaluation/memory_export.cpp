#include "memdpc/evaluation/memory_export.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "memdpc/core/error.hpp"
#include "memdpc/core/ops.hpp"
#include "memdpc/training/batching.hpp"

namespace memdpc::evaluation {

std::vector<double> memory_magnitudes(const memory::MemoryBank& bank) {
  const Tensor& m = bank.rows()->value;
  const std::int64_t k = m.shape()[0], C = m.shape()[1];
  std::vector<double> out(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    double s = 0;
    for (std::int64_t c = 0; c < C; ++c) s += m[i * C + c] * m[i * C + c];
    out[static_cast<std::size_t>(i)] = std::sqrt(s);
  }
  return out;
}

namespace {

template <class Fn>
void for_each_window_batch(const std::vector<videodata::LoadedClip>& clips, const training::Model& model,
                           const training::DataSpec& data, Fn&& fn) {
  constexpr std::size_t kChunk = 8;
  const int L = model.spec().backbone.block_len;
  const auto policy = data.augment.eval_view();
  std::vector<std::size_t> owner;
  std::vector<training::WindowRequest> all;
  for (std::size_t i = 0; i < clips.size(); ++i)
    for (int s : window_starts(clips[i].clip.frames, data, L)) {
      all.push_back({&clips[i].clip, s, 0});
      owner.push_back(i);
    }
  ag::NoGradGuard guard;
  for (std::size_t w0 = 0; w0 < all.size(); w0 += kChunk) {
    const std::size_t w1 = std::min(all.size(), w0 + kChunk);
    const std::vector<training::WindowRequest> chunk(all.begin() + static_cast<std::ptrdiff_t>(w0),
                                                     all.begin() + static_cast<std::ptrdiff_t>(w1));
    const Tensor x = training::make_batch(chunk, data, L, policy);
    fn(model.encode(ag::constant(x), static_cast<int>(chunk.size()), false),
       std::vector<std::size_t>(owner.begin() + static_cast<std::ptrdiff_t>(w0),
                                owner.begin() + static_cast<std::ptrdiff_t>(w1)));
  }
}

// [B][C][H][W] -> per-batch-row spatial means.
std::vector<std::vector<double>> pooled_rows(const Tensor& t) {
  const auto& s = t.shape();
  const std::int64_t B = s[0], C = s[1], P = s[2] * s[3];
  std::vector<std::vector<double>> out(static_cast<std::size_t>(B), std::vector<double>(static_cast<std::size_t>(C), 0.0));
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      double acc = 0;
      for (std::int64_t p = 0; p < P; ++p) acc += t[(b * C + c) * P + p];
      out[b][c] = acc / static_cast<double>(P);
    }
  return out;
}

std::vector<ClipEmbedding> finish(const std::vector<videodata::LoadedClip>& clips,
                                  const std::vector<std::vector<std::vector<double>>>& per_clip) {
  std::vector<ClipEmbedding> out;
  for (std::size_t i = 0; i < clips.size(); ++i)
    out.push_back({clip_id(clips[i].entry), clips[i].entry.label, average_vectors(per_clip[i])});
  return out;
}

}  // namespace

std::vector<ClipEmbedding> clip_block_features(const std::vector<videodata::LoadedClip>& clips,
                                               const training::Model& model, const training::DataSpec& data) {
  std::vector<std::vector<std::vector<double>>> per_clip(clips.size());
  for_each_window_batch(clips, model, data, [&](const std::vector<ag::Var>& z, const std::vector<std::size_t>& owner) {
    for (const auto& zt : z) {
      const auto rows = pooled_rows(zt->value);
      for (std::size_t b = 0; b < owner.size(); ++b) per_clip[owner[b]].push_back(rows[b]);
    }
  });
  return finish(clips, per_clip);
}

std::vector<MemoryNeighbour> memory_neighbours(const Tensor& rows, const std::vector<ClipEmbedding>& clips,
                                               int top, bool normalized) {
  if (rows.rank() != 2) fail(ErrorKind::ShapeMismatch, "memory rows must be [k][C]");
  const std::int64_t k = rows.shape()[0], C = rows.shape()[1];
  std::vector<MemoryNeighbour> out;
  for (std::int64_t i = 0; i < k; ++i) {
    const std::span<const double> m(rows.ptr() + i * C, static_cast<std::size_t>(C));
    std::vector<double> score;
    for (const auto& c : clips) score.push_back(memory::critic(m, c.vector, normalized));
    std::vector<std::size_t> order(clips.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    for (int r = 0; r < top && r < static_cast<int>(order.size()); ++r) {
      const auto& c = clips[order[static_cast<std::size_t>(r)]];
      out.push_back({static_cast<int>(i), r + 1, c.clip_id, c.label, score[order[static_cast<std::size_t>(r)]]});
    }
  }
  return out;
}

std::vector<ClipEmbedding> addressing_vectors(const std::vector<videodata::LoadedClip>& clips,
                                              const training::Model& model, const training::DataSpec& data,
                                              int pred_steps) {
  if (pred_steps < 1 || pred_steps >= data.num_blocks) {
    fail(ErrorKind::ConfigError, "pred_steps must lie in [1, num_blocks)");
  }
  const auto pm = model.forward_model();
  std::vector<std::vector<std::vector<double>>> per_clip(clips.size());
  for_each_window_batch(clips, model, data, [&](const std::vector<ag::Var>& z, const std::vector<std::size_t>& owner) {
    const std::vector<ag::Var> past(z.begin(), z.end() - pred_steps);
    const ag::Var p = memory::address(pm.aggregator.run(past), pm.phi, pm.temperature);
    const auto rows = pooled_rows(p->value);
    for (std::size_t b = 0; b < owner.size(); ++b) per_clip[owner[b]].push_back(rows[b]);
  });
  return finish(clips, per_clip);
}

void export_memory_views(const training::Model& model, const std::vector<videodata::LoadedClip>& clips,
                         const training::DataSpec& data, int pred_steps, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto open = [&](const std::string& name) {
    std::ofstream f(out_dir / name);
    if (!f) fail(ErrorKind::IoError, "cannot write " + (out_dir / name).string());
    f.precision(17);
    return f;
  };
  {
    auto f = open("memory_magnitude.csv");
    f << "slot,magnitude\n";
    const auto mags = memory_magnitudes(model.memory);
    for (std::size_t i = 0; i < mags.size(); ++i) f << i << ',' << mags[i] << '\n';
  }
  {
    auto f = open("memory_neighbours.csv");
    f << "slot,rank,clip_id,label,score\n";
    for (const auto& n : memory_neighbours(model.memory.rows()->value, clip_block_features(clips, model, data)))
      f << n.slot << ',' << n.rank << ',' << n.clip_id << ',' << n.label << ',' << n.score << '\n';
  }
  {
    auto f = open("addressing_vectors.csv");
    f << "clip_id,label";
    for (int i = 0; i < model.spec().memory_k; ++i) f << ",p" << i;
    f << '\n';
    for (const auto& a : addressing_vectors(clips, model, data, pred_steps)) {
      f << a.clip_id << ',' << a.label;
      for (double v : a.vector) f << ',' << v;
      f << '\n';
    }
  }
}

}  // namespace memdpc::evaluation

#include "memdpc/evaluation/embedding.hpp"

#include <fstream>
#include <sstream>

#include "memdpc/core/error.hpp"
#include "memdpc/core/ops.hpp"
#include "memdpc/training/batching.hpp"

namespace memdpc::evaluation {

std::vector<double> spatial_pool(const backbone::ContextFeature& c) {
  const auto& s = c.values.shape();
  if (s.size() != 3) fail(ErrorKind::ShapeMismatch, "context feature must be [C][H][W]");
  const std::int64_t C = s[0], P = s[1] * s[2];
  std::vector<double> out(static_cast<std::size_t>(C), 0.0);
  for (std::int64_t ch = 0; ch < C; ++ch) {
    double acc = 0.0;
    for (std::int64_t p = 0; p < P; ++p) acc += c.values[ch * P + p];
    out[static_cast<std::size_t>(ch)] = acc / static_cast<double>(P);
  }
  return out;
}

std::vector<double> average_vectors(const std::vector<std::vector<double>>& vs) {
  if (vs.empty()) fail(ErrorKind::EmptySequence, "nothing to average");
  std::vector<double> out(vs.front().size(), 0.0);
  for (const auto& v : vs) {
    if (v.size() != out.size()) fail(ErrorKind::DimensionMismatch, "vectors differ in length");
    for (std::size_t i = 0; i < v.size(); ++i) out[i] += v[i];
  }
  for (auto& x : out) x /= static_cast<double>(vs.size());
  return out;
}

std::vector<int> window_starts(int frames, const training::DataSpec& data, int block_len, int hop) {
  const int window = data.window_frames(block_len);
  if (hop <= 0) hop = window;
  std::vector<int> starts;
  for (int s = 0; s + window <= frames; s += hop) starts.push_back(s);
  if (starts.empty()) {
    if (data.loop_pad && frames > 0) return {0};
    fail(ErrorKind::ClipTooShort, "clip has " + std::to_string(frames) + " frames, a window needs " +
                                      std::to_string(window));
  }
  return starts;
}

ag::Var pooled_context(const training::Model& model, const ag::Var& blocks, int batch, bool training) {
  ag::Var c = model.aggregator.run(model.encode(blocks, batch, training));
  const Shape s = c->shape();
  return ag::mean_axis(ag::reshape(c, {s[0], s[1], s[2] * s[3]}), 2);
}

namespace {

std::vector<std::vector<double>> rows_of(const Tensor& t) {
  const std::int64_t B = t.shape()[0], C = t.shape()[1];
  std::vector<std::vector<double>> out(static_cast<std::size_t>(B));
  for (std::int64_t b = 0; b < B; ++b) out[b].assign(t.ptr() + b * C, t.ptr() + (b + 1) * C);
  return out;
}

}  // namespace

std::vector<ClipEmbedding> extract_embeddings(const std::vector<videodata::LoadedClip>& clips,
                                              const training::Model& model,
                                              const training::DataSpec& data, int hop) {
  constexpr std::size_t kChunk = 8;
  const int L = model.spec().backbone.block_len;
  const auto policy = data.augment.eval_view();
  ag::NoGradGuard guard;

  struct Job {
    std::size_t clip;
    int start;
  };
  std::vector<Job> jobs;
  for (std::size_t i = 0; i < clips.size(); ++i)
    for (int s : window_starts(clips[i].clip.frames, data, L, hop)) jobs.push_back({i, s});

  std::vector<std::vector<std::vector<double>>> per_clip(clips.size());
  for (std::size_t j0 = 0; j0 < jobs.size(); j0 += kChunk) {
    const std::size_t j1 = std::min(jobs.size(), j0 + kChunk);
    std::vector<training::WindowRequest> windows;
    for (std::size_t j = j0; j < j1; ++j) windows.push_back({&clips[jobs[j].clip].clip, jobs[j].start, 0});
    const Tensor x = training::make_batch(windows, data, L, policy);
    const auto rows = rows_of(pooled_context(model, ag::constant(x), static_cast<int>(windows.size()), false)->value);
    for (std::size_t j = j0; j < j1; ++j) per_clip[jobs[j].clip].push_back(rows[j - j0]);
  }

  std::vector<ClipEmbedding> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    out.push_back({clip_id(clips[i].entry), clips[i].entry.label, average_vectors(per_clip[i])});
  }
  return out;
}

ClipEmbedding extract_embedding(const videodata::LoadedClip& clip, const training::Model& model,
                                const training::DataSpec& data, int hop) {
  return extract_embeddings({clip}, model, data, hop).front();
}

std::string clip_id(const videodata::IndexEntry& e) { return e.clip_path; }

void write_embeddings(const std::vector<ClipEmbedding>& e, const std::filesystem::path& csv) {
  std::ofstream out(csv);
  if (!out) fail(ErrorKind::IoError, "cannot write " + csv.string());
  const std::size_t C = e.empty() ? 0 : e.front().vector.size();
  out << "clip_id,label";
  for (std::size_t i = 0; i < C; ++i) out << ",v" << i;
  out << '\n';
  out.precision(17);
  for (const auto& row : e) {
    if (row.vector.size() != C) fail(ErrorKind::DimensionMismatch, "embeddings differ in length");
    if (row.clip_id.find_first_of(",\n") != std::string::npos) {
      fail(ErrorKind::InvalidIndex, "clip id '" + row.clip_id + "' contains a separator");
    }
    out << row.clip_id << ',' << row.label;
    for (double v : row.vector) out << ',' << v;
    out << '\n';
  }
}

std::vector<ClipEmbedding> read_embeddings(const std::filesystem::path& csv) {
  std::ifstream in(csv);
  if (!in) fail(ErrorKind::IoError, "cannot read " + csv.string());
  std::string line;
  if (!std::getline(in, line) || !line.starts_with("clip_id,label")) {
    fail(ErrorKind::InvalidIndex, csv.string() + ": expected header clip_id,label,v0,...");
  }
  std::vector<ClipEmbedding> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    ClipEmbedding e;
    std::getline(ls, e.clip_id, ',');
    try {
      std::getline(ls, field, ',');
      e.label = std::stoi(field);
      while (std::getline(ls, field, ',')) e.vector.push_back(std::stod(field));
    } catch (const std::exception&) {
      fail(ErrorKind::InvalidIndex, csv.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    if (!out.empty() && e.vector.size() != out.front().vector.size()) {
      fail(ErrorKind::InvalidIndex, csv.string() + ":" + std::to_string(lineno) + ": wrong width");
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace memdpc::evaluation

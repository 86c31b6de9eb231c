#include "memdpc/evaluation/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "memdpc/core/error.hpp"

namespace memdpc::evaluation {

namespace {

double norm(const std::vector<double>& v, const std::string& id) {
  double s = 0.0;
  for (double x : v) s += x * x;
  if (s == 0.0) fail(ErrorKind::ZeroNormEmbedding, "embedding '" + id + "' has zero norm");
  return std::sqrt(s);
}

}  // namespace

std::vector<std::size_t> rank_gallery(const std::vector<double>& query,
                                      const std::vector<ClipEmbedding>& gallery) {
  const double qn = norm(query, "query");
  std::vector<double> dist(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    const auto& v = gallery[g].vector;
    if (v.size() != query.size()) fail(ErrorKind::DimensionMismatch, "embedding widths differ");
    const double dot = std::inner_product(v.begin(), v.end(), query.begin(), 0.0);
    dist[g] = 1.0 - dot / (qn * norm(v, gallery[g].clip_id));
  }
  std::vector<std::size_t> order(gallery.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dist[a] < dist[b]; });
  return order;
}

std::vector<RecallAtK> retrieve(const std::vector<ClipEmbedding>& queries,
                                const std::vector<ClipEmbedding>& gallery,
                                const std::vector<int>& ks) {
  if (gallery.empty()) fail(ErrorKind::DataExhausted, "retrieval gallery is empty");
  if (queries.empty()) fail(ErrorKind::DataExhausted, "no retrieval queries");
  if (ks.empty() || !std::is_sorted(ks.begin(), ks.end()) || ks.front() < 1) {
    fail(ErrorKind::ConfigError, "ks must be ascending and >= 1");
  }
  std::vector<int> hits(ks.size(), 0);
  for (const auto& q : queries) {
    const auto order = rank_gallery(q.vector, gallery);
    std::size_t first = order.size();
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (gallery[order[r]].label == q.label) {
        first = r;
        break;
      }
    }
    for (std::size_t i = 0; i < ks.size(); ++i)
      if (first < static_cast<std::size_t>(ks[i])) ++hits[i];
  }
  std::vector<RecallAtK> out;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    out.push_back({ks[i], static_cast<double>(hits[i]) / static_cast<double>(queries.size())});
  }
  return out;
}

void write_recall(const std::vector<RecallAtK>& r, const std::filesystem::path& csv) {
  std::ofstream out(csv);
  if (!out) fail(ErrorKind::IoError, "cannot write " + csv.string());
  out << "k,recall\n";
  out.precision(17);
  for (const auto& x : r) out << x.k << ',' << x.recall << '\n';
}

}  // namespace memdpc::evaluation

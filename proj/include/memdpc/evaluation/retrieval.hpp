#pragma once

#include <filesystem>
#include <vector>

#include "memdpc/evaluation/embedding.hpp"

namespace memdpc::evaluation {

struct RecallAtK {
  int k = 0;
  double recall = 0.0;
};

/// Gallery indices ordered by cosine distance to `query`, ties broken by
/// gallery index. Throws ZeroNormEmbedding on a zero vector.
std::vector<std::size_t> rank_gallery(const std::vector<double>& query,
                                      const std::vector<ClipEmbedding>& gallery);

/// R@k for every k in `ks` (ascending): fraction of queries with at least
/// one same-class gallery item among the k nearest.
std::vector<RecallAtK> retrieve(const std::vector<ClipEmbedding>& queries,
                                const std::vector<ClipEmbedding>& gallery,
                                const std::vector<int>& ks);

/// CSV `k,recall`.
void write_recall(const std::vector<RecallAtK>& r, const std::filesystem::path& csv);

}  // namespace memdpc::evaluation

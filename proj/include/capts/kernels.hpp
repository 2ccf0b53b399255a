#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "capts/types.hpp"

// Data-parallel index kernels. Every kernel has a plain serial reference and
// an OpenMP version; both produce bit-identical neighbor lists because each
// (i, j) score is accumulated in the same order.
namespace capts::kernels {

struct Neighbor {
  ItemId item = 0;
  float score = 0.0f;

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

using NeighborLists = std::vector<std::vector<Neighbor>>;

enum class Exec { serial, parallel };

// Descending score, ties by ascending item id; keeps at most k.
void sort_and_truncate(std::vector<Neighbor>& list, int k);

// Swing-style co-consumption score:
//   score(i, j) = sum over user pairs (u, v) with i, j in I_u and I_v of
//                 1 / (alpha + |I_u intersect I_v|)
// `user_items` holds each user's sorted, de-duplicated item set.
NeighborLists swing_topk_reference(const std::vector<std::vector<ItemId>>& user_items,
                                   std::size_t n_items, double alpha, int k);
NeighborLists swing_topk_parallel(const std::vector<std::vector<ItemId>>& user_items,
                                  std::size_t n_items, double alpha, int k);

// Exact cosine top-k over row-major unit vectors; rows with eligible[i] == 0
// neither query nor appear as neighbors.
NeighborLists cosine_topk_reference(std::span<const float> vectors, int dim,
                                    std::span<const std::uint8_t> eligible, int k);
NeighborLists cosine_topk_parallel(std::span<const float> vectors, int dim,
                                   std::span<const std::uint8_t> eligible, int k);

inline NeighborLists swing_topk(const std::vector<std::vector<ItemId>>& user_items,
                                std::size_t n_items, double alpha, int k, Exec exec) {
  return exec == Exec::parallel ? swing_topk_parallel(user_items, n_items, alpha, k)
                                : swing_topk_reference(user_items, n_items, alpha, k);
}

inline NeighborLists cosine_topk(std::span<const float> vectors, int dim,
                                 std::span<const std::uint8_t> eligible, int k, Exec exec) {
  return exec == Exec::parallel ? cosine_topk_parallel(vectors, dim, eligible, k)
                                : cosine_topk_reference(vectors, dim, eligible, k);
}

int max_threads();

}  // namespace capts::kernels

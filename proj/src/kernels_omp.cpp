#include <algorithm>

#include "capts/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace capts::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {

struct PairBlock {
  std::vector<ItemId> items;   // concatenated intersections
  std::vector<std::size_t> begin;
  std::vector<double> weight;
};

}  // namespace

NeighborLists swing_topk_parallel(const std::vector<std::vector<ItemId>>& user_items,
                                  std::size_t n_items, double alpha, int k) {
  const auto n_users = static_cast<std::ptrdiff_t>(user_items.size());
  std::vector<PairBlock> blocks(user_items.size());

  // Phase 1: intersections for every user pair (u, v > u), grouped by u.
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t u = 0; u < n_users; ++u) {
    auto& blk = blocks[static_cast<std::size_t>(u)];
    const auto& a = user_items[static_cast<std::size_t>(u)];
    for (std::size_t v = static_cast<std::size_t>(u) + 1; v < user_items.size(); ++v) {
      const auto& b = user_items[v];
      const std::size_t start = blk.items.size();
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(blk.items));
      const std::size_t len = blk.items.size() - start;
      if (len < 2) {
        blk.items.resize(start);
        continue;
      }
      blk.begin.push_back(start);
      blk.weight.push_back(1.0 / (alpha + static_cast<double>(len)));
    }
    blk.begin.push_back(blk.items.size());
  }

  // Phase 2: item -> pairs postings in global (u, v) order.
  struct PairRef {
    std::uint32_t block;
    std::uint32_t index;
  };
  std::vector<std::size_t> count(n_items + 1, 0);
  for (const auto& blk : blocks)
    for (ItemId i : blk.items) ++count[i + 1];
  for (std::size_t i = 0; i < n_items; ++i) count[i + 1] += count[i];
  std::vector<PairRef> postings(count[n_items]);
  {
    auto fill = count;
    for (std::uint32_t b = 0; b < blocks.size(); ++b) {
      const auto& blk = blocks[b];
      for (std::uint32_t p = 0; p + 1 < blk.begin.size(); ++p)
        for (std::size_t x = blk.begin[p]; x < blk.begin[p + 1]; ++x)
          postings[fill[blk.items[x]]++] = {b, p};
    }
  }

  // Phase 3: one dense accumulator row per thread.
  NeighborLists out(n_items);
#pragma omp parallel
  {
    std::vector<double> acc(n_items, 0.0);
    std::vector<ItemId> touched;
    std::vector<Neighbor> row;
#pragma omp for schedule(dynamic, 16)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n_items); ++ii) {
      const auto i = static_cast<ItemId>(ii);
      touched.clear();
      for (std::size_t x = count[i]; x < count[i + 1]; ++x) {
        const auto& ref = postings[x];
        const auto& blk = blocks[ref.block];
        const double w = blk.weight[ref.index];
        for (std::size_t y = blk.begin[ref.index]; y < blk.begin[ref.index + 1]; ++y) {
          const ItemId j = blk.items[y];
          if (j == i) continue;
          if (acc[j] == 0.0) touched.push_back(j);
          acc[j] += w;
        }
      }
      row.clear();
      for (ItemId j : touched) {
        row.push_back({j, static_cast<float>(acc[j])});
        acc[j] = 0.0;
      }
      sort_and_truncate(row, k);
      out[i] = row;
    }
  }
  return out;
}

NeighborLists cosine_topk_parallel(std::span<const float> vectors, int dim,
                                   std::span<const std::uint8_t> eligible, int k) {
  const std::size_t n = eligible.size();
  const auto d = static_cast<std::size_t>(dim);
  NeighborLists out(n);
  std::vector<std::uint32_t> live;
  for (std::size_t i = 0; i < n; ++i)
    if (eligible[i]) live.push_back(static_cast<std::uint32_t>(i));
#pragma omp parallel
  {
    std::vector<Neighbor> cand;
#pragma omp for schedule(dynamic, 32)
    for (std::ptrdiff_t li = 0; li < static_cast<std::ptrdiff_t>(live.size()); ++li) {
      const std::size_t i = live[static_cast<std::size_t>(li)];
      cand.clear();
      const float* a = vectors.data() + i * d;
      for (std::uint32_t j : live) {
        if (j == i) continue;
        const float* b = vectors.data() + j * d;
        double dot = 0.0;
        for (std::size_t x = 0; x < d; ++x) dot += static_cast<double>(a[x]) * b[x];
        cand.push_back({j, static_cast<float>(dot)});
      }
      sort_and_truncate(cand, k);
      out[i] = cand;
    }
  }
  return out;
}

}  // namespace capts::kernels

#include <algorithm>
#include <unordered_map>

#include "capts/kernels.hpp"

namespace capts::kernels {

void sort_and_truncate(std::vector<Neighbor>& list, int k) {
  auto cmp = [](const Neighbor& a, const Neighbor& b) {
    return a.score != b.score ? a.score > b.score : a.item < b.item;
  };
  const auto keep = std::min(list.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::partial_sort(list.begin(), list.begin() + static_cast<std::ptrdiff_t>(keep), list.end(), cmp);
  list.resize(keep);
}

NeighborLists swing_topk_reference(const std::vector<std::vector<ItemId>>& user_items,
                                   std::size_t n_items, double alpha, int k) {
  std::unordered_map<std::uint64_t, double> score;
  std::vector<ItemId> common;
  for (std::size_t u = 0; u < user_items.size(); ++u) {
    for (std::size_t v = u + 1; v < user_items.size(); ++v) {
      common.clear();
      std::set_intersection(user_items[u].begin(), user_items[u].end(), user_items[v].begin(),
                            user_items[v].end(), std::back_inserter(common));
      if (common.size() < 2) continue;
      const double w = 1.0 / (alpha + static_cast<double>(common.size()));
      for (ItemId i : common)
        for (ItemId j : common)
          if (i != j) score[(static_cast<std::uint64_t>(i) << 32) | j] += w;
    }
  }
  NeighborLists out(n_items);
  for (const auto& [key, s] : score) {
    const auto i = static_cast<ItemId>(key >> 32);
    const auto j = static_cast<ItemId>(key & 0xffffffffu);
    out[i].push_back({j, static_cast<float>(s)});
  }
  for (auto& list : out) sort_and_truncate(list, k);
  return out;
}

NeighborLists cosine_topk_reference(std::span<const float> vectors, int dim,
                                    std::span<const std::uint8_t> eligible, int k) {
  const std::size_t n = eligible.size();
  const auto d = static_cast<std::size_t>(dim);
  NeighborLists out(n);
  std::vector<Neighbor> cand;
  for (std::size_t i = 0; i < n; ++i) {
    if (!eligible[i]) continue;
    cand.clear();
    const float* a = vectors.data() + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !eligible[j]) continue;
      const float* b = vectors.data() + j * d;
      double dot = 0.0;
      for (std::size_t x = 0; x < d; ++x) dot += static_cast<double>(a[x]) * b[x];
      cand.push_back({static_cast<ItemId>(j), static_cast<float>(dot)});
    }
    sort_and_truncate(cand, k);
    out[i] = cand;
  }
  return out;
}

}  // namespace capts::kernels

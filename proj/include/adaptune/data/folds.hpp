#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "adaptune/error.hpp"

namespace adaptune::data {

/// Stratified k-fold assignment. Within each class the entries are sorted by
/// id, shuffled with a generator seeded from (seed, class) and dealt
/// round-robin; each class continues the deal where the previous one stopped
/// so that folds stay balanced overall. Returns the fold index per entry.
inline std::vector<std::size_t> stratified_folds(std::span<const std::string> ids,
                                                 std::span<const std::size_t> labels, std::size_t k,
                                                 std::uint64_t seed) {
  if (ids.size() != labels.size()) throw DimensionError("stratified_folds: ids and labels differ in length");
  if (k < 2) throw ConfigError("cross-validation needs k >= 2");
  std::unordered_set<std::string> seen;
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!seen.insert(ids[i]).second) throw DataError("duplicate id '" + ids[i] + "'");
    by_class[labels[i]].push_back(i);
  }
  std::vector<std::size_t> fold(ids.size(), 0);
  std::size_t cursor = 0;
  for (auto& [label, members] : by_class) {
    if (members.size() < k) {
      throw StratificationError("class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                                " examples, fewer than k = " + std::to_string(k));
    }
    std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(label)};
    std::mt19937_64 rng(seq);
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t i = 0; i < members.size(); ++i) fold[members[i]] = (cursor + i) % k;
    cursor = (cursor + members.size()) % k;
  }
  return fold;
}

}  // namespace adaptune::data

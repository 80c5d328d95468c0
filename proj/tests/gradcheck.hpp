#pragma once

#include "spacealign/common.hpp"
#include "spacealign/rng.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace spacealign::testing {

// Relative L2 error between two gradient vectors: |a - b| / max(|a|, |b|, floor).
inline double rel_error(const Vec& a, const Vec& b, double floor = 1e-12) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

// Central differences of f at x over the listed coordinates (all when empty).
inline Vec central_difference(const std::function<double(const Vec&)>& f, Vec x, double h,
                              const std::vector<Eigen::Index>& coords = {}) {
  std::vector<Eigen::Index> idx = coords;
  if (idx.empty()) {
    for (Eigen::Index i = 0; i < x.size(); ++i) idx.push_back(i);
  }
  Vec g(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Eigen::Index i = idx[k];
    const double orig = x[i];
    x[i] = orig + h;
    const double fp = f(x);
    x[i] = orig - h;
    const double fm = f(x);
    x[i] = orig;
    g[static_cast<Eigen::Index>(k)] = (fp - fm) / (2 * h);
  }
  return g;
}

// n distinct coordinates out of size, seeded.
inline std::vector<Eigen::Index> pick_coords(Eigen::Index size, std::size_t n, std::uint64_t seed) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(size));
  for (Eigen::Index i = 0; i < size; ++i) all[static_cast<std::size_t>(i)] = i;
  if (n >= all.size()) return all;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(all.size() - i));
    std::swap(all[i], all[j]);
  }
  all.resize(n);
  std::sort(all.begin(), all.end());
  return all;
}

inline Vec gather(const Vec& v, const std::vector<Eigen::Index>& coords) {
  Vec out(static_cast<Eigen::Index>(coords.size()));
  for (std::size_t k = 0; k < coords.size(); ++k) out[static_cast<Eigen::Index>(k)] = v[coords[k]];
  return out;
}

}  // namespace spacealign::testing

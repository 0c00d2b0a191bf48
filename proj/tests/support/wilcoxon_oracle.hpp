#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace iqt::testing {

struct EnumeratedWilcoxon {
  double w_plus = 0.0;
  double p = 1.0;
  std::size_t n = 0;
};

// Brute force: drop zero differences, average-rank |d|, then walk all 2^n
// sign patterns and count those at or beyond the observed W+.
inline EnumeratedWilcoxon enumerate_wilcoxon(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] - b[i] != 0.0) d.push_back(a[i] - b[i]);
  EnumeratedWilcoxon r;
  r.n = d.size();
  if (d.empty()) return r;
  std::vector<double> rank(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    double below = 0.0, equal = 0.0;
    for (double e : d) {
      if (std::abs(e) < std::abs(d[i])) below += 1.0;
      if (std::abs(e) == std::abs(d[i])) equal += 1.0;
    }
    rank[i] = below + (equal + 1.0) / 2.0;
  }
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0.0) r.w_plus += rank[i];
  const std::uint64_t total = std::uint64_t{1} << d.size();
  std::uint64_t le = 0, ge = 0;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (mask >> i & 1u) w += rank[i];
    if (w <= r.w_plus + 1e-9) ++le;
    if (w >= r.w_plus - 1e-9) ++ge;
  }
  r.p = std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total));
  return r;
}

}  // namespace iqt::testing

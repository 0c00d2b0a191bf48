#include "iqt/evaluation/wilcoxon.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "iqt/error.hpp"

namespace iqt::eval {

namespace {

constexpr std::size_t kExactLimit = 15;

}  // namespace

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("wilcoxon: samples differ in length");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (!std::isfinite(d)) throw EvaluationError("wilcoxon: non-finite paired difference");
    if (d != 0.0) diffs.push_back(d);
  }
  WilcoxonResult r;
  r.n = diffs.size();
  if (r.n == 0) {
    r.degenerate = true;
    return r;
  }

  // Average ranks of |d|, stored doubled so ties stay integral.
  std::vector<std::size_t> order(r.n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return std::abs(diffs[i]) < std::abs(diffs[j]); });
  std::vector<long long> rank2(r.n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < r.n;) {
    std::size_t j = i;
    while (j + 1 < r.n && std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]])) ++j;
    const long long doubled = static_cast<long long>(i + 1 + j + 1);  // 2 * average of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = doubled;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  long long w_plus2 = 0, total2 = 0;
  for (std::size_t i = 0; i < r.n; ++i) {
    total2 += rank2[i];
    if (diffs[i] > 0.0) w_plus2 += rank2[i];
  }
  const double w_plus = 0.5 * static_cast<double>(w_plus2);
  const double w_minus = 0.5 * static_cast<double>(total2 - w_plus2);
  r.statistic = std::min(w_plus, w_minus);

  if (r.n <= kExactLimit) {
    r.exact = true;
    // Count sign assignments by doubled positive-rank sum.
    std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    long long reach = 0;
    for (long long rk : rank2) {
      for (long long s = reach; s >= 0; --s) {
        if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + rk)] += counts[static_cast<std::size_t>(s)];
      }
      reach += rk;
    }
    double le = 0.0, ge = 0.0;
    for (long long s = 0; s <= total2; ++s) {
      if (s <= w_plus2) le += counts[static_cast<std::size_t>(s)];
      if (s >= w_plus2) ge += counts[static_cast<std::size_t>(s)];
    }
    const double denom = std::ldexp(1.0, static_cast<int>(r.n));
    r.p_value = std::min(1.0, 2.0 * std::min(le, ge) / denom);
    return r;
  }

  const double n = static_cast<double>(r.n);
  const double mean = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (!(var > 0.0)) {
    r.p_value = 1.0;
    return r;
  }
  const double diff = w_plus - mean;
  const double corrected = std::max(0.0, std::abs(diff) - 0.5);
  const double z = corrected / std::sqrt(var);
  r.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return r;
}

}  // namespace iqt::eval

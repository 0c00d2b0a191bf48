#pragma once

#include <cstddef>
#include <span>

namespace iqt::eval {

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;    // two-sided
  std::size_t n = 0;       // pairs left after dropping zero differences
  bool degenerate = false;  // every difference was zero
  bool exact = false;
};

/// Paired two-sided signed-rank test on a - b. Zero differences are dropped
/// and tied magnitudes get average ranks. n <= 15 uses the exact null
/// distribution, p = min(1, 2 min(P(W+ <= w), P(W+ >= w))); larger n uses the
/// normal approximation with tie and continuity corrections.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

}  // namespace iqt::eval

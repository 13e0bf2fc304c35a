#pragma once

// Independent reference computations used to check library results. Nothing
// here calls into the code under test.

#include <algorithm>
#include <cstddef>
#include <set>
#include <vector>

namespace engage::testing {

/// Cohen's kappa straight from the definition: observed agreement counted pair
/// by pair, chance agreement from each rater's label frequencies.
template <typename Label>
double kappa_by_definition(const std::vector<Label>& a, const std::vector<Label>& b) {
  const double n = static_cast<double>(a.size());
  double agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += (a[i] == b[i]) ? 1.0 : 0.0;
  const double p_o = agree / n;
  std::set<Label> labels(a.begin(), a.end());
  labels.insert(b.begin(), b.end());
  double p_e = 0;
  for (const auto& l : labels) {
    const double ca = static_cast<double>(std::count(a.begin(), a.end(), l));
    const double cb = static_cast<double>(std::count(b.begin(), b.end(), l));
    p_e += (ca / n) * (cb / n);
  }
  if (p_e == 1.0) return 1.0;
  return (p_o - p_e) / (1.0 - p_e);
}

}  // namespace engage::testing

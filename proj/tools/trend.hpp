#pragma once

// Ordering checks used by the sweep commands and the acceptance run.

#include <cstdio>
#include <span>
#include <string>
#include <vector>

namespace ddv::cli {

// v[i+1] >= v[i] - tol for every adjacent pair.
inline bool non_decreasing_within(std::span<const double> v, double tol) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] < v[i - 1] - tol) return false;
  return true;
}

// At most one adjacent rise, and that rise no larger than max_rise.
inline bool non_increasing_with_one_inversion(std::span<const double> v, double max_rise) {
  int rises = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[i - 1]) {
      if (v[i] - v[i - 1] > max_rise) return false;
      ++rises;
    }
  return rises <= 1;
}

inline std::vector<double> negated(std::span<const double> v) {
  std::vector<double> out;
  for (double x : v) out.push_back(-x);
  return out;
}

inline std::string join(std::span<const double> v) {
  std::string out;
  char buf[32];
  for (double x : v) {
    std::snprintf(buf, sizeof buf, "%.4f", x);
    if (!out.empty()) out += ' ';
    out += buf;
  }
  return out;
}

}  // namespace ddv::cli

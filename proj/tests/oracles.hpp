#pragma once

// Reference implementations shared by the unit tests and the acceptance
// binary. Deliberately naive.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "mammogan/errors.hpp"
#include "mammogan/stats.hpp"

namespace oracle {

// Counts all pairs: concordant 1, tied 1/2.
inline double brute_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double s = 0;
  for (double p : pos)
    for (double n : neg) s += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return s / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

struct TwoSets {
  std::vector<double> s1, s2;
  std::vector<bool> t1, t2;
};

// |z| of the DeLong statistic; a degenerate resample (zero variance, nonzero
// delta) counts as infinitely extreme.
inline double abs_z(const TwoSets& in, bool paired) {
  try {
    return std::abs(mammogan::delong_test(in.s1, in.t1, in.s2, in.t2, paired).z);
  } catch (const mammogan::NumericError&) {
    return INFINITY;
  }
}

// Permutation p-value for H0: both sets share one score distribution per
// class. Paired: each case's two scores are swapped at random. Unpaired:
// scores are pooled within class and reassigned to the sets.
inline double permutation_p(const TwoSets& in, bool paired, int resamples, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  const double observed = abs_z(in, paired);
  int extreme = 0;
  TwoSets p = in;
  for (int r = 0; r < resamples; ++r) {
    if (paired) {
      p = in;
      for (std::size_t i = 0; i < p.s1.size(); ++i)
        if (g() & 1) std::swap(p.s1[i], p.s2[i]);
    } else {
      for (bool cls : {false, true}) {
        std::vector<double> pool;
        for (std::size_t i = 0; i < in.s1.size(); ++i)
          if (in.t1[i] == cls) pool.push_back(in.s1[i]);
        for (std::size_t i = 0; i < in.s2.size(); ++i)
          if (in.t2[i] == cls) pool.push_back(in.s2[i]);
        std::shuffle(pool.begin(), pool.end(), g);
        std::size_t k = 0;
        for (std::size_t i = 0; i < p.s1.size(); ++i)
          if (p.t1[i] == cls) p.s1[i] = pool[k++];
        for (std::size_t i = 0; i < p.s2.size(); ++i)
          if (p.t2[i] == cls) p.s2[i] = pool[k++];
      }
    }
    if (abs_z(p, paired) >= observed - 1e-12) ++extreme;
  }
  return static_cast<double>(extreme) / resamples;
}

// Likert (1-5) ratings for n_pos positives and n_neg negatives from two
// correlated readers/conditions with separations sep1, sep2. In unpaired mode
// the second set uses fresh cases.
inline TwoSets likert_instance(std::mt19937_64& g, int n_pos, int n_neg, double sep1, double sep2, bool paired) {
  std::normal_distribution<double> N(0, 1);
  auto q = [](double x) { return std::clamp(std::round(x + 3), 1.0, 5.0); };
  TwoSets in;
  for (int i = 0; i < n_pos + n_neg; ++i) {
    const bool t = i < n_pos;
    const double base = N(g);
    in.t1.push_back(t);
    in.s1.push_back(q(0.7 * base + 0.7 * N(g) + (t ? sep1 : 0)));
    const double b2 = paired ? base : N(g);
    in.t2.push_back(t);
    in.s2.push_back(q(0.7 * b2 + 0.7 * N(g) + (t ? sep2 : 0)));
  }
  return in;
}

}  // namespace oracle

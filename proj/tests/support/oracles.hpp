#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <tuple>
#include <utility>
#include <vector>

#include "sectune/tinylm.hpp"

namespace sectune::oracle {

using Alignment = std::vector<std::pair<std::size_t, std::size_t>>;

// Every common-subsequence alignment of a and b, by exhaustive recursion.
inline void enumerate_alignments(const TokenSeq& a, const TokenSeq& b, std::size_t i0, std::size_t j0, Alignment& cur,
                                 std::vector<Alignment>& out) {
  out.push_back(cur);
  for (std::size_t i = i0; i < a.size(); ++i) {
    for (std::size_t j = j0; j < b.size(); ++j) {
      if (a[i] != b[j]) continue;
      cur.emplace_back(i, j);
      enumerate_alignments(a, b, i + 1, j + 1, cur, out);
      cur.pop_back();
    }
  }
}

// Longest alignment, ties broken by the pairwise key (min(i,j), max(i,j), token).
inline Alignment canonical_lcs(const TokenSeq& a, const TokenSeq& b) {
  std::vector<Alignment> all;
  Alignment cur;
  enumerate_alignments(a, b, 0, 0, cur, all);
  auto key_seq = [&](const Alignment& al) {
    std::vector<std::tuple<std::size_t, std::size_t, TokenId>> k;
    for (auto [i, j] : al) k.emplace_back(std::min(i, j), std::max(i, j), a[i]);
    return k;
  };
  const Alignment* best = nullptr;
  for (const auto& al : all) {
    if (!best || al.size() > best->size() ||
        (al.size() == best->size() && (key_seq(al) < key_seq(*best) || (key_seq(al) == key_seq(*best) && al < *best)))) {
      best = &al;
    }
  }
  return *best;
}

// LCS length by enumerating subsets of the shorter sequence.
inline std::size_t brute_lcs_length(const TokenSeq& a, const TokenSeq& b) {
  const TokenSeq& s = a.size() <= b.size() ? a : b;
  const TokenSeq& l = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  const std::size_t n = s.size();
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    const auto bits = static_cast<std::size_t>(__builtin_popcountll(mask));
    if (bits <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      if (!(mask >> i & 1)) continue;
      while (j < l.size() && l[j] != s[i]) ++j;
      if (j == l.size()) ok = false;
      else ++j;
    }
    if (ok) best = bits;
  }
  return best;
}

// Central finite differences of f at x, one coordinate at a time.
inline Vector finite_difference(const std::function<double(const Vector&)>& f, Vector x, double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x(i);
    x(i) = saved + h;
    const double up = f(x);
    x(i) = saved - h;
    const double down = f(x);
    x(i) = saved;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

inline double max_relative_error(const Vector& g, const Vector& ref) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double err = std::abs(g(i) - ref(i)) / std::max(1e-8, std::abs(g(i)) + std::abs(ref(i)));
    worst = std::max(worst, err);
  }
  return worst;
}

// n choose k as a double, by multiplicative formula.
inline double choose(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// pass@k by enumerating every k-subset of n samples of which the first c pass.
inline double enumerate_pass_at_k(int n, int c, int k) {
  long hit = 0;
  long total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != k) continue;
    ++total;
    if (mask & ((1u << c) - 1)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

}  // namespace sectune::oracle

// Copyright 2026 The manetlab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Exhaustive reference implementations of the losses and ranking metric,
// written over plain vectors without the autograd tape.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using Rows = std::vector<std::vector<double>>;

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

inline double hinge(double x) { return x > 0.0 ? x : 0.0; }

// Mean cross-entropy of logits x W^T.
inline double cross_entropy(const Rows& x, const Rows& w, const std::vector<int64_t>& labels) {
  double total = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    std::vector<double> logits(w.size());
    for (size_t c = 0; c < w.size(); ++c)
      for (size_t d = 0; d < x[i].size(); ++d) logits[c] += x[i][d] * w[c][d];
    double z = 0.0;
    for (double l : logits) z += std::exp(l);
    total += std::log(z) - logits[static_cast<size_t>(labels[i])];
  }
  return total / static_cast<double>(x.size());
}

inline Rows columns(const Rows& x, size_t start, size_t len) {
  Rows out;
  for (const auto& r : x) out.emplace_back(r.begin() + static_cast<long>(start), r.begin() + static_cast<long>(start + len));
  return out;
}

inline double id_loss(const Rows& vg, const Rows& tg, const Rows& vl, const Rows& tl, const std::vector<int64_t>& labels,
                      const Rows& wg, const std::vector<Rows>& wl) {
  double total = cross_entropy(vg, wg, labels) + cross_entropy(tg, wg, labels);
  if (vl.empty()) return total;
  const size_t d = vl[0].size() / wl.size();
  for (size_t k = 0; k < wl.size(); ++k)
    total += cross_entropy(columns(vl, k * d, d), wl[k], labels) + cross_entropy(columns(tl, k * d, d), wl[k], labels);
  return total;
}

// Every candidate negative is enumerated; the strictly larger similarity wins
// so ties keep the earliest index.
inline double ranking_loss(const Rows& v, const Rows& t, const std::vector<int64_t>& sur,
                           const std::vector<int64_t>& labels, double a1, double a2, double l1) {
  const size_t n = v.size();
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double best_t = -1e300, best_v = -1e300;
    size_t tn = 0, vn = 0;
    for (size_t j = 0; j < n; ++j) {
      if (labels[j] == labels[i]) continue;
      const double st = cosine(v[i], t[j]);
      if (st > best_t) best_t = st, tn = j;
      const double sv = cosine(v[j], t[i]);
      if (sv > best_v) best_v = sv, vn = j;
    }
    const size_t s = static_cast<size_t>(sur[i]);
    const double pos = cosine(v[i], t[i]), spos = cosine(v[i], t[s]);
    total += hinge(a1 - pos + cosine(v[i], t[tn])) + hinge(a1 - pos + cosine(v[vn], t[i])) +
             l1 * (hinge(a2 - spos + cosine(v[i], t[tn])) + hinge(a2 - spos + cosine(v[vn], t[s])));
  }
  return total / static_cast<double>(n);
}

inline double consistency_loss(const Rows& ft, const Rows& fh, const std::vector<int64_t>& labels, double a3) {
  const size_t n = ft.size();
  double total = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double best_h = -1e300, best_t = -1e300;
    size_t hn = 0, tn = 0;
    for (size_t j = 0; j < n; ++j) {
      if (labels[j] == labels[i]) continue;
      const double sh = cosine(ft[i], fh[j]);
      if (sh > best_h) best_h = sh, hn = j;
      const double st = cosine(ft[j], fh[i]);
      if (st > best_t) best_t = st, tn = j;
    }
    const double pos = cosine(ft[i], fh[i]);
    total += hinge(a3 - pos + cosine(ft[i], fh[hn])) + hinge(a3 - pos + cosine(ft[tn], fh[i]));
  }
  return total / static_cast<double>(n);
}

// Fraction of queries whose best-matching gallery item has fewer than k
// items ahead of it; ties put the lower index ahead.
inline double rank_at_k(const Rows& s, const std::vector<int64_t>& ql, const std::vector<int64_t>& gl, int64_t k) {
  int64_t hits = 0;
  for (size_t q = 0; q < s.size(); ++q) {
    int64_t best_ahead = -1;
    for (size_t g = 0; g < gl.size(); ++g) {
      if (gl[g] != ql[q]) continue;
      int64_t ahead = 0;
      for (size_t h = 0; h < gl.size(); ++h)
        if (s[q][h] > s[q][g] || (s[q][h] == s[q][g] && h < g)) ++ahead;
      if (best_ahead < 0 || ahead < best_ahead) best_ahead = ahead;
    }
    if (best_ahead >= 0 && best_ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(s.size());
}

}  // namespace oracle

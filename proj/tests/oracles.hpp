#pragma once

// Independent brute-force oracles used by the tests. These deliberately share
// no code with the library implementations they check.

#include <algorithm>
#include <cmath>
#include <vector>

#include "cqil/manifest.hpp"
#include "cqil/tensor.hpp"

namespace cqil_test {

// Direct spatial summation of the central difference convolution:
//   y(p0) = sum_pn w(pn) x(p0+pn) + theta * (-x(p0) * sum_pn w(pn)) + bias
// x:[B,C,H,W] w:[O,C,k,k] (odd k, same zero padding).
template <typename T>
cqil::Tensor<T> cdc_conv_oracle(const cqil::Tensor<T>& x, const cqil::Tensor<T>& w,
                                const cqil::Tensor<T>& bias, double theta,
                                size_t stride) {
  const size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const size_t O = w.dim(0), k = w.dim(2);
  const long r = static_cast<long>(k) / 2;
  const size_t Ho = (H - 1) / stride + 1, Wo = (W - 1) / stride + 1;
  cqil::Tensor<T> y({B, O, Ho, Wo});
  for (size_t b = 0; b < B; ++b)
    for (size_t o = 0; o < O; ++o)
      for (size_t oy = 0; oy < Ho; ++oy)
        for (size_t ox = 0; ox < Wo; ++ox) {
          const long cy = static_cast<long>(oy * stride);
          const long cx = static_cast<long>(ox * stride);
          double acc = static_cast<double>(bias[o]);
          for (size_t c = 0; c < C; ++c) {
            double wsum = 0.0;
            for (long dy = -r; dy <= r; ++dy)
              for (long dx = -r; dx <= r; ++dx) {
                const double wv = w.at4(o, c, static_cast<size_t>(dy + r),
                                        static_cast<size_t>(dx + r));
                wsum += wv;
                const long iy = cy + dy, ix = cx + dx;
                if (iy < 0 || iy >= static_cast<long>(H) || ix < 0 ||
                    ix >= static_cast<long>(W))
                  continue;
                acc += wv * x.at4(b, c, static_cast<size_t>(iy), static_cast<size_t>(ix));
              }
            acc += theta * (-x.at4(b, c, static_cast<size_t>(cy),
                                   static_cast<size_t>(cx)) *
                            wsum);
          }
          y.at4(b, o, oy, ox) = static_cast<T>(acc);
        }
  return y;
}

// Exhaustive threshold selection: scans t in {0, midpoints, 1} recounting the
// rates sample by sample.
struct SweepResult {
  double threshold;
  double apcer, bpcer;
};

inline SweepResult threshold_sweep_oracle(const std::vector<double>& scores,
                                          const std::vector<cqil::Liveness>& labels) {
  std::vector<double> uniq = scores;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  std::vector<double> cands;
  cands.push_back(0.0);
  for (size_t i = 0; i + 1 < uniq.size(); ++i)
    cands.push_back((uniq[i] + uniq[i + 1]) / 2.0);
  cands.push_back(1.0);
  std::sort(cands.begin(), cands.end());
  cands.erase(std::unique(cands.begin(), cands.end()), cands.end());

  auto rates_at = [&](double t) {
    size_t na = 0, nl = 0, fa = 0, fr = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (labels[i] == cqil::Liveness::attack) {
        ++na;
        if (scores[i] >= t) ++fa;
      } else {
        ++nl;
        if (scores[i] < t) ++fr;
      }
    }
    return std::pair<double, double>{static_cast<double>(fa) / na,
                                     static_cast<double>(fr) / nl};
  };

  SweepResult best{cands[0], 0, 0};
  double best_gap = 1e300;
  for (double t : cands) {
    auto [ap, bp] = rates_at(t);
    if (std::abs(ap - bp) < best_gap) {
      best_gap = std::abs(ap - bp);
      best = {t, ap, bp};
    }
  }
  return best;
}

// All-pairs AUC with ties counted one half.
inline double auc_pairs_oracle(const std::vector<double>& scores,
                               const std::vector<cqil::Liveness>& labels) {
  double wins = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != cqil::Liveness::live) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != cqil::Liveness::attack) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace cqil_test

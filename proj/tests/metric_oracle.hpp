#pragma once

#include <algorithm>
#include <vector>

#include "ssmpose/metrics.hpp"

namespace testutil {

using ssmpose::InstanceMatch;

// AP for one threshold by direct enumeration: for every score cutoff compute
// precision and recall from scratch, then average over the 101 recall levels
// the best precision reachable at recall >= r.
inline double brute_force_ap(const std::vector<InstanceMatch>& m, double thr) {
  std::vector<const InstanceMatch*> dets;
  for (const auto& x : m) {
    if (x.has_prediction) dets.push_back(&x);
  }
  std::sort(dets.begin(), dets.end(), [](auto* a, auto* b) {
    return a->score != b->score ? a->score > b->score : a->id < b->id;
  });
  const double num_gt = static_cast<double>(m.size());
  std::vector<std::pair<double, double>> pr;  // (recall, precision) per cutoff
  for (size_t cut = 1; cut <= dets.size(); ++cut) {
    int tp = 0;
    for (size_t i = 0; i < cut; ++i) tp += dets[i]->oks >= thr;
    pr.push_back({tp / num_gt, tp / static_cast<double>(cut)});
  }
  double total = 0;
  for (int r = 0; r <= 100; ++r) {
    double best = 0;
    for (auto [rec, prec] : pr) {
      if (rec >= r / 100.0 - 1e-12) best = std::max(best, prec);
    }
    total += best;
  }
  return total / 101.0;
}

inline std::vector<InstanceMatch> hand_built() {
  return {{1, 60.0 * 60, true, 0.9, 0.95}, {2, 40.0 * 40, true, 0.8, 0.42}, {3, 120.0 * 120, true, 0.7, 0.81},
          {4, 50.0 * 50, true, 0.6, 0.63}, {5, 70.0 * 70, false, 0, 0}};
}

}  // namespace testutil

#include "ssmpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ssmpose {

double oks_threshold(int index) { return 0.5 + 0.05 * index; }

std::optional<double> oks(const KeypointSet& pred, const KeypointSet& gt, double area,
                          const std::vector<double>& sigmas) {
  if (pred.size() != gt.size() || gt.size() != sigmas.size()) {
    throw std::invalid_argument("oks: keypoint and sigma counts differ");
  }
  if (!(area > 0)) throw std::invalid_argument("oks: area must be positive");
  double sum = 0;
  int64_t labeled = 0;
  for (size_t k = 0; k < gt.size(); ++k) {
    if (gt.points[k].v <= 0) continue;
    const double dx = pred.points[k].x - gt.points[k].x, dy = pred.points[k].y - gt.points[k].y;
    const double var = 4.0 * sigmas[k] * sigmas[k];
    sum += std::exp(-(dx * dx + dy * dy) / (2.0 * area * var));
    ++labeled;
  }
  if (labeled == 0) return std::nullopt;
  return sum / static_cast<double>(labeled);
}

double interpolated_ap(const std::vector<bool>& ranked_tp, int64_t num_gt) {
  if (num_gt <= 0) return -1;
  const size_t n = ranked_tp.size();
  std::vector<double> recall(n), precision(n);
  int64_t tp = 0;
  for (size_t i = 0; i < n; ++i) {
    tp += ranked_tp[i];
    recall[i] = static_cast<double>(tp) / num_gt;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
  }
  for (size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0;
  for (int r = 0; r <= 100; ++r) {
    const double thr = r / 100.0;
    const auto it = std::lower_bound(recall.begin(), recall.end(), thr);
    if (it != recall.end()) sum += precision[it - recall.begin()];
  }
  return sum / 101.0;
}

namespace {

struct RangedDet {
  double score;
  int64_t id;
  std::array<bool, kOksThresholds> matched;
  std::array<bool, kOksThresholds> ignored;
};

// Greedy matching for one image under one area range.
void match_image(const ImageCase& im, double lo, double hi, std::vector<RangedDet>& out, int64_t& num_gt) {
  const size_t g_count = im.gt_ids.size();
  std::vector<bool> gt_ignore(g_count);
  for (size_t g = 0; g < g_count; ++g) {
    gt_ignore[g] = im.gt_areas[g] < lo || im.gt_areas[g] > hi;
    num_gt += !gt_ignore[g];
  }
  // Non-ignored ground truths first, stable in the given order.
  std::vector<size_t> gorder(g_count);
  std::iota(gorder.begin(), gorder.end(), 0);
  std::stable_sort(gorder.begin(), gorder.end(), [&](size_t a, size_t b) { return gt_ignore[a] < gt_ignore[b]; });

  std::vector<size_t> dorder(im.det_ids.size());
  std::iota(dorder.begin(), dorder.end(), 0);
  std::sort(dorder.begin(), dorder.end(), [&](size_t a, size_t b) {
    if (im.det_scores[a] != im.det_scores[b]) return im.det_scores[a] > im.det_scores[b];
    return im.det_ids[a] < im.det_ids[b];
  });
  if (dorder.size() > static_cast<size_t>(kMaxDetsPerImage)) dorder.resize(kMaxDetsPerImage);

  std::vector<RangedDet> dets(dorder.size());
  for (size_t i = 0; i < dorder.size(); ++i) {
    dets[i].score = im.det_scores[dorder[i]];
    dets[i].id = im.det_ids[dorder[i]];
  }
  for (int t = 0; t < kOksThresholds; ++t) {
    std::vector<bool> gt_taken(g_count, false);
    for (size_t i = 0; i < dorder.size(); ++i) {
      const size_t d = dorder[i];
      double best_oks = std::min(oks_threshold(t), 1 - 1e-10);
      int best = -1;
      for (size_t g : gorder) {
        if (gt_taken[g]) continue;
        if (best >= 0 && !gt_ignore[best] && gt_ignore[g]) break;
        if (im.oks[d][g] < best_oks) continue;
        best_oks = im.oks[d][g];
        best = static_cast<int>(g);
      }
      if (best >= 0) {
        gt_taken[best] = true;
        dets[i].matched[t] = true;
        dets[i].ignored[t] = gt_ignore[best];
      } else {
        dets[i].matched[t] = false;
        dets[i].ignored[t] = im.det_areas[d] < lo || im.det_areas[d] > hi;
      }
    }
  }
  out.insert(out.end(), dets.begin(), dets.end());
}

struct RangeResult {
  std::array<double, kOksThresholds> ap;
  std::array<double, kOksThresholds> recall;
  bool defined = false;
};

RangeResult evaluate_range(const std::vector<ImageCase>& images, double lo, double hi) {
  std::vector<RangedDet> dets;
  int64_t num_gt = 0;
  for (const auto& im : images) match_image(im, lo, hi, dets, num_gt);
  RangeResult r;
  r.defined = num_gt > 0;
  std::stable_sort(dets.begin(), dets.end(), [](const RangedDet& a, const RangedDet& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  for (int t = 0; t < kOksThresholds; ++t) {
    std::vector<bool> ranked;
    int64_t tp = 0;
    for (const auto& d : dets) {
      if (d.ignored[t]) continue;
      ranked.push_back(d.matched[t]);
      tp += d.matched[t];
    }
    r.ap[t] = interpolated_ap(ranked, num_gt);
    r.recall[t] = num_gt > 0 ? static_cast<double>(tp) / num_gt : -1;
  }
  return r;
}

double mean_of(const std::array<double, kOksThresholds>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / kOksThresholds;
}

}  // namespace

ApSummary evaluate_cases(const std::vector<ImageCase>& images) {
  for (const auto& im : images) {
    if (im.gt_areas.size() != im.gt_ids.size() || im.det_scores.size() != im.det_ids.size() ||
        im.det_areas.size() != im.det_ids.size() || im.oks.size() != im.det_ids.size()) {
      throw std::invalid_argument("evaluate_cases: inconsistent image case");
    }
    for (const auto& row : im.oks) {
      if (row.size() != im.gt_ids.size()) throw std::invalid_argument("evaluate_cases: oks row size");
    }
  }
  constexpr double kInf = 1e10;
  const RangeResult all = evaluate_range(images, 0, kInf);
  ApSummary s;
  if (!all.defined) return s;
  s.per_threshold = all.ap;
  s.ap = mean_of(all.ap);
  s.ap50 = all.ap[0];
  s.ap75 = all.ap[5];
  s.ar = mean_of(all.recall);
  const RangeResult medium = evaluate_range(images, 32.0 * 32.0, 96.0 * 96.0);
  const RangeResult large = evaluate_range(images, 96.0 * 96.0, kInf);
  s.ap_m = medium.defined ? mean_of(medium.ap) : -1;
  s.ap_l = large.defined ? mean_of(large.ap) : -1;
  return s;
}

ApSummary average_precision(const std::vector<InstanceMatch>& matches) {
  std::vector<ImageCase> images;
  images.reserve(matches.size());
  for (const auto& m : matches) {
    ImageCase im;
    im.gt_ids = {m.id};
    im.gt_areas = {m.gt_area};
    if (m.has_prediction) {
      im.det_ids = {m.id};
      im.det_scores = {m.score};
      im.det_areas = {m.gt_area};
      im.oks = {{m.oks}};
    }
    images.push_back(std::move(im));
  }
  return evaluate_cases(images);
}

void PckCounts::add(const KeypointSet& pred, const KeypointSet& gt, double fraction, double norm_length) {
  if (!(norm_length > 0)) throw std::invalid_argument("pck: norm_length must be positive");
  if (pred.size() != gt.size()) throw std::invalid_argument("pck: keypoint counts differ");
  if (correct.empty()) {
    correct.assign(gt.size(), 0);
    labeled.assign(gt.size(), 0);
  }
  if (correct.size() != gt.size()) throw std::invalid_argument("pck: keypoint count changed");
  const double limit = fraction * norm_length;
  for (size_t k = 0; k < gt.size(); ++k) {
    if (gt.points[k].v <= 0) continue;
    ++labeled[k];
    const double d = std::hypot(pred.points[k].x - gt.points[k].x, pred.points[k].y - gt.points[k].y);
    correct[k] += d <= limit;
  }
}

std::vector<double> PckCounts::per_joint() const {
  std::vector<double> out;
  for (size_t k = 0; k < correct.size(); ++k) {
    out.push_back(labeled[k] > 0 ? static_cast<double>(correct[k]) / labeled[k] : -1);
  }
  return out;
}

double PckCounts::mean() const {
  const int64_t c = std::accumulate(correct.begin(), correct.end(), int64_t{0});
  const int64_t l = std::accumulate(labeled.begin(), labeled.end(), int64_t{0});
  return l > 0 ? static_cast<double>(c) / l : -1;
}

PckCounts pck(const KeypointSet& pred, const KeypointSet& gt, double fraction, double norm_length) {
  PckCounts c;
  c.add(pred, gt, fraction, norm_length);
  return c;
}

double keypoint_extent(const KeypointSet& gt) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  bool any = false;
  for (const auto& p : gt.points) {
    if (p.v <= 0) continue;
    any = true;
    x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  }
  return any ? std::max(x1 - x0, y1 - y0) : 0.0;
}

namespace {

double pct(double v) { return v < 0 ? -1.0 : 100.0 * v; }

}  // namespace

std::string EvalResult::to_json() const {
  nlohmann::ordered_json j;
  j["ap"] = pct(ap.ap);
  j["ap50"] = pct(ap.ap50);
  j["ap75"] = pct(ap.ap75);
  j["ap_m"] = pct(ap.ap_m);
  j["ap_l"] = pct(ap.ap_l);
  j["ar"] = pct(ap.ar);
  j["pck_mean"] = pct(pck.mean());
  auto per = nlohmann::ordered_json::array();
  for (double v : pck.per_joint()) per.push_back(pct(v));
  j["pck_per_joint"] = per;
  j["pck_fraction"] = pck_fraction;
  j["instances"] = instance_oks.size();
  return j.dump(2) + "\n";
}

std::string EvalResult::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "ap,ap50,ap75,ap_m,ap_l,ar,pck_mean,pck_per_joint\n";
  os << pct(ap.ap) << "," << pct(ap.ap50) << "," << pct(ap.ap75) << "," << pct(ap.ap_m) << ","
     << pct(ap.ap_l) << "," << pct(ap.ar) << "," << pct(pck.mean()) << ",";
  const auto per = pck.per_joint();
  for (size_t k = 0; k < per.size(); ++k) os << (k ? ";" : "") << pct(per[k]);
  os << "\n";
  return os.str();
}

}  // namespace ssmpose

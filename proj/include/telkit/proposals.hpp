#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "telkit/datamodel.hpp"
#include "telkit/metrics.hpp"

namespace telkit {

/// Window lengths in seconds used on real footage; synthetic runs scale them.
inline std::vector<double> default_window_lengths() {
  return {10, 25, 40, 55, 70, 85, 100, 130, 160, 190};
}

/// Multi-scale sliding windows. Each length L slides with stride
/// `stride_ratio * L` until a window reaches `duration`; that last window is
/// clamped to end at `duration`. A length longer than the video yields the
/// single window [0, duration]. Scores are zero.
inline std::vector<Proposal> sliding_windows(double duration,
                                             std::span<const double> lengths,
                                             double stride_ratio = 0.75,
                                             double scale = 1.0) {
  std::vector<Proposal> out;
  if (!(duration > 0.0)) return out;
  for (double base : lengths) {
    const double len = base * scale;
    if (!(len > 0.0)) continue;
    if (len >= duration) {
      out.push_back({{0.0, duration}, 0.0});
      continue;
    }
    const double stride = stride_ratio * len;
    for (std::size_t k = 0;; ++k) {
      const double start = static_cast<double>(k) * stride;
      const double end = start + len;
      if (end >= duration) {
        out.push_back({{start, duration}, 0.0});
        break;
      }
      out.push_back({{start, end}, 0.0});
    }
  }
  return out;
}

inline std::vector<Proposal> sliding_windows(double duration) {
  auto lengths = default_window_lengths();
  return sliding_windows(duration, lengths);
}

/// Greedy non-maximum suppression over scored intervals. Items are visited by
/// descending score (ties: earlier start, then input order) and kept iff their
/// IoU with every kept item is below `threshold`. Returns kept indices in
/// visiting order.
template <class Scored>
std::vector<std::size_t> nms_indices(std::span<const Scored> items,
                                     double threshold) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (items[a].score != items[b].score) {
                       return items[a].score > items[b].score;
                     }
                     return items[a].interval.start < items[b].interval.start;
                   });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool keep = true;
    for (std::size_t k : kept) {
      if (temporal_iou(items[i].interval, items[k].interval) >= threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(i);
  }
  return kept;
}

template <class Scored>
std::vector<Scored> nms(std::span<const Scored> items, double threshold) {
  std::vector<Scored> out;
  for (std::size_t i : nms_indices(items, threshold)) out.push_back(items[i]);
  return out;
}

template <class Scored>
std::vector<Scored> nms(const std::vector<Scored>& items, double threshold) {
  return nms(std::span<const Scored>(items), threshold);
}

/// Class-wise NMS for detections: suppression only acts within a label.
inline std::vector<Detection> nms_per_class(std::span<const Detection> dets,
                                            double threshold) {
  int max_label = -1;
  for (const auto& d : dets) max_label = std::max(max_label, d.label);
  std::vector<Detection> out;
  for (int c = 0; c <= max_label; ++c) {
    std::vector<Detection> cls;
    for (const auto& d : dets) {
      if (d.label == c) cls.push_back(d);
    }
    auto kept = nms(cls, threshold);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  std::vector<Detection> sorted;
  for (std::size_t i : score_order<Detection>(out)) sorted.push_back(out[i]);
  return sorted;
}

/// Scores candidate windows in one batch.
using ProposalScorer =
    std::function<std::vector<double>(std::span<const Proposal>)>;

struct RankOptions {
  double nms_threshold = 0.8;
  std::size_t top_k = 100;
};

/// Scores every window, applies class-agnostic NMS, and keeps the `top_k`
/// best survivors in descending score order.
inline std::vector<Proposal> rank_and_filter(std::span<const Proposal> windows,
                                             const ProposalScorer& scorer,
                                             RankOptions opt = {}) {
  std::vector<Proposal> scored(windows.begin(), windows.end());
  if (scored.empty()) return scored;
  auto scores = scorer(scored);
  for (std::size_t i = 0; i < scored.size(); ++i) scored[i].score = scores[i];
  auto kept = nms(scored, opt.nms_threshold);
  if (kept.size() > opt.top_k) kept.resize(opt.top_k);
  return kept;
}

}  // namespace telkit

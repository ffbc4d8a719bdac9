#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <ranges>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "telkit/datamodel.hpp"

namespace telkit {

inline double temporal_iou(const TimeInterval& a, const TimeInterval& b) {
  const double inter =
      std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = (a.end - a.start) + (b.end - b.start) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// The IoU grid 0.3:0.7:0.1.
inline std::vector<double> default_iou_grid() {
  return {0.3, 0.4, 0.5, 0.6, 0.7};
}

/// Descending-score order. Ties go to the earlier start, then the longer
/// interval, then the earlier input position.
template <class Scored>
std::vector<std::size_t> score_order(std::span<const Scored> items) {
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = items[a];
    const auto& y = items[b];
    if (x.score != y.score) return x.score > y.score;
    if (x.interval.start != y.interval.start) {
      return x.interval.start < y.interval.start;
    }
    return x.interval.length() > y.interval.length();
  });
  return idx;
}

struct MatchRecord {
  std::size_t detection = 0;
  std::optional<std::size_t> instance;
  /// IoU with the claimed instance for a TP; otherwise the best IoU among the
  /// instances that were still available.
  double iou = 0.0;
  bool is_tp = false;
  double threshold = 0.0;
  double score = 0.0;
};

/// Greedy matching within one video. Detections are visited in score order;
/// each claims the still-unclaimed instance (of its own label when
/// `class_aware`) with the largest IoU, and is a TP iff that IoU reaches
/// `alpha`. Records come back in visiting order.
inline std::vector<MatchRecord> match_detections(std::span<const Detection> dets,
                                                 std::span<const Instance> gts,
                                                 double alpha,
                                                 bool class_aware = true) {
  std::vector<MatchRecord> out;
  out.reserve(dets.size());
  std::vector<bool> claimed(gts.size(), false);
  for (std::size_t di : score_order(dets)) {
    const auto& d = dets[di];
    MatchRecord rec{di, std::nullopt, 0.0, false, alpha, d.score};
    std::optional<std::size_t> best;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (claimed[g] || (class_aware && gts[g].label != d.label)) continue;
      const double iou = temporal_iou(d.interval, gts[g].interval);
      if (iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    if (best) {
      rec.iou = best_iou;
      if (best_iou >= alpha) {
        rec.is_tp = true;
        rec.instance = best;
        claimed[*best] = true;
      }
    }
    out.push_back(rec);
  }
  return out;
}

/// All-point interpolated AP of a ranked TP/FP sequence: the area under the
/// monotone precision envelope of the PR curve.
template <std::ranges::sized_range Flags>
double average_precision_ranked(const Flags& is_tp, std::size_t num_gt) {
  const std::size_t n = std::ranges::size(is_tp);
  if (num_gt == 0 || n == 0) return 0.0;
  // Extended precision so that short rankings land on the correctly rounded
  // rational value (e.g. exactly 5/6 rather than one ulp below).
  std::vector<long double> precision(n);
  std::vector<bool> hits(n);
  std::size_t tp = 0;
  std::size_t i = 0;
  for (bool hit : is_tp) {
    if (hit) ++tp;
    hits[i] = hit;
    precision[i] = static_cast<long double>(tp) / static_cast<long double>(i + 1);
    ++i;
  }
  for (i = n - 1; i-- > 0;) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  // Each hit raises recall by 1/num_gt.
  long double sum = 0.0L;
  for (i = 0; i < n; ++i) {
    if (hits[i]) sum += precision[i];
  }
  return static_cast<double>(sum / static_cast<long double>(num_gt));
}

/// AP of match records for one category (possibly pooled across videos).
/// Records are ranked by score; equal scores keep their given order.
inline double average_precision(std::span<const MatchRecord> records,
                                std::size_t num_gt) {
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return records[a].score > records[b].score;
  });
  std::vector<bool> tp(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) tp[i] = records[idx[i]].is_tp;
  return average_precision_ranked(tp, num_gt);
}

// ---------------------------------------------------------------------------
// Dataset-level evaluation

/// Shot-count strata: small < lo <= medium < hi <= large.
struct ShotBounds {
  int lo = 10;
  int hi = 20;
};

enum class ShotGroup { Small = 0, Medium = 1, Large = 2 };

inline ShotGroup shot_group(int num_shots, ShotBounds b = {}) {
  if (num_shots < b.lo) return ShotGroup::Small;
  if (num_shots < b.hi) return ShotGroup::Medium;
  return ShotGroup::Large;
}

inline const char* to_string(ShotGroup g) {
  switch (g) {
    case ShotGroup::Small: return "small";
    case ShotGroup::Medium: return "medium";
    case ShotGroup::Large: return "large";
  }
  return "?";
}

namespace detail {

/// One detection's outcome after per-video matching, with the keys that fix
/// its rank in a dataset-wide PR curve.
struct Outcome {
  double score;
  double start;
  double length;
  std::size_t video;
  std::size_t rank;
  int label;
  bool tp;
  int matched_group;  // shot group of the claimed instance, -1 for an FP
};

inline bool outcome_before(const Outcome& a, const Outcome& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start != b.start) return a.start < b.start;
  if (a.length != b.length) return a.length > b.length;
  if (a.video != b.video) return a.video < b.video;
  return a.rank < b.rank;
}

inline void check_detections(const DetectionMap& dets, const Dataset& ds) {
  for (const auto& [id, list] : dets) {
    if (!ds.find_video(id)) {
      throw ValidationError("detections reference unknown video '" + id + "'");
    }
    for (const auto& d : list) {
      if (d.label < 0 || d.label >= ds.num_categories()) {
        throw ValidationError("detection label out of range in video '" + id +
                              "'");
      }
    }
  }
}

inline std::vector<Outcome> match_dataset(const DetectionMap& dets,
                                          const Dataset& ds, double alpha,
                                          ShotBounds bounds) {
  std::vector<Outcome> out;
  for (std::size_t vi = 0; vi < ds.videos.size(); ++vi) {
    const auto& video = ds.videos[vi];
    auto it = dets.find(video.id);
    if (it == dets.end()) continue;
    const auto& list = it->second;
    auto records = match_detections(list, video.instances, alpha, true);
    for (std::size_t r = 0; r < records.size(); ++r) {
      const auto& rec = records[r];
      const auto& d = list[rec.detection];
      int group = -1;
      if (rec.is_tp) {
        group = static_cast<int>(
            shot_group(video.instances[*rec.instance].num_shots, bounds));
      }
      out.push_back({d.score, d.interval.start, d.interval.length(), vi, r,
                     d.label, rec.is_tp, group});
    }
  }
  std::sort(out.begin(), out.end(), outcome_before);
  return out;
}

/// Per-category AP over `outcomes`; `group < 0` means all instances, else
/// only that group's instances are positives and TPs on other groups' instances
/// are left out of the curve. Categories without positives get nullopt.
inline std::vector<std::optional<double>> category_aps(
    const std::vector<Outcome>& outcomes, const Dataset& ds, int group,
    ShotBounds bounds) {
  const int C = ds.num_categories();
  std::vector<std::size_t> num_gt(C, 0);
  for (const auto& v : ds.videos) {
    for (const auto& inst : v.instances) {
      if (group < 0 ||
          static_cast<int>(shot_group(inst.num_shots, bounds)) == group) {
        ++num_gt[inst.label];
      }
    }
  }
  std::vector<std::vector<bool>> seq(C);
  for (const auto& o : outcomes) {
    if (group >= 0 && o.tp && o.matched_group != group) continue;
    seq[o.label].push_back(o.tp);
  }
  std::vector<std::optional<double>> aps(C);
  for (int c = 0; c < C; ++c) {
    if (num_gt[c] == 0) continue;
    aps[c] = average_precision_ranked(seq[c], num_gt[c]);
  }
  return aps;
}

inline std::optional<double> mean_of(
    const std::vector<std::optional<double>>& aps) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& a : aps) {
    if (a) {
      sum += *a;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

}  // namespace detail

/// mAP at one IoU threshold: mean AP over categories that have ground truth.
inline double mean_average_precision(const DetectionMap& dets, const Dataset& ds,
                                     double alpha) {
  detail::check_detections(dets, ds);
  auto outcomes = detail::match_dataset(dets, ds, alpha, {});
  return detail::mean_of(detail::category_aps(outcomes, ds, -1, {}))
      .value_or(0.0);
}

/// Per-category AP at one threshold; nullopt for categories without ground
/// truth.
inline std::vector<std::optional<double>> per_category_ap(
    const DetectionMap& dets, const Dataset& ds, double alpha) {
  detail::check_detections(dets, ds);
  auto outcomes = detail::match_dataset(dets, ds, alpha, {});
  return detail::category_aps(outcomes, ds, -1, {});
}

struct StratifiedMap {
  std::array<double, 3> map{};
  std::array<bool, 3> empty{};
  std::array<std::size_t, 3> instances{};

  double small() const { return map[0]; }
  double medium() const { return map[1]; }
  double large() const { return map[2]; }
};

/// Matches once against the full ground truth, then scores each shot group
/// with that group's instances as the only positives. FPs count against every
/// group; TPs on another group's instance are excluded from the group's curve.
/// An empty group reports 0 and sets its `empty` flag.
inline StratifiedMap stratified_map(const DetectionMap& dets, const Dataset& ds,
                                    double alpha, ShotBounds bounds = {}) {
  detail::check_detections(dets, ds);
  StratifiedMap out;
  for (const auto& v : ds.videos) {
    for (const auto& inst : v.instances) {
      ++out.instances[static_cast<int>(shot_group(inst.num_shots, bounds))];
    }
  }
  auto outcomes = detail::match_dataset(dets, ds, alpha, bounds);
  for (int g = 0; g < 3; ++g) {
    out.empty[g] = out.instances[g] == 0;
    out.map[g] = detail::mean_of(detail::category_aps(outcomes, ds, g, bounds))
                     .value_or(0.0);
  }
  return out;
}

struct EvalReport {
  std::vector<std::string> categories;
  std::vector<double> alphas;
  /// [alpha][category]; nullopt where the category has no ground truth.
  std::vector<std::vector<std::optional<double>>> ap;
  std::vector<double> map;
  double average_map = 0.0;
  std::vector<StratifiedMap> stratified;  // one per alpha
  /// Shot-group mAPs averaged over the alpha grid.
  std::array<double, 3> group_average_map{};
  std::array<bool, 3> group_empty{};
  std::array<std::size_t, 3> group_instances{};

  double map_at(double alpha) const {
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      if (std::abs(alphas[i] - alpha) < 1e-9) return map[i];
    }
    throw std::out_of_range("alpha not in evaluation grid");
  }
};

inline EvalReport evaluate(const DetectionMap& dets, const Dataset& ds,
                           std::span<const double> alphas,
                           ShotBounds bounds = {}) {
  detail::check_detections(dets, ds);
  EvalReport rep;
  rep.categories = ds.categories;
  rep.alphas.assign(alphas.begin(), alphas.end());
  for (double alpha : alphas) {
    auto outcomes = detail::match_dataset(dets, ds, alpha, bounds);
    auto aps = detail::category_aps(outcomes, ds, -1, bounds);
    rep.map.push_back(detail::mean_of(aps).value_or(0.0));
    rep.ap.push_back(std::move(aps));
    rep.stratified.push_back(stratified_map(dets, ds, alpha, bounds));
  }
  if (!rep.map.empty()) {
    rep.average_map = std::accumulate(rep.map.begin(), rep.map.end(), 0.0) /
                      static_cast<double>(rep.map.size());
    for (int g = 0; g < 3; ++g) {
      double s = 0.0;
      for (const auto& st : rep.stratified) s += st.map[g];
      rep.group_average_map[g] = s / static_cast<double>(rep.stratified.size());
      rep.group_empty[g] = rep.stratified.front().empty[g];
      rep.group_instances[g] = rep.stratified.front().instances[g];
    }
  }
  return rep;
}

inline EvalReport evaluate(const DetectionMap& dets, const Dataset& ds) {
  auto grid = default_iou_grid();
  return evaluate(dets, ds, grid);
}

inline json to_json(const EvalReport& rep) {
  json per_alpha = json::array();
  for (std::size_t i = 0; i < rep.alphas.size(); ++i) {
    json aps = json::object();
    for (std::size_t c = 0; c < rep.categories.size(); ++c) {
      aps[rep.categories[c]] =
          rep.ap[i][c] ? json(*rep.ap[i][c]) : json(nullptr);
    }
    const auto& st = rep.stratified[i];
    per_alpha.push_back({{"alpha", rep.alphas[i]},
                         {"map", rep.map[i]},
                         {"map_small", st.map[0]},
                         {"map_medium", st.map[1]},
                         {"map_large", st.map[2]},
                         {"ap", aps}});
  }
  json groups = json::object();
  for (int g = 0; g < 3; ++g) {
    groups[to_string(static_cast<ShotGroup>(g))] = {
        {"map", rep.group_average_map[g]},
        {"instances", rep.group_instances[g]},
        {"empty", rep.group_empty[g]}};
  }
  return {{"average_map", rep.average_map},
          {"map_small", rep.group_average_map[0]},
          {"map_medium", rep.group_average_map[1]},
          {"map_large", rep.group_average_map[2]},
          {"groups", groups},
          {"per_alpha", per_alpha}};
}

/// Plain-text table: one row per IoU threshold, then the averages.
inline std::string to_table(const EvalReport& rep) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  auto cell = [&](const std::string& s, int w) {
    os << s << std::string(w > static_cast<int>(s.size()) ? w - s.size() : 1,
                           ' ');
  };
  auto num = [](double v) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(4);
    s << v;
    return s.str();
  };
  cell("alpha", 8);
  cell("mAP", 10);
  cell("small", 10);
  cell("medium", 10);
  cell("large", 10);
  os << "\n";
  for (std::size_t i = 0; i < rep.alphas.size(); ++i) {
    std::ostringstream a;
    a.precision(2);
    a.setf(std::ios::fixed);
    a << rep.alphas[i];
    cell(a.str(), 8);
    cell(num(rep.map[i]), 10);
    for (int g = 0; g < 3; ++g) cell(num(rep.stratified[i].map[g]), 10);
    os << "\n";
  }
  cell("avg", 8);
  cell(num(rep.average_map), 10);
  for (int g = 0; g < 3; ++g) {
    cell(num(rep.group_average_map[g]) + (rep.group_empty[g] ? "*" : ""), 10);
  }
  os << "\n";
  if (rep.group_empty[0] || rep.group_empty[1] || rep.group_empty[2]) {
    os << "* empty shot group\n";
  }
  return os.str();
}

}  // namespace telkit

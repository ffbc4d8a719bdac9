#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "telkit/datamodel.hpp"
#include "telkit/metrics.hpp"

namespace telkit {

/// Outcome of one prediction: a true positive or one of five false-positive
/// kinds, keyed on gIoU (best IoU against any same-video instance) and on
/// whether the label agrees with that best instance.
enum class PredictionType {
  TruePositive = 0,
  DoubleDetection,
  WrongLabel,
  Localization,
  Confusion,
  Background,
};

inline constexpr std::size_t kNumPredictionTypes = 6;

inline constexpr std::array<PredictionType, 5> kFalsePositiveTypes = {
    PredictionType::DoubleDetection, PredictionType::WrongLabel,
    PredictionType::Localization, PredictionType::Confusion,
    PredictionType::Background};

inline const char* to_string(PredictionType t) {
  switch (t) {
    case PredictionType::TruePositive: return "true_positive";
    case PredictionType::DoubleDetection: return "double_detection";
    case PredictionType::WrongLabel: return "wrong_label";
    case PredictionType::Localization: return "localization";
    case PredictionType::Confusion: return "confusion";
    case PredictionType::Background: return "background";
  }
  return "?";
}

/// gIoU below this is a background error.
inline constexpr double kBackgroundIoU = 0.1;

struct Classification {
  PredictionType type = PredictionType::Background;
  double giou = 0.0;
  /// Instance with the largest IoU (label-agnostic); ties prefer the
  /// prediction's own label, then the lower index.
  std::optional<std::size_t> best_instance;
  /// Instance claimed when `type` is TruePositive.
  std::optional<std::size_t> claimed_instance;
};

/// Classifies one prediction against `gts`, given which instances were claimed
/// by higher-scoring predictions. A true positive marks its instance claimed.
/// Feeding a video's predictions in score order reproduces match_detections.
inline Classification classify_prediction(const Detection& det,
                                          std::span<const Instance> gts,
                                          std::vector<bool>& claimed,
                                          double alpha) {
  Classification out;
  std::optional<std::size_t> claim;
  double claim_iou = -1.0;
  double best_iou = -1.0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const double iou = temporal_iou(det.interval, gts[g].interval);
    const bool same = gts[g].label == det.label;
    if (iou > best_iou ||
        (iou == best_iou && same && out.best_instance &&
         gts[*out.best_instance].label != det.label)) {
      best_iou = iou;
      out.best_instance = g;
    }
    if (same && !claimed[g] && iou > claim_iou) {
      claim_iou = iou;
      claim = g;
    }
  }
  out.giou = std::max(best_iou, 0.0);
  if (claim && claim_iou >= alpha) {
    claimed[*claim] = true;
    out.type = PredictionType::TruePositive;
    out.claimed_instance = claim;
    return out;
  }
  const bool correct =
      out.best_instance && gts[*out.best_instance].label == det.label;
  if (out.giou >= alpha) {
    out.type = correct ? PredictionType::DoubleDetection
                       : PredictionType::WrongLabel;
  } else if (out.giou >= kBackgroundIoU) {
    out.type =
        correct ? PredictionType::Localization : PredictionType::Confusion;
  } else {
    out.type = PredictionType::Background;
  }
  return out;
}

/// Classifies every prediction of one video. Result is indexed like `dets`.
inline std::vector<Classification> classify_video(
    std::span<const Detection> dets, std::span<const Instance> gts,
    double alpha) {
  std::vector<Classification> out(dets.size());
  std::vector<bool> claimed(gts.size(), false);
  for (std::size_t i : score_order(dets)) {
    out[i] = classify_prediction(dets[i], gts, claimed, alpha);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Error impact

enum class ResolveMode {
  /// Wrong labels are relabeled and localization errors snapped to their
  /// instance; other kinds are deleted.
  Fix,
  /// Every prediction of the resolved kind is deleted.
  DeleteOnly,
};

/// Predictions with the given error kind resolved at threshold `alpha`.
/// A fixed prediction that still fails to be a TP is dropped, and so is a
/// former TP whose instance a fixed prediction took over; resolving one kind
/// of error therefore never introduces new false positives.
inline DetectionMap resolve_errors(const DetectionMap& dets, const Dataset& ds,
                                   PredictionType type, double alpha,
                                   ResolveMode mode = ResolveMode::Fix) {
  DetectionMap out;
  for (const auto& video : ds.videos) {
    auto it = dets.find(video.id);
    if (it == dets.end()) continue;
    const auto& list = it->second;
    auto cls = classify_video(list, video.instances, alpha);
    std::vector<Detection> kept;
    std::vector<bool> fixed;
    std::vector<bool> was_tp;
    for (std::size_t i = 0; i < list.size(); ++i) {
      Detection d = list[i];
      if (cls[i].type != type || type == PredictionType::TruePositive) {
        kept.push_back(d);
        fixed.push_back(false);
        was_tp.push_back(cls[i].type == PredictionType::TruePositive);
        continue;
      }
      if (mode == ResolveMode::DeleteOnly) continue;
      const auto& best = video.instances[*cls[i].best_instance];
      if (type == PredictionType::WrongLabel) {
        d.label = best.label;
      } else if (type == PredictionType::Localization) {
        d.interval = best.interval;
      } else {
        continue;
      }
      kept.push_back(d);
      fixed.push_back(true);
      was_tp.push_back(false);
    }
    auto after = classify_video(kept, video.instances, alpha);
    auto& dst = out[video.id];
    for (std::size_t i = 0; i < kept.size(); ++i) {
      if ((fixed[i] || was_tp[i]) &&
          after[i].type != PredictionType::TruePositive) {
        continue;
      }
      dst.push_back(kept[i]);
    }
  }
  return out;
}

struct ErrorImpact {
  PredictionType type = PredictionType::Background;
  std::vector<double> per_alpha;  // delta mAP at each alpha
  double average = 0.0;           // delta average mAP
};

/// Gain in average mAP over `alphas` from resolving every error of `type`.
inline ErrorImpact error_impact(const DetectionMap& dets, const Dataset& ds,
                                PredictionType type,
                                std::span<const double> alphas,
                                ResolveMode mode = ResolveMode::Fix) {
  ErrorImpact out;
  out.type = type;
  double sum = 0.0;
  for (double alpha : alphas) {
    const double base = mean_average_precision(dets, ds, alpha);
    const double after = mean_average_precision(
        resolve_errors(dets, ds, type, alpha, mode), ds, alpha);
    out.per_alpha.push_back(after - base);
    sum += after - base;
  }
  if (!alphas.empty()) out.average = sum / static_cast<double>(alphas.size());
  return out;
}

// ---------------------------------------------------------------------------
// Error distribution

struct BudgetHistogram {
  std::size_t budget = 0;  // k: top k*G predictions per video
  std::array<std::size_t, kNumPredictionTypes> counts{};

  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  std::size_t false_positives() const { return total() - counts[0]; }
  double fraction(PredictionType t) const {
    const auto n = total();
    return n == 0 ? 0.0
                  : static_cast<double>(counts[static_cast<int>(t)]) /
                        static_cast<double>(n);
  }
};

struct ErrorDistribution {
  double alpha = 0.5;
  std::vector<BudgetHistogram> budgets;
  /// Videos holding predictions but no ground truth; left out of every budget.
  std::vector<std::string> excluded_videos;
};

inline ErrorDistribution error_distribution(const DetectionMap& dets,
                                            const Dataset& ds, double alpha,
                                            std::size_t max_budget = 10) {
  ErrorDistribution out;
  out.alpha = alpha;
  for (std::size_t k = 1; k <= max_budget; ++k) out.budgets.push_back({k, {}});
  for (const auto& [id, list] : dets) {
    const auto* video = ds.find_video(id);
    if (!video) throw ValidationError("unknown video '" + id + "'");
    if (video->instances.empty()) {
      if (!list.empty()) out.excluded_videos.push_back(id);
      continue;
    }
    const auto cls = classify_video(list, video->instances, alpha);
    const auto order = score_order<Detection>(list);
    const std::size_t g = video->instances.size();
    for (auto& h : out.budgets) {
      const std::size_t n = std::min(order.size(), h.budget * g);
      for (std::size_t r = 0; r < n; ++r) {
        ++h.counts[static_cast<int>(cls[order[r]].type)];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confusion matrix

struct ConfusionMatrix {
  std::size_t size = 0;
  std::vector<std::size_t> counts;  // [true label][predicted label]

  std::size_t at(std::size_t truth, std::size_t pred) const {
    return counts[truth * size + pred];
  }
  std::vector<double> row_normalized() const {
    std::vector<double> out(counts.size(), 0.0);
    for (std::size_t i = 0; i < size; ++i) {
      std::size_t row = 0;
      for (std::size_t j = 0; j < size; ++j) row += at(i, j);
      if (row == 0) continue;
      for (std::size_t j = 0; j < size; ++j) {
        out[i * size + j] =
            static_cast<double>(at(i, j)) / static_cast<double>(row);
      }
    }
    return out;
  }
};

/// Counts (label of best-IoU instance, predicted label) over predictions whose
/// gIoU reaches `min_giou`.
inline ConfusionMatrix confusion_matrix(const DetectionMap& dets,
                                        const Dataset& ds,
                                        double min_giou = kBackgroundIoU) {
  ConfusionMatrix cm;
  cm.size = static_cast<std::size_t>(ds.num_categories());
  cm.counts.assign(cm.size * cm.size, 0);
  for (const auto& [id, list] : dets) {
    const auto* video = ds.find_video(id);
    if (!video) throw ValidationError("unknown video '" + id + "'");
    // Claim state is irrelevant here; any alpha gives the same gIoU argmax.
    const auto cls = classify_video(list, video->instances, 1.0);
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (!cls[i].best_instance || cls[i].giou < min_giou) continue;
      const auto truth = video->instances[*cls[i].best_instance].label;
      ++cm.counts[static_cast<std::size_t>(truth) * cm.size +
                  static_cast<std::size_t>(list[i].label)];
    }
  }
  return cm;
}

// ---------------------------------------------------------------------------
// Report

struct DiagnosisReport {
  std::vector<std::string> categories;
  std::vector<double> alphas;
  ErrorDistribution distribution;
  std::vector<ErrorImpact> impacts;  // one per false-positive kind
  ConfusionMatrix confusion;
};

struct DiagnosisOptions {
  std::vector<double> alphas = default_iou_grid();
  double distribution_alpha = 0.5;
  std::size_t max_budget = 10;
  ResolveMode mode = ResolveMode::Fix;
};

inline DiagnosisReport diagnose(const DetectionMap& dets, const Dataset& ds,
                                const DiagnosisOptions& opt = {}) {
  detail::check_detections(dets, ds);
  DiagnosisReport rep;
  rep.categories = ds.categories;
  rep.alphas = opt.alphas;
  rep.distribution =
      error_distribution(dets, ds, opt.distribution_alpha, opt.max_budget);
  for (auto t : kFalsePositiveTypes) {
    rep.impacts.push_back(error_impact(dets, ds, t, opt.alphas, opt.mode));
  }
  rep.confusion = confusion_matrix(dets, ds);
  return rep;
}

inline json to_json(const DiagnosisReport& rep) {
  json budgets = json::array();
  for (const auto& h : rep.distribution.budgets) {
    json counts = json::object();
    json fractions = json::object();
    for (std::size_t t = 0; t < kNumPredictionTypes; ++t) {
      const auto type = static_cast<PredictionType>(t);
      counts[to_string(type)] = h.counts[t];
      fractions[to_string(type)] = h.fraction(type);
    }
    budgets.push_back({{"k", h.budget},
                       {"total", h.total()},
                       {"false_positives", h.false_positives()},
                       {"counts", counts},
                       {"fractions", fractions}});
  }
  json impacts = json::object();
  for (const auto& imp : rep.impacts) {
    impacts[to_string(imp.type)] = {{"average_map_gain", imp.average},
                                    {"per_alpha", imp.per_alpha}};
  }
  json rows = json::array();
  json norm_rows = json::array();
  const auto norm = rep.confusion.row_normalized();
  for (std::size_t i = 0; i < rep.confusion.size; ++i) {
    json r = json::array();
    json nr = json::array();
    for (std::size_t j = 0; j < rep.confusion.size; ++j) {
      r.push_back(rep.confusion.at(i, j));
      nr.push_back(norm[i * rep.confusion.size + j]);
    }
    rows.push_back(r);
    norm_rows.push_back(nr);
  }
  return {{"alphas", rep.alphas},
          {"distribution",
           {{"alpha", rep.distribution.alpha},
            {"budgets", budgets},
            {"excluded_videos", rep.distribution.excluded_videos}}},
          {"impact", impacts},
          {"confusion",
           {{"categories", rep.categories},
            {"counts", rows},
            {"row_normalized", norm_rows}}}};
}

/// Error distribution as CSV: one row per budget, one column per type.
inline std::string distribution_csv(const ErrorDistribution& dist) {
  std::ostringstream os;
  os << "k";
  for (std::size_t t = 0; t < kNumPredictionTypes; ++t) {
    os << "," << to_string(static_cast<PredictionType>(t));
  }
  os << "\n";
  for (const auto& h : dist.budgets) {
    os << h.budget;
    for (std::size_t t = 0; t < kNumPredictionTypes; ++t) {
      os << "," << h.fraction(static_cast<PredictionType>(t));
    }
    os << "\n";
  }
  return os.str();
}

inline std::string confusion_csv(const ConfusionMatrix& cm,
                                 const std::vector<std::string>& categories) {
  std::ostringstream os;
  os << "truth\\pred";
  for (const auto& c : categories) os << "," << c;
  os << "\n";
  for (std::size_t i = 0; i < cm.size; ++i) {
    os << categories[i];
    for (std::size_t j = 0; j < cm.size; ++j) os << "," << cm.at(i, j);
    os << "\n";
  }
  return os.str();
}

/// Stacked-bar SVG of the error distribution (one bar per budget).
inline std::string distribution_svg(const ErrorDistribution& dist) {
  static constexpr const char* kColors[kNumPredictionTypes] = {
      "#4daf4a", "#984ea3", "#ff7f00", "#377eb8", "#e41a1c", "#999999"};
  const double bar = 40.0, gap = 12.0, height = 300.0, left = 40.0;
  const double width = left + dist.budgets.size() * (bar + gap) + 200.0;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height + 40 << "\">\n";
  for (std::size_t b = 0; b < dist.budgets.size(); ++b) {
    const auto& h = dist.budgets[b];
    const double x = left + b * (bar + gap);
    double y = height;
    for (std::size_t t = 0; t < kNumPredictionTypes; ++t) {
      const double frac = h.fraction(static_cast<PredictionType>(t));
      const double hgt = frac * (height - 10.0);
      y -= hgt;
      os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar
         << "\" height=\"" << hgt << "\" fill=\"" << kColors[t] << "\"/>\n";
    }
    os << "<text x=\"" << x + bar / 2 << "\" y=\"" << height + 20
       << "\" font-size=\"12\" text-anchor=\"middle\">" << h.budget
       << "G</text>\n";
  }
  const double lx = left + dist.budgets.size() * (bar + gap) + 10.0;
  for (std::size_t t = 0; t < kNumPredictionTypes; ++t) {
    os << "<rect x=\"" << lx << "\" y=\"" << 20 + t * 20
       << "\" width=\"12\" height=\"12\" fill=\"" << kColors[t] << "\"/>\n"
       << "<text x=\"" << lx + 18 << "\" y=\"" << 31 + t * 20
       << "\" font-size=\"12\">" << to_string(static_cast<PredictionType>(t))
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace telkit

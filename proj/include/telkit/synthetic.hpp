#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "telkit/datamodel.hpp"

namespace telkit {

/// Parameters of the multi-shot synthetic feature generator.
///
/// Every instance is a run of shots. A snippet inside an instance is its
/// category prototype plus the offset of the shot it falls in plus
/// per-snippet noise; background snippets use a background prototype with
/// the same shot structure.
struct SyntheticSpec {
  std::size_t train_videos = 60;
  std::size_t test_videos = 30;
  std::size_t num_categories = 5;
  std::size_t feature_dim = 32;
  double video_duration = 120.0;
  double snippet_interval = 0.8;

  /// Norm of each category / background prototype. Prototypes are random
  /// directions, so categories stay separable while a single shot offset of
  /// norm `variation` can still mask its category.
  double prototype_norm = 0.4;
  /// Expected norm of a per-shot offset.
  double variation = 0.5;
  /// Expected norm of per-snippet noise.
  double noise = 0.04;

  /// Shares of instances with fewer than 10, 10 to 19, and 20 or more shots.
  std::array<double, 3> group_shares = {0.398, 0.275, 0.327};
  /// Inclusive shot-count ranges sampled uniformly within each group.
  std::array<std::array<int, 2>, 3> group_shots = {{{2, 9}, {10, 19}, {20, 58}}};
  /// Shot durations in seconds, uniform.
  double shot_min = 0.6;
  double shot_max = 1.4;
  double background_shot_min = 1.0;
  double background_shot_max = 4.0;

  /// Mean instances per video (1 + Poisson(mean - 1)); instances that do not
  /// fit in the video are dropped.
  double instances_per_video = 3.0;
  /// Probability that an instance starts inside the previous one.
  double overlap_probability = 0.0;

  void validate() const {
    if (num_categories < 1 || feature_dim < 1) {
      throw ValidationError("synthetic: categories and feature_dim must be >= 1");
    }
    if (!(video_duration > 0.0 && snippet_interval > 0.0)) {
      throw ValidationError("synthetic: duration and snippet interval must be positive");
    }
    if (!(variation >= 0.0 && noise >= 0.0 && prototype_norm > 0.0)) {
      throw ValidationError("synthetic: variation and noise must be >= 0");
    }
    double total = 0.0;
    for (int g = 0; g < 3; ++g) {
      if (!(group_shares[g] >= 0.0)) throw ValidationError("synthetic: negative group share");
      total += group_shares[g];
      if (group_shots[g][0] < 1 || group_shots[g][1] < group_shots[g][0]) {
        throw ValidationError("synthetic: invalid shot range");
      }
    }
    if (!(total > 0.0)) throw ValidationError("synthetic: group shares sum to zero");
    if (!(shot_min > 0.0 && shot_max >= shot_min && background_shot_min > 0.0 &&
          background_shot_max >= background_shot_min)) {
      throw ValidationError("synthetic: invalid shot durations");
    }
    if (!(instances_per_video >= 1.0)) {
      throw ValidationError("synthetic: instances_per_video must be >= 1");
    }
    if (!(overlap_probability >= 0.0 && overlap_probability <= 1.0)) {
      throw ValidationError("synthetic: overlap_probability must lie in [0, 1]");
    }
  }
};

inline json to_json(const SyntheticSpec& s) {
  json shots = json::array();
  for (const auto& r : s.group_shots) shots.push_back({r[0], r[1]});
  return {{"train_videos", s.train_videos},
          {"test_videos", s.test_videos},
          {"num_categories", s.num_categories},
          {"feature_dim", s.feature_dim},
          {"video_duration", s.video_duration},
          {"snippet_interval", s.snippet_interval},
          {"prototype_norm", s.prototype_norm},
          {"variation", s.variation},
          {"noise", s.noise},
          {"group_shares", s.group_shares},
          {"group_shots", shots},
          {"shot_min", s.shot_min},
          {"shot_max", s.shot_max},
          {"background_shot_min", s.background_shot_min},
          {"background_shot_max", s.background_shot_max},
          {"instances_per_video", s.instances_per_video},
          {"overlap_probability", s.overlap_probability}};
}

inline void update_from_json(SyntheticSpec& s, const json& j) {
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j[k].get<std::decay_t<decltype(field)>>();
  };
  get("train_videos", s.train_videos);
  get("test_videos", s.test_videos);
  get("num_categories", s.num_categories);
  get("feature_dim", s.feature_dim);
  get("video_duration", s.video_duration);
  get("snippet_interval", s.snippet_interval);
  get("prototype_norm", s.prototype_norm);
  get("variation", s.variation);
  get("noise", s.noise);
  get("group_shares", s.group_shares);
  if (j.contains("group_shots")) {
    for (int g = 0; g < 3; ++g) {
      s.group_shots[g] = {j["group_shots"][g][0].get<int>(),
                          j["group_shots"][g][1].get<int>()};
    }
  }
  get("shot_min", s.shot_min);
  get("shot_max", s.shot_max);
  get("background_shot_min", s.background_shot_min);
  get("background_shot_max", s.background_shot_max);
  get("instances_per_video", s.instances_per_video);
  get("overlap_probability", s.overlap_probability);
  s.validate();
}

struct SyntheticData {
  Dataset train;
  Dataset test;
  std::map<std::string, FeatureSequence> features;
};

namespace detail {

/// Gaussian vector with expected norm `norm` (per-dimension sigma
/// norm / sqrt(dim)).
inline std::vector<double> gaussian_vector(std::size_t dim, double norm,
                                           std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, norm / std::sqrt(double(dim)));
  std::vector<double> v(dim);
  for (auto& x : v) x = n(rng);
  return v;
}

inline std::vector<double> unit_vector(std::size_t dim, double norm,
                                       std::mt19937_64& rng) {
  auto v = gaussian_vector(dim, 1.0, rng);
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (auto& x : v) x *= norm / s;
  return v;
}

struct PlannedInstance {
  int label;
  int num_shots;
  std::vector<double> shot_lengths;
  bool overlaps_previous;
  double overlap_fraction;
  double start = 0.0;
  double length() const {
    double s = 0.0;
    for (double l : shot_lengths) s += l;
    return s;
  }
  /// Accumulated exactly like the shot cuts, so the last cut equals the end.
  double end() const {
    double t = start;
    for (double l : shot_lengths) t += l;
    return t;
  }
};

/// Group with the largest deficit against its target share, so realised
/// shares track the targets closely at any sample size.
inline int next_group(const std::array<double, 3>& shares,
                      const std::array<std::size_t, 3>& counts) {
  const double total = shares[0] + shares[1] + shares[2];
  const double n = double(counts[0] + counts[1] + counts[2]) + 1.0;
  int best = 0;
  double best_deficit = -INFINITY;
  for (int g = 0; g < 3; ++g) {
    const double deficit = shares[g] / total * n - double(counts[g]);
    if (deficit > best_deficit) {
      best_deficit = deficit;
      best = g;
    }
  }
  return best;
}

}  // namespace detail

/// Generates train and test splits (split by video) plus features for every
/// video. Deterministic for a given (spec, seed).
inline SyntheticData gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const std::size_t D = spec.feature_dim;
  std::vector<std::vector<double>> protos;
  for (std::size_t c = 0; c < spec.num_categories; ++c) {
    protos.push_back(detail::unit_vector(D, spec.prototype_norm, rng));
  }
  const auto background = detail::unit_vector(D, spec.prototype_norm, rng);

  SyntheticData data;
  for (std::size_t c = 0; c < spec.num_categories; ++c) {
    const std::string name = "event" + std::to_string(c);
    data.train.categories.push_back(name);
    data.test.categories.push_back(name);
  }

  std::array<std::size_t, 3> group_counts{};
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::poisson_distribution<int> extra(spec.instances_per_video - 1.0);
  std::uniform_int_distribution<int> category(0, int(spec.num_categories) - 1);
  const std::size_t T = static_cast<std::size_t>(
      std::llround(spec.video_duration / spec.snippet_interval));
  const double duration = double(T) * spec.snippet_interval;

  for (std::size_t vi = 0; vi < spec.train_videos + spec.test_videos; ++vi) {
    const bool is_train = vi < spec.train_videos;
    char id[32];
    std::snprintf(id, sizeof id, "%s_%04zu", is_train ? "train" : "test", vi);

    // Plan instances, dropping from the back until they fit.
    std::vector<detail::PlannedInstance> plan;
    const int n = 1 + extra(rng);
    std::array<std::size_t, 3> local{};
    for (int i = 0; i < n; ++i) {
      std::array<std::size_t, 3> counts = group_counts;
      for (int g = 0; g < 3; ++g) counts[g] += local[g];
      const int g = detail::next_group(spec.group_shares, counts);
      std::uniform_int_distribution<int> shots(spec.group_shots[g][0],
                                               spec.group_shots[g][1]);
      detail::PlannedInstance p;
      p.label = category(rng);
      p.num_shots = shots(rng);
      for (int s = 0; s < p.num_shots; ++s) {
        p.shot_lengths.push_back(spec.shot_min +
                                 (spec.shot_max - spec.shot_min) * unit(rng));
      }
      p.overlaps_previous = i > 0 && unit(rng) < spec.overlap_probability;
      p.overlap_fraction = 0.3 + 0.4 * unit(rng);
      plan.push_back(std::move(p));
      ++local[g];
    }
    auto span_of = [&](double gap_scale, const std::vector<double>& gaps) {
      double cursor = gaps.empty() ? 0.0 : gaps[0] * gap_scale;
      double prev_start = 0.0, prev_len = 0.0, furthest = 0.0;
      for (std::size_t i = 0; i < plan.size(); ++i) {
        auto& p = plan[i];
        if (p.overlaps_previous) {
          p.start = prev_start + p.overlap_fraction * prev_len;
        } else {
          p.start = std::max(cursor, furthest) +
                    (i == 0 || gaps.empty() ? 0.0 : gaps[i] * gap_scale);
        }
        prev_start = p.start;
        prev_len = p.length();
        furthest = std::max(furthest, p.start + prev_len);
        cursor = furthest;
      }
      return furthest;
    };
    while (!plan.empty() && span_of(0.0, {}) > 0.95 * duration) plan.pop_back();
    std::vector<double> gaps(plan.size() + 1);
    double gsum = 0.0;
    for (auto& g : gaps) gsum += (g = 0.05 + unit(rng));
    const double free = duration - span_of(0.0, {});
    span_of(free / gsum, gaps);
    for (const auto& p : plan) {
      ++group_counts[p.num_shots < 10 ? 0 : p.num_shots < 20 ? 1 : 2];
    }

    // Shot cuts: instance-internal cuts, instance edges, and background cuts.
    std::vector<double> cuts;
    for (const auto& p : plan) {
      double t = p.start;
      cuts.push_back(t);
      for (double l : p.shot_lengths) cuts.push_back(t += l);
    }
    {
      std::vector<double> sorted = cuts;
      sorted.push_back(0.0);
      sorted.push_back(duration);
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        double t = sorted[i];
        bool inside = false;
        const double mid = 0.5 * (sorted[i] + sorted[i + 1]);
        for (const auto& p : plan) {
          if (mid > p.start && mid < p.end()) inside = true;
        }
        if (inside) continue;
        for (;;) {
          t += spec.background_shot_min +
               (spec.background_shot_max - spec.background_shot_min) * unit(rng);
          if (t >= sorted[i + 1]) break;
          cuts.push_back(t);
        }
      }
    }
    std::sort(cuts.begin(), cuts.end());
    std::vector<double> boundaries;
    for (double c : cuts) {
      if (c > 0.0 && c < duration &&
          (boundaries.empty() || c - boundaries.back() > 1e-9)) {
        boundaries.push_back(c);
      }
    }

    // One offset per shot.
    std::vector<std::vector<double>> offsets;
    for (std::size_t s = 0; s <= boundaries.size(); ++s) {
      offsets.push_back(detail::gaussian_vector(D, spec.variation, rng));
    }

    FeatureSequence fs;
    fs.video_id = id;
    fs.length = T;
    fs.dim = D;
    fs.snippet_interval = static_cast<float>(spec.snippet_interval);
    fs.values.resize(T * D);
    for (std::size_t t = 0; t < T; ++t) {
      const double tc = (double(t) + 0.5) * spec.snippet_interval;
      const std::size_t shot = static_cast<std::size_t>(
          std::upper_bound(boundaries.begin(), boundaries.end(), tc) -
          boundaries.begin());
      std::vector<double> base(D, 0.0);
      int covering = 0;
      for (const auto& p : plan) {
        if (tc >= p.start && tc < p.end()) {
          for (std::size_t d = 0; d < D; ++d) base[d] += protos[p.label][d];
          ++covering;
        }
      }
      if (covering == 0) {
        base = background;
      } else {
        for (auto& b : base) b /= covering;
      }
      const auto noise = detail::gaussian_vector(D, spec.noise, rng);
      for (std::size_t d = 0; d < D; ++d) {
        fs.values[t * D + d] =
            static_cast<float>(base[d] + offsets[shot][d] + noise[d]);
      }
    }

    VideoAnnotation va;
    va.id = id;
    va.duration = duration;
    va.shot_boundaries = boundaries;
    std::vector<detail::PlannedInstance> ordered = plan;
    std::sort(ordered.begin(), ordered.end(),
              [](const auto& a, const auto& b) { return a.start < b.start; });
    for (const auto& p : ordered) {
      va.instances.push_back(
          {{p.start, std::min(p.end(), duration)}, p.label, p.num_shots});
    }
    data.features.emplace(va.id, std::move(fs));
    (is_train ? data.train : data.test).videos.push_back(std::move(va));
  }
  validate(data.train);
  validate(data.test);
  return data;
}

/// Writes train.json, test.json and features/<id>.tff under `dir`.
inline void write_synthetic(const SyntheticData& data,
                            const std::filesystem::path& dir) {
  save_annotations(dir / "train.json", data.train);
  save_annotations(dir / "test.json", data.test);
  for (const auto& [id, fs] : data.features) {
    save_features(dir / "features" / (id + ".tff"), fs);
  }
}

using FeatureMap = std::map<std::string, FeatureSequence>;

/// Loads features/<id>.tff for every video of `ds`.
inline FeatureMap load_feature_dir(const std::filesystem::path& dir,
                                   const Dataset& ds) {
  FeatureMap out;
  for (const auto& v : ds.videos) {
    out.emplace(v.id, load_features(dir / (v.id + ".tff")));
  }
  return out;
}

}  // namespace telkit

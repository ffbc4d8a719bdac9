#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "telkit/datamodel.hpp"

namespace telkit {

/// Cosine similarity; 0 when either vector is zero.
inline double cosine_similarity(std::span<const float> a,
                                std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double{a[i]} * b[i];
    na += double{a[i]} * a[i];
    nb += double{b[i]} * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

struct SelfSimilarityStat {
  std::size_t first_snippet = 0;
  std::size_t num_snippets = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population std over unordered distinct pairs
};

/// Full cosine self-similarity matrix over snippets [first, last).
inline std::vector<double> self_similarity_matrix(const FeatureSequence& fs,
                                                  std::size_t first,
                                                  std::size_t last) {
  const std::size_t n = last - first;
  std::vector<double> m(n * n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = cosine_similarity(fs.row(first + i), fs.row(first + j));
      m[i * n + j] = s;
      m[j * n + i] = s;
    }
    if (cosine_similarity(fs.row(first + i), fs.row(first + i)) == 0.0) {
      m[i * n + i] = 0.0;
    }
  }
  return m;
}

/// Snippets [first, last) whose centre lies inside `iv`. Edge snippets that
/// only partly overlap the instance mostly show its surroundings, so they are
/// left out of the statistic.
inline std::pair<std::size_t, std::size_t> interior_snippets(
    const TimeInterval& iv, const FeatureSequence& fs) {
  const double dt = fs.snippet_interval;
  const double lo = std::max(0.0, std::ceil(iv.start / dt - 0.5));
  const double hi = std::min(double(fs.length), std::ceil(iv.end / dt - 0.5));
  if (!(hi > lo)) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

/// Mean and std of pairwise cosine similarity among the snippets inside an
/// instance. Instances holding fewer than two snippets yield nullopt.
inline std::optional<SelfSimilarityStat> instance_self_similarity(
    const FeatureSequence& fs, const Instance& inst) {
  const auto [first, last] = interior_snippets(inst.interval, fs);
  const std::size_t n = last - first;
  if (n < 2) return std::nullopt;
  std::vector<double> sims;
  sims.reserve(n * (n - 1) / 2);
  for (std::size_t i = first; i < last; ++i) {
    for (std::size_t j = i + 1; j < last; ++j) {
      sims.push_back(cosine_similarity(fs.row(i), fs.row(j)));
    }
  }
  // Two passes: a single-pass variance loses exact zeros to cancellation.
  double sum = 0.0;
  for (double v : sims) sum += v;
  const double mean = sum / static_cast<double>(sims.size());
  double ss = 0.0;
  for (double v : sims) ss += (v - mean) * (v - mean);
  SelfSimilarityStat st;
  st.first_snippet = first;
  st.num_snippets = n;
  st.mean = mean;
  st.stddev = std::sqrt(ss / static_cast<double>(sims.size()));
  return st;
}

struct DatasetSelfSimilarity {
  double average_std = 0.0;
  struct Entry {
    std::string video_id;
    std::size_t instance = 0;
    SelfSimilarityStat stat;
  };
  std::vector<Entry> instances;
  std::vector<std::string> missing_videos;
  /// (video id, instance index) of instances spanning fewer than 2 snippets.
  std::vector<std::pair<std::string, std::size_t>> skipped;
};

/// Unweighted mean of per-instance stds. Throws when no instance qualifies.
inline DatasetSelfSimilarity dataset_self_similarity(
    const std::map<std::string, FeatureSequence>& features, const Dataset& ds) {
  DatasetSelfSimilarity out;
  double sum = 0.0;
  for (const auto& video : ds.videos) {
    auto it = features.find(video.id);
    if (it == features.end()) {
      out.missing_videos.push_back(video.id);
      continue;
    }
    for (std::size_t i = 0; i < video.instances.size(); ++i) {
      auto st = instance_self_similarity(it->second, video.instances[i]);
      if (!st) {
        out.skipped.emplace_back(video.id, i);
        continue;
      }
      sum += st->stddev;
      out.instances.push_back({video.id, i, *st});
    }
  }
  if (out.instances.empty()) {
    throw ValidationError("no instance spans at least two snippets");
  }
  out.average_std = sum / static_cast<double>(out.instances.size());
  return out;
}

inline json to_json(const DatasetSelfSimilarity& r) {
  json inst = json::array();
  for (const auto& e : r.instances) {
    inst.push_back({{"video", e.video_id},
                    {"instance", e.instance},
                    {"snippets", e.stat.num_snippets},
                    {"mean", e.stat.mean},
                    {"std", e.stat.stddev}});
  }
  json skipped = json::array();
  for (const auto& [v, i] : r.skipped) {
    skipped.push_back({{"video", v}, {"instance", i}});
  }
  return {{"average_std", r.average_std},
          {"instances", inst},
          {"missing_videos", r.missing_videos},
          {"skipped", skipped}};
}

/// Binary PGM (P5) rendering of a similarity matrix, mapping [-1, 1] to
/// [0, 255].
inline std::string similarity_pgm(const std::vector<double>& m, std::size_t n) {
  std::string out = "P5\n" + std::to_string(n) + " " + std::to_string(n) +
                    "\n255\n";
  for (double v : m) {
    const double g = std::clamp((v + 1.0) * 0.5, 0.0, 1.0) * 255.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(g + 0.5)));
  }
  return out;
}

}  // namespace telkit

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "telkit/common.hpp"

namespace telkit {

using json = nlohmann::json;

struct TimeInterval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  double center() const { return 0.5 * (start + end); }
  bool operator==(const TimeInterval&) const = default;
};

inline bool is_valid(const TimeInterval& iv) {
  return std::isfinite(iv.start) && std::isfinite(iv.end) && iv.start >= 0.0 &&
         iv.end > iv.start;
}

struct Instance {
  TimeInterval interval;
  int label = 0;
  int num_shots = 1;
  bool operator==(const Instance&) const = default;
};

struct VideoAnnotation {
  std::string id;
  double duration = 0.0;
  std::vector<Instance> instances;
  std::optional<std::vector<double>> shot_boundaries;
  bool operator==(const VideoAnnotation&) const = default;
};

struct Dataset {
  std::vector<std::string> categories;
  std::vector<VideoAnnotation> videos;

  int num_categories() const { return static_cast<int>(categories.size()); }

  /// Category id for `name`, or -1 when unknown.
  int label_of(std::string_view name) const {
    auto it = std::find(categories.begin(), categories.end(), name);
    return it == categories.end() ? -1
                                  : static_cast<int>(it - categories.begin());
  }

  const VideoAnnotation* find_video(std::string_view id) const {
    for (const auto& v : videos) {
      if (v.id == id) return &v;
    }
    return nullptr;
  }

  std::size_t num_instances() const {
    std::size_t n = 0;
    for (const auto& v : videos) n += v.instances.size();
    return n;
  }

  bool operator==(const Dataset&) const = default;
};

struct Proposal {
  TimeInterval interval;
  double score = 0.0;
  bool operator==(const Proposal&) const = default;
};

struct Detection {
  TimeInterval interval;
  int label = 0;
  double score = 0.0;
  bool operator==(const Detection&) const = default;
};

/// Detections keyed by video id. Ordered so that every traversal is
/// deterministic.
using DetectionMap = std::map<std::string, std::vector<Detection>>;
using ProposalMap = std::map<std::string, std::vector<Proposal>>;

/// Snippet-level features of one video, row-major [length x dim]. Snippet t
/// covers [t * snippet_interval, (t + 1) * snippet_interval).
struct FeatureSequence {
  std::string video_id;
  std::size_t length = 0;
  std::size_t dim = 0;
  double snippet_interval = 1.0;
  std::vector<float> values;

  std::span<const float> row(std::size_t t) const {
    return {values.data() + t * dim, dim};
  }
  std::span<float> row(std::size_t t) { return {values.data() + t * dim, dim}; }
  double duration() const {
    return static_cast<double>(length) * snippet_interval;
  }
  bool operator==(const FeatureSequence&) const = default;
};

/// Shot count of `iv` implied by per-video shot boundaries: one plus the number
/// of boundaries strictly inside the interval.
inline int shots_from_boundaries(const TimeInterval& iv,
                                 std::span<const double> boundaries) {
  int n = 1;
  for (double b : boundaries) {
    if (b > iv.start && b < iv.end) ++n;
  }
  return n;
}

inline std::size_t time_to_snippet(double t, const FeatureSequence& fs) {
  if (fs.length == 0) return 0;
  double idx = std::floor(t / fs.snippet_interval);
  if (!(idx > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(idx), fs.length - 1);
}

/// Half-open snippet range [first, last) touched by `iv`; never empty.
inline std::pair<std::size_t, std::size_t> snippet_range(
    const TimeInterval& iv, const FeatureSequence& fs) {
  std::size_t first = time_to_snippet(iv.start, fs);
  double hi = std::ceil(iv.end / fs.snippet_interval);
  std::size_t last =
      hi <= 0.0 ? 0 : std::min(static_cast<std::size_t>(hi), fs.length);
  if (last <= first) last = std::min(first + 1, fs.length);
  return {first, last};
}

// ---------------------------------------------------------------------------
// Validation

inline void validate(const Dataset& ds) {
  std::unordered_set<std::string> names;
  for (const auto& c : ds.categories) {
    if (!names.insert(c).second) {
      throw ValidationError("duplicate category name '" + c + "'");
    }
  }
  std::unordered_set<std::string> ids;
  for (const auto& v : ds.videos) {
    const std::string ctx = "video '" + v.id + "'";
    if (!ids.insert(v.id).second) {
      throw ValidationError("duplicate video id '" + v.id + "'");
    }
    if (!(std::isfinite(v.duration) && v.duration > 0.0)) {
      throw ValidationError(ctx + ": duration must be positive");
    }
    if (v.shot_boundaries) {
      const auto& b = *v.shot_boundaries;
      for (std::size_t i = 0; i < b.size(); ++i) {
        if (!(b[i] > 0.0 && b[i] < v.duration)) {
          throw ValidationError(ctx + ": shot boundary " + std::to_string(i) +
                                " outside (0, duration)");
        }
        if (i > 0 && !(b[i] > b[i - 1])) {
          throw ValidationError(ctx +
                                ": shot boundaries not strictly increasing");
        }
      }
    }
    for (std::size_t i = 0; i < v.instances.size(); ++i) {
      const auto& inst = v.instances[i];
      const std::string ictx = ctx + " instance " + std::to_string(i);
      if (!is_valid(inst.interval)) {
        throw ValidationError(ictx + ": requires start >= 0 and end > start");
      }
      if (inst.interval.end > v.duration) {
        throw ValidationError(ictx + ": ends after the video duration");
      }
      if (inst.label < 0 || inst.label >= ds.num_categories()) {
        throw ValidationError(ictx + ": label out of range");
      }
      if (inst.num_shots < 1) {
        throw ValidationError(ictx + ": num_shots must be >= 1");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline const json& field(const json& obj, const char* key,
                         const std::string& ctx) {
  if (!obj.is_object()) throw FormatError(ctx + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw FormatError(ctx + ": missing field '" + key + "'");
  }
  return *it;
}

inline double number(const json& obj, const char* key,
                     const std::string& ctx) {
  const auto& v = field(obj, key, ctx);
  if (!v.is_number()) {
    throw FormatError(ctx + "." + key + ": expected a number");
  }
  return v.get<double>();
}

inline std::string string(const json& obj, const char* key,
                          const std::string& ctx) {
  const auto& v = field(obj, key, ctx);
  if (!v.is_string()) {
    throw FormatError(ctx + "." + key + ": expected a string");
  }
  return v.get<std::string>();
}

inline const json& array(const json& obj, const char* key,
                         const std::string& ctx) {
  const auto& v = field(obj, key, ctx);
  if (!v.is_array()) {
    throw FormatError(ctx + "." + key + ": expected an array");
  }
  return v;
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(what + ": " + e.what());
  }
}

}  // namespace detail

inline Dataset dataset_from_json(const json& root) {
  Dataset ds;
  for (const auto& c : detail::array(root, "categories", "root")) {
    if (!c.is_string()) throw FormatError("categories: expected strings");
    ds.categories.push_back(c.get<std::string>());
  }
  const auto& videos = detail::array(root, "videos", "root");
  for (std::size_t vi = 0; vi < videos.size(); ++vi) {
    const auto& vj = videos[vi];
    const std::string ctx = "videos[" + std::to_string(vi) + "]";
    VideoAnnotation v;
    v.id = detail::string(vj, "id", ctx);
    v.duration = detail::number(vj, "duration", ctx);
    if (auto it = vj.find("shot_boundaries"); it != vj.end()) {
      if (!it->is_array()) {
        throw FormatError(ctx + ".shot_boundaries: expected an array");
      }
      std::vector<double> b;
      for (const auto& x : *it) {
        if (!x.is_number()) {
          throw FormatError(ctx + ".shot_boundaries: expected numbers");
        }
        b.push_back(x.get<double>());
      }
      v.shot_boundaries = std::move(b);
    }
    const auto& insts = detail::array(vj, "instances", ctx);
    for (std::size_t ii = 0; ii < insts.size(); ++ii) {
      const auto& ij = insts[ii];
      const std::string ictx = ctx + ".instances[" + std::to_string(ii) + "]";
      Instance inst;
      inst.interval = {detail::number(ij, "start", ictx),
                       detail::number(ij, "end", ictx)};
      const auto name = detail::string(ij, "label", ictx);
      inst.label = ds.label_of(name);
      if (inst.label < 0) {
        throw ValidationError(ictx + ".label: unknown category '" + name + "'");
      }
      if (auto it = ij.find("num_shots"); it != ij.end()) {
        if (!it->is_number_integer()) {
          throw FormatError(ictx + ".num_shots: expected an integer");
        }
        inst.num_shots = it->get<int>();
      } else if (v.shot_boundaries) {
        inst.num_shots = shots_from_boundaries(inst.interval, *v.shot_boundaries);
      } else {
        inst.num_shots = 1;
      }
      v.instances.push_back(inst);
    }
    ds.videos.push_back(std::move(v));
  }
  validate(ds);
  return ds;
}

inline json to_json(const Dataset& ds) {
  json videos = json::array();
  for (const auto& v : ds.videos) {
    json insts = json::array();
    for (const auto& i : v.instances) {
      insts.push_back({{"start", i.interval.start},
                       {"end", i.interval.end},
                       {"label", ds.categories.at(i.label)},
                       {"num_shots", i.num_shots}});
    }
    json vj = {{"id", v.id}, {"duration", v.duration}, {"instances", insts}};
    if (v.shot_boundaries) vj["shot_boundaries"] = *v.shot_boundaries;
    videos.push_back(std::move(vj));
  }
  return {{"categories", ds.categories}, {"videos", videos}};
}

inline Dataset load_annotations(const std::filesystem::path& path) {
  return dataset_from_json(
      detail::parse_json(detail::read_file(path), path.string()));
}

inline void save_annotations(const std::filesystem::path& path,
                             const Dataset& ds) {
  detail::write_file_atomic(path, to_json(ds).dump(1) + "\n");
}

/// Parses a detection file. Labels are category names resolved against
/// `categories`; unknown names are rejected.
inline DetectionMap detections_from_json(
    const json& root, const std::vector<std::string>& categories) {
  DetectionMap out;
  const auto& videos = detail::array(root, "videos", "root");
  for (std::size_t vi = 0; vi < videos.size(); ++vi) {
    const auto& vj = videos[vi];
    const std::string ctx = "videos[" + std::to_string(vi) + "]";
    const auto id = detail::string(vj, "id", ctx);
    if (out.contains(id)) throw ValidationError(ctx + ": duplicate id " + id);
    auto& dets = out[id];
    const auto& arr = detail::array(vj, "detections", ctx);
    for (std::size_t di = 0; di < arr.size(); ++di) {
      const std::string dctx = ctx + ".detections[" + std::to_string(di) + "]";
      Detection d;
      d.interval = {detail::number(arr[di], "start", dctx),
                    detail::number(arr[di], "end", dctx)};
      d.score = detail::number(arr[di], "score", dctx);
      const auto name = detail::string(arr[di], "label", dctx);
      auto it = std::find(categories.begin(), categories.end(), name);
      if (it == categories.end()) {
        throw ValidationError(dctx + ".label: unknown category '" + name + "'");
      }
      d.label = static_cast<int>(it - categories.begin());
      if (!is_valid(d.interval)) {
        throw ValidationError(dctx + ": requires start >= 0 and end > start");
      }
      if (!std::isfinite(d.score)) {
        throw ValidationError(dctx + ".score: must be finite");
      }
      dets.push_back(d);
    }
  }
  return out;
}

inline json to_json(const DetectionMap& dets,
                    const std::vector<std::string>& categories) {
  json videos = json::array();
  for (const auto& [id, list] : dets) {
    json arr = json::array();
    for (const auto& d : list) {
      arr.push_back({{"start", d.interval.start},
                     {"end", d.interval.end},
                     {"label", categories.at(d.label)},
                     {"score", d.score}});
    }
    videos.push_back({{"id", id}, {"detections", arr}});
  }
  return {{"videos", videos}};
}

inline DetectionMap load_detections(const std::filesystem::path& path,
                                    const std::vector<std::string>& categories) {
  return detections_from_json(
      detail::parse_json(detail::read_file(path), path.string()), categories);
}

inline void save_detections(const std::filesystem::path& path,
                            const DetectionMap& dets,
                            const std::vector<std::string>& categories) {
  detail::write_file_atomic(path, to_json(dets, categories).dump(1) + "\n");
}

/// Proposal files share the detection schema with the label omitted.
inline ProposalMap proposals_from_json(const json& root) {
  ProposalMap out;
  const auto& videos = detail::array(root, "videos", "root");
  for (std::size_t vi = 0; vi < videos.size(); ++vi) {
    const auto& vj = videos[vi];
    const std::string ctx = "videos[" + std::to_string(vi) + "]";
    auto& list = out[detail::string(vj, "id", ctx)];
    const auto& arr = detail::array(vj, "detections", ctx);
    for (std::size_t di = 0; di < arr.size(); ++di) {
      const std::string dctx = ctx + ".detections[" + std::to_string(di) + "]";
      Proposal p;
      p.interval = {detail::number(arr[di], "start", dctx),
                    detail::number(arr[di], "end", dctx)};
      p.score = detail::number(arr[di], "score", dctx);
      if (!is_valid(p.interval)) {
        throw ValidationError(dctx + ": requires start >= 0 and end > start");
      }
      if (!(p.score >= 0.0 && p.score <= 1.0)) {
        throw ValidationError(dctx + ".score: must lie in [0, 1]");
      }
      list.push_back(p);
    }
  }
  return out;
}

inline json to_json(const ProposalMap& props) {
  json videos = json::array();
  for (const auto& [id, list] : props) {
    json arr = json::array();
    for (const auto& p : list) {
      arr.push_back({{"start", p.interval.start},
                     {"end", p.interval.end},
                     {"score", p.score}});
    }
    videos.push_back({{"id", id}, {"detections", arr}});
  }
  return {{"videos", videos}};
}

inline ProposalMap load_proposals(const std::filesystem::path& path) {
  return proposals_from_json(
      detail::parse_json(detail::read_file(path), path.string()));
}

inline void save_proposals(const std::filesystem::path& path,
                           const ProposalMap& props) {
  detail::write_file_atomic(path, to_json(props).dump(1) + "\n");
}

// ---------------------------------------------------------------------------
// TFF1 feature files: "TFF1", u32 T, u32 C, f32 snippet_interval, T*C f32.

inline std::string encode_features(const FeatureSequence& fs) {
  std::string out = "TFF1";
  out.reserve(16 + fs.values.size() * 4);
  detail::put_u32(out, static_cast<std::uint32_t>(fs.length));
  detail::put_u32(out, static_cast<std::uint32_t>(fs.dim));
  detail::put_f32(out, static_cast<float>(fs.snippet_interval));
  for (float v : fs.values) detail::put_f32(out, v);
  return out;
}

inline FeatureSequence decode_features(std::string_view bytes,
                                       std::string video_id,
                                       const std::string& what = "features") {
  detail::ByteReader in(bytes, what);
  if (in.take(4) != "TFF1") throw FormatError(what + ": bad magic");
  FeatureSequence fs;
  fs.video_id = std::move(video_id);
  fs.length = in.u32();
  fs.dim = in.u32();
  fs.snippet_interval = in.f32();
  if (fs.length < 1 || fs.dim < 1) {
    throw FormatError(what + ": empty feature matrix");
  }
  if (!(std::isfinite(fs.snippet_interval) && fs.snippet_interval > 0.0)) {
    throw FormatError(what + ": snippet interval must be positive");
  }
  const std::uint64_t n = std::uint64_t{fs.length} * fs.dim;
  if ((bytes.size() - in.pos()) / 4 < n) {
    throw FormatError(what + ": truncated payload, expected " +
                      std::to_string(n) + " floats");
  }
  fs.values.resize(n);
  for (auto& v : fs.values) {
    v = in.f32();
    if (!std::isfinite(v)) throw FormatError(what + ": non-finite value");
  }
  if (!in.done()) throw FormatError(what + ": trailing bytes");
  return fs;
}

inline FeatureSequence load_features(const std::filesystem::path& path) {
  return decode_features(detail::read_file(path), path.stem().string(),
                         path.string());
}

inline void save_features(const std::filesystem::path& path,
                          const FeatureSequence& fs) {
  detail::write_file_atomic(path, encode_features(fs));
}

}  // namespace telkit

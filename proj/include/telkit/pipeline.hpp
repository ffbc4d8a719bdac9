#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "telkit/datamodel.hpp"
#include "telkit/diagnosis.hpp"
#include "telkit/metrics.hpp"
#include "telkit/model.hpp"
#include "telkit/proposals.hpp"
#include "telkit/statistics.hpp"
#include "telkit/synthetic.hpp"
#include "telkit/tensor.hpp"

namespace telkit {

struct TrainSchedule {
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch = 32;
  std::size_t scorer_epochs = 8;
  std::size_t detector_epochs = 20;
  /// Learning rate is divided by `lr_drop_factor` from this epoch on.
  std::size_t lr_drop_epoch = 15;
  double lr_drop_factor = 10.0;
  /// Training pool augmentation per ground-truth instance.
  std::size_t jitters_per_instance = 8;
  std::size_t fragments_per_instance = 4;
  /// Jitter spread: centre shift up to +-jitter_center/2 of the length and
  /// log-length change up to +-jitter_scale/2.
  double jitter_center = 0.4;
  double jitter_scale = 0.5;

  double lr_at(std::size_t epoch) const {
    return epoch >= lr_drop_epoch ? lr / lr_drop_factor : lr;
  }
};

/// Everything a run depends on. The seed fixes all randomness.
struct RunConfig {
  std::uint64_t seed = 0;
  SyntheticSpec synthetic;
  DetectorConfig detector;
  ScorerConfig scorer;
  TrainSchedule schedule;
  std::vector<double> window_lengths = default_window_lengths();
  /// Multiplier on `window_lengths`; synthetic videos are short.
  double window_scale = 0.3;
  double window_stride = 0.75;
  RankOptions rank;
  double detection_nms = 0.4;
  std::vector<double> alphas = default_iou_grid();

  /// Desk-scale defaults matched to the synthetic generator.
  RunConfig() {
    detector.input_dim = synthetic.feature_dim;
    detector.num_classes = synthetic.num_categories;
    detector.block_channels = {64, 64};
    scorer.input_dim = synthetic.feature_dim;
    scorer.widths = {32, 64, 64, 128};
    scorer.hidden = 128;
  }

  void validate() const {
    synthetic.validate();
    detector.validate();
    scorer.validate();
    if (detector.input_dim != scorer.input_dim) {
      throw ValidationError("detector and scorer input_dim differ");
    }
    if (schedule.batch < 1) throw ValidationError("batch must be >= 1");
    if (!(schedule.lr > 0.0 && schedule.lr_drop_factor > 0.0)) {
      throw ValidationError("learning rate and drop factor must be positive");
    }
    if (window_lengths.empty() || !(window_scale > 0.0) ||
        !(window_stride > 0.0)) {
      throw ValidationError("window lengths, scale and stride must be positive");
    }
    if (alphas.empty()) throw ValidationError("alpha grid is empty");
  }
};

inline json to_json(const RunConfig& c) {
  const auto& s = c.schedule;
  return {{"seed", c.seed},
          {"synthetic", to_json(c.synthetic)},
          {"detector", to_json(c.detector)},
          {"scorer", to_json(c.scorer)},
          {"schedule",
           {{"lr", s.lr},
            {"momentum", s.momentum},
            {"batch", s.batch},
            {"scorer_epochs", s.scorer_epochs},
            {"detector_epochs", s.detector_epochs},
            {"lr_drop_epoch", s.lr_drop_epoch},
            {"lr_drop_factor", s.lr_drop_factor},
            {"jitters_per_instance", s.jitters_per_instance},
            {"fragments_per_instance", s.fragments_per_instance},
            {"jitter_center", s.jitter_center},
            {"jitter_scale", s.jitter_scale}}},
          {"window_lengths", c.window_lengths},
          {"window_scale", c.window_scale},
          {"window_stride", c.window_stride},
          {"rank", {{"nms_threshold", c.rank.nms_threshold}, {"top_k", c.rank.top_k}}},
          {"detection_nms", c.detection_nms},
          {"alphas", c.alphas}};
}

/// Overlays the keys present in `j` onto `c`.
inline void update_from_json(RunConfig& c, const json& j) {
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("synthetic")) update_from_json(c.synthetic, j["synthetic"]);
    if (j.contains("detector")) update_from_json(c.detector, j["detector"]);
    if (j.contains("scorer")) update_from_json(c.scorer, j["scorer"]);
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      auto get = [&](const char* k, auto& field) {
        if (s.contains(k)) field = s[k].get<std::decay_t<decltype(field)>>();
      };
      get("lr", c.schedule.lr);
      get("momentum", c.schedule.momentum);
      get("batch", c.schedule.batch);
      get("scorer_epochs", c.schedule.scorer_epochs);
      get("detector_epochs", c.schedule.detector_epochs);
      get("lr_drop_epoch", c.schedule.lr_drop_epoch);
      get("lr_drop_factor", c.schedule.lr_drop_factor);
      get("jitters_per_instance", c.schedule.jitters_per_instance);
      get("fragments_per_instance", c.schedule.fragments_per_instance);
      get("jitter_center", c.schedule.jitter_center);
      get("jitter_scale", c.schedule.jitter_scale);
    }
    if (j.contains("window_lengths")) {
      c.window_lengths = j["window_lengths"].get<std::vector<double>>();
    }
    if (j.contains("window_scale")) c.window_scale = j["window_scale"].get<double>();
    if (j.contains("window_stride")) c.window_stride = j["window_stride"].get<double>();
    if (j.contains("rank")) {
      if (j["rank"].contains("nms_threshold")) {
        c.rank.nms_threshold = j["rank"]["nms_threshold"].get<double>();
      }
      if (j["rank"].contains("top_k")) c.rank.top_k = j["rank"]["top_k"].get<std::size_t>();
    }
    if (j.contains("detection_nms")) c.detection_nms = j["detection_nms"].get<double>();
    if (j.contains("alphas")) c.alphas = j["alphas"].get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  RunConfig c;
  json j;
  try {
    j = json::parse(detail::read_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  update_from_json(c, j);
  return c;
}

/// Parses "lo:hi:step" (inclusive of hi up to rounding) or a comma list.
inline std::vector<double> parse_iou_grid(const std::string& text) {
  auto number = [&](const std::string& tok) {
    std::size_t used = 0;
    double v = NAN;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size() || !std::isfinite(v)) {
      throw ValidationError("iou grid: bad number '" + tok + "' in '" + text + "'");
    }
    return v;
  };
  std::vector<double> out;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string tok; std::getline(ss, tok, ':');) parts.push_back(tok);
    if (parts.size() != 3) {
      throw ValidationError("iou grid: expected lo:hi:step, got '" + text + "'");
    }
    const double lo = number(parts[0]), hi = number(parts[1]), step = number(parts[2]);
    if (!(step > 0.0) || hi < lo) {
      throw ValidationError("iou grid: need step > 0 and hi >= lo in '" + text + "'");
    }
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9));
    for (std::size_t k = 0; k <= n; ++k) {
      out.push_back(std::round((lo + static_cast<double>(k) * step) * 1e9) / 1e9);
    }
  } else {
    std::stringstream ss(text);
    for (std::string tok; std::getline(ss, tok, ',');) out.push_back(number(tok));
  }
  if (out.empty()) throw ValidationError("iou grid is empty");
  for (double a : out) {
    if (!(a > 0.0 && a <= 1.0)) {
      throw ValidationError("iou grid: thresholds must lie in (0, 1]");
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model bundle

struct Model {
  ProposalScorerNet<float> scorer;
  Detector<float> detector;

  explicit Model(const RunConfig& cfg) : scorer(cfg.scorer), detector(cfg.detector) {}

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    scorer.init(rng());
    detector.init(rng());
  }

  ParamList<float> params() {
    auto out = scorer.params();
    for (auto& p : detector.params()) out.push_back(p);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Training

struct TrainSample {
  Proposal proposal;
  ProposalTarget target;
};

/// Candidate proposals for one training video: sliding windows, the ground
/// truth itself, jittered copies of it, and fragments inside it.
inline std::vector<TrainSample> training_pool(const VideoAnnotation& v,
                                              const RunConfig& cfg,
                                              std::mt19937_64& rng) {
  std::vector<Proposal> cands = sliding_windows(
      v.duration, cfg.window_lengths, cfg.window_stride, cfg.window_scale);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& g : v.instances) {
    const auto& iv = g.interval;
    cands.push_back({iv, 0.0});
    for (std::size_t k = 0; k < cfg.schedule.jitters_per_instance; ++k) {
      const double c =
          iv.center() + (u(rng) - 0.5) * cfg.schedule.jitter_center * iv.length();
      const double l =
          iv.length() * std::exp((u(rng) - 0.5) * cfg.schedule.jitter_scale);
      cands.push_back({{c - 0.5 * l, c + 0.5 * l}, 0.0});
    }
    for (std::size_t k = 0; k < cfg.schedule.fragments_per_instance; ++k) {
      const double l = iv.length() * (0.1 + 0.15 * u(rng));
      const double s = iv.start + u(rng) * (iv.length() - l);
      cands.push_back({{s, s + l}, 0.0});
    }
  }
  std::vector<TrainSample> pool;
  for (auto& p : cands) {
    p.interval.start = std::max(0.0, p.interval.start);
    p.interval.end = std::min(v.duration, p.interval.end);
    if (!(p.interval.length() > 0.0)) continue;
    auto t = assign_target(p.interval, v.instances);
    if (t.kind != TargetKind::Ignore) pool.push_back({p, t});
  }
  return pool;
}

/// Up to `batch` samples balanced across positive / incomplete / background;
/// a kind with too few candidates leaves its share to the others.
inline std::vector<TrainSample> sample_batch(const std::vector<TrainSample>& pool,
                                             std::size_t batch,
                                             std::mt19937_64& rng) {
  std::vector<std::size_t> by_kind[3];
  for (std::size_t i = 0; i < pool.size(); ++i) {
    by_kind[static_cast<int>(pool[i].target.kind)].push_back(i);
  }
  for (auto& k : by_kind) std::shuffle(k.begin(), k.end(), rng);
  std::vector<TrainSample> out;
  std::size_t taken[3] = {0, 0, 0};
  const std::size_t share = (batch + 2) / 3;
  for (int k = 0; k < 3; ++k) {
    for (; taken[k] < std::min(share, by_kind[k].size()) && out.size() < batch;
         ++taken[k]) {
      out.push_back(pool[by_kind[k][taken[k]]]);
    }
  }
  for (int k = 0; k < 3 && out.size() < batch; ++k) {
    for (; taken[k] < by_kind[k].size() && out.size() < batch; ++taken[k]) {
      out.push_back(pool[by_kind[k][taken[k]]]);
    }
  }
  return out;
}

inline std::size_t scorer_class(TargetKind k) {
  switch (k) {
    case TargetKind::Positive: return kScorerComplete;
    case TargetKind::Incomplete: return kScorerIncomplete;
    default: return kScorerBackground;
  }
}

struct CurvePoint {
  std::string stage;
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  double final_scorer_loss = NAN;
  double final_detector_loss = NAN;
  /// Mean detector cross-entropy over the last epoch.
  double final_detector_ce = NAN;
};

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << "stage,epoch,step,lr,loss,classification,completeness,regression\n";
  for (const auto& c : curve) {
    os << c.stage << ',' << c.epoch << ',' << c.step << ',' << c.lr << ','
       << c.loss.total << ',' << c.loss.classification << ','
       << c.loss.completeness << ',' << c.loss.regression << '\n';
  }
  return os.str();
}

namespace detail {

inline void check_finite_loss(double loss, const std::string& stage,
                              std::size_t epoch, std::size_t step,
                              const std::string& video) {
  if (!std::isfinite(loss)) {
    throw std::runtime_error("non-finite loss in " + stage + " training at epoch " +
                             std::to_string(epoch) + ", step " +
                             std::to_string(step) + " (video " + video +
                             "); lower the learning rate or check the features");
  }
}

inline const FeatureSequence& features_for(const FeatureMap& features,
                                           const std::string& id) {
  auto it = features.find(id);
  if (it == features.end()) {
    throw ValidationError("missing features for video '" + id + "'");
  }
  return it->second;
}

}  // namespace detail

/// Trains the proposal scorer, then the detector, with SGD. One step is one
/// video with a balanced batch of proposals. `model` must be initialised.
inline TrainResult train_model(Model& model, const Dataset& train,
                               const FeatureMap& features, const RunConfig& cfg,
                               std::ostream* log = nullptr) {
  cfg.validate();
  TrainResult res;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& v : train.videos) {
    const auto& fs = detail::features_for(features, v.id);
    if (fs.dim != cfg.detector.input_dim) {
      throw ValidationError("features of '" + v.id + "' have dim " +
                            std::to_string(fs.dim) + ", config expects " +
                            std::to_string(cfg.detector.input_dim));
    }
    // ReLU and max-pooling would silently swallow NaN inputs.
    if (!std::all_of(fs.values.begin(), fs.values.end(),
                     [](float x) { return std::isfinite(x); })) {
      throw ValidationError("features of '" + v.id + "' contain non-finite values");
    }
  }
  // Augmented candidates are redrawn every epoch.
  std::vector<std::vector<TrainSample>> pools(train.videos.size());
  auto refresh_pools = [&] {
    for (std::size_t i = 0; i < train.videos.size(); ++i) {
      pools[i] = training_pool(train.videos[i], cfg, rng);
    }
  };
  std::vector<std::size_t> order(train.videos.size());
  const auto& sched = cfg.schedule;

  auto scorer_params = model.scorer.params();
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < sched.scorer_epochs; ++epoch) {
    const SgdOptions sgd{sched.lr_at(epoch), sched.momentum};
    refresh_pools();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t vi : order) {
      const auto& v = train.videos[vi];
      const auto batch = sample_batch(pools[vi], sched.batch, rng);
      if (batch.empty()) continue;
      const auto& fs = features.at(v.id);
      LossBreakdown lb;
      Tensor dlogits({1, 3});
      for (const auto& s : batch) {
        auto logits = model.scorer.forward(
            resample_window<float>(fs, s.proposal.interval, cfg.scorer.window));
        dlogits.zero();
        lb.classification += softmax_cross_entropy<float>(
            logits.values(), scorer_class(s.target.kind), dlogits.values(),
            1.0 / static_cast<double>(batch.size()));
        model.scorer.backward(dlogits);
      }
      lb.classification /= static_cast<double>(batch.size());
      lb.total = lb.classification;
      detail::check_finite_loss(lb.total, "scorer", epoch, step, v.id);
      sgd_step(scorer_params, sgd);
      res.curve.push_back({"scorer", epoch, step++, sgd.lr, lb});
      res.final_scorer_loss = lb.total;
    }
    if (log) *log << "scorer epoch " << epoch << " loss " << res.final_scorer_loss << '\n';
  }

  auto det_params = model.detector.params();
  step = 0;
  for (std::size_t epoch = 0; epoch < sched.detector_epochs; ++epoch) {
    const SgdOptions sgd{sched.lr_at(epoch), sched.momentum};
    refresh_pools();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double ce_sum = 0.0;
    std::size_t ce_n = 0;
    for (std::size_t vi : order) {
      const auto& v = train.videos[vi];
      const auto batch = sample_batch(pools[vi], sched.batch, rng);
      if (batch.empty()) continue;
      const auto& fs = features.at(v.id);
      std::vector<Proposal> props;
      std::vector<ProposalTarget> targets;
      for (const auto& s : batch) {
        props.push_back(s.proposal);
        targets.push_back(s.target);
      }
      auto out = model.detector.forward(fs, props);
      DetectorOutputs<float> grad;
      const auto lb = detector_loss<float>(out, targets, grad);
      detail::check_finite_loss(lb.total, "detector", epoch, step, v.id);
      model.detector.backward(grad);
      sgd_step(det_params, sgd);
      res.curve.push_back({"detector", epoch, step++, sgd.lr, lb});
      res.final_detector_loss = lb.total;
      ce_sum += lb.classification;
      ++ce_n;
    }
    if (ce_n) res.final_detector_ce = ce_sum / static_cast<double>(ce_n);
    if (log) {
      *log << "detector epoch " << epoch << " loss " << res.final_detector_loss
           << " ce " << res.final_detector_ce << '\n';
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Inference

/// Sliding windows ranked by the scorer, NMS 0.8, top 100.
inline std::vector<Proposal> propose_video(Model& model,
                                           const VideoAnnotation& v,
                                           const FeatureSequence& fs,
                                           const RunConfig& cfg) {
  const auto windows = sliding_windows(v.duration, cfg.window_lengths,
                                       cfg.window_stride, cfg.window_scale);
  ProposalScorer scorer = [&](std::span<const Proposal> ps) {
    std::vector<double> out;
    out.reserve(ps.size());
    for (const auto& p : ps) {
      out.push_back(model.scorer.score(
          resample_window<float>(fs, p.interval, cfg.scorer.window)));
    }
    return out;
  };
  return rank_and_filter(windows, scorer, cfg.rank);
}

inline ProposalMap propose(Model& model, const Dataset& ds,
                           const FeatureMap& features, const RunConfig& cfg) {
  ProposalMap out;
  for (const auto& v : ds.videos) {
    out[v.id] = propose_video(model, v, detail::features_for(features, v.id), cfg);
  }
  return out;
}

/// Per video: proposals -> detector heads -> decoded, class-wise NMS 0.4.
inline DetectionMap infer(Model& model, const Dataset& ds,
                          const FeatureMap& features, const RunConfig& cfg) {
  DetectionMap out;
  for (const auto& v : ds.videos) {
    const auto& fs = detail::features_for(features, v.id);
    const auto props = propose_video(model, v, fs, cfg);
    auto& dets = out[v.id];
    if (props.empty()) continue;
    const auto heads = model.detector.forward(fs, props);
    DecodeOptions dopt;
    dopt.nms_threshold = cfg.detection_nms;
    dopt.duration = v.duration;
    dets = decode_detections<float>(props, heads, dopt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands. Inputs are validated before any output is written; every output
// is written atomically.

namespace fs_names {
inline constexpr const char* kCheckpoint = "checkpoint.tkw";
inline constexpr const char* kCurve = "curve.csv";
inline constexpr const char* kConfig = "config.json";
}  // namespace fs_names

inline void write_json_file(const std::filesystem::path& p, const json& j) {
  detail::write_file_atomic(p, j.dump(2) + "\n");
}

/// Writes train.json, test.json and features/ under `out_dir`.
inline SyntheticData cmd_synth(const RunConfig& cfg,
                               const std::filesystem::path& out_dir) {
  cfg.validate();
  auto data = gen_synthetic(cfg.synthetic, cfg.seed);
  write_synthetic(data, out_dir);
  return data;
}

/// Trains on `annotations` with features from `features_dir`; writes the
/// checkpoint, training curve and effective config into `out_dir`.
inline TrainResult cmd_train(const RunConfig& cfg,
                             const std::filesystem::path& annotations,
                             const std::filesystem::path& features_dir,
                             const std::filesystem::path& out_dir,
                             std::ostream* log = nullptr) {
  cfg.validate();
  const auto train = load_annotations(annotations);
  const auto features = load_feature_dir(features_dir, train);
  if (train.categories.size() != cfg.detector.num_classes) {
    throw ValidationError("annotations have " +
                          std::to_string(train.categories.size()) +
                          " categories, config expects " +
                          std::to_string(cfg.detector.num_classes));
  }
  Model model(cfg);
  model.init(cfg.seed);
  auto res = train_model(model, train, features, cfg, log);
  save_checkpoint(out_dir / fs_names::kCheckpoint, model.params());
  detail::write_file_atomic(out_dir / fs_names::kCurve, curve_csv(res.curve));
  write_json_file(out_dir / fs_names::kConfig, to_json(cfg));
  return res;
}

inline Model load_model(const RunConfig& cfg,
                        const std::filesystem::path& checkpoint) {
  Model model(cfg);
  load_checkpoint(checkpoint, model.params());
  return model;
}

/// Detections for every video of `annotations` (used for ids and durations).
inline DetectionMap cmd_infer(const RunConfig& cfg,
                              const std::filesystem::path& checkpoint,
                              const std::filesystem::path& features_dir,
                              const std::filesystem::path& annotations,
                              const std::filesystem::path& out) {
  cfg.validate();
  const auto ds = load_annotations(annotations);
  auto model = load_model(cfg, checkpoint);
  const auto features = load_feature_dir(features_dir, ds);
  auto dets = infer(model, ds, features, cfg);
  save_detections(out, dets, ds.categories);
  return dets;
}

inline ProposalMap cmd_propose(const RunConfig& cfg,
                               const std::filesystem::path& checkpoint,
                               const std::filesystem::path& features_dir,
                               const std::filesystem::path& annotations,
                               const std::filesystem::path& out) {
  cfg.validate();
  const auto ds = load_annotations(annotations);
  auto model = load_model(cfg, checkpoint);
  const auto features = load_feature_dir(features_dir, ds);
  auto props = propose(model, ds, features, cfg);
  save_proposals(out, props);
  return props;
}

/// Writes <out>.json and <out>.txt.
inline EvalReport cmd_eval(const std::filesystem::path& annotations,
                           const std::filesystem::path& detections,
                           const std::vector<double>& alphas,
                           const std::filesystem::path& out) {
  const auto ds = load_annotations(annotations);
  const auto dets = load_detections(detections, ds.categories);
  auto rep = evaluate(dets, ds, alphas);
  auto base = out;
  write_json_file(base.replace_extension(".json"), to_json(rep));
  detail::write_file_atomic(base.replace_extension(".txt"), to_table(rep));
  return rep;
}

/// Writes diagnosis.json, distribution.csv, distribution.svg and
/// confusion.csv under `out_dir`.
inline DiagnosisReport cmd_diagnose(const std::filesystem::path& annotations,
                                    const std::filesystem::path& detections,
                                    const DiagnosisOptions& opt,
                                    const std::filesystem::path& out_dir) {
  const auto ds = load_annotations(annotations);
  const auto dets = load_detections(detections, ds.categories);
  auto rep = diagnose(dets, ds, opt);
  write_json_file(out_dir / "diagnosis.json", to_json(rep));
  detail::write_file_atomic(out_dir / "distribution.csv",
                            distribution_csv(rep.distribution));
  detail::write_file_atomic(out_dir / "distribution.svg",
                            distribution_svg(rep.distribution));
  detail::write_file_atomic(out_dir / "confusion.csv",
                            confusion_csv(rep.confusion, ds.categories));
  return rep;
}

/// Writes the statistic as JSON to `out`; with `images_dir`, also one PGM
/// similarity matrix per measured instance.
inline DatasetSelfSimilarity cmd_selfsim(const std::filesystem::path& annotations,
                                         const std::filesystem::path& features_dir,
                                         const std::filesystem::path& out,
                                         const std::filesystem::path& images_dir = {}) {
  const auto ds = load_annotations(annotations);
  FeatureMap features;
  for (const auto& v : ds.videos) {
    const auto p = features_dir / (v.id + ".tff");
    if (std::filesystem::exists(p)) features.emplace(v.id, load_features(p));
  }
  auto rep = dataset_self_similarity(features, ds);
  write_json_file(out, to_json(rep));
  if (!images_dir.empty()) {
    std::filesystem::create_directories(images_dir);
    for (const auto& e : rep.instances) {
      const auto& st = e.stat;
      const auto m = self_similarity_matrix(features.at(e.video_id), st.first_snippet,
                                            st.first_snippet + st.num_snippets);
      detail::write_file_atomic(
          images_dir / (e.video_id + "_" + std::to_string(e.instance) + ".pgm"),
          similarity_pgm(m, st.num_snippets));
    }
  }
  return rep;
}

}  // namespace telkit

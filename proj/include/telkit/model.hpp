#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "telkit/datamodel.hpp"
#include "telkit/layers.hpp"
#include "telkit/losses.hpp"
#include "telkit/metrics.hpp"
#include "telkit/proposals.hpp"
#include "telkit/tensor.hpp"

namespace telkit {

// ---------------------------------------------------------------------------
// Temporal aggregation

/// A [T,C] sequence folded into H rows of `unit` consecutive snippets and
/// convolved in 2D with a kh x kw kernel, so one output mixes kw neighbours
/// within a row and kh rows `unit` snippets apart.
struct TAConfig {
  std::size_t unit = 1;
  std::size_t kh = 1;
  std::size_t kw = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  std::size_t receptive_field() const { return (kh - 1) * unit + kw; }
  void validate() const {
    if (unit < 1) throw ValidationError("TA unit length must be >= 1");
    if (kh % 2 == 0 || kw % 2 == 0) {
      throw ValidationError("TA kernel extents must be odd");
    }
  }
};

/// Temporal aggregation on x [T,Cin] with kernel w [kh,kw,Cin,Cout]. T is
/// zero-padded up to a multiple of `unit` and the output cropped back to T.
template <class S>
BasicTensor<S> ta_forward(const BasicTensor<S>& x, const BasicTensor<S>& w,
                          const BasicTensor<S>& b, std::size_t unit) {
  const std::size_t T = x.dim(0), C = x.dim(1);
  const std::size_t H = (T + unit - 1) / unit;
  BasicTensor<S> grid({H, unit, C});
  std::copy(x.values().begin(), x.values().end(), grid.values().begin());
  auto y = conv2d(grid, w, b);
  const std::size_t Cout = y.dim(2);
  y.storage().resize(T * Cout);
  y.reshape({T, Cout});
  return y;
}

template <class S>
class TemporalAggregation {
 public:
  TemporalAggregation() = default;
  explicit TemporalAggregation(const TAConfig& cfg)
      : cfg_(cfg), conv_(cfg.kh, cfg.kw, cfg.in_channels, cfg.out_channels) {
    cfg.validate();
  }

  BasicTensor<S> forward(const BasicTensor<S>& x) {
    const std::size_t T = x.dim(0), C = x.dim(1);
    length_ = T;
    const std::size_t H = (T + cfg_.unit - 1) / cfg_.unit;
    BasicTensor<S> grid({H, cfg_.unit, C});
    std::copy(x.values().begin(), x.values().end(), grid.values().begin());
    auto y = conv_.forward(grid);
    y.storage().resize(T * cfg_.out_channels);
    y.reshape({T, cfg_.out_channels});
    return y;
  }

  BasicTensor<S> backward(const BasicTensor<S>& dy) {
    const std::size_t H = (length_ + cfg_.unit - 1) / cfg_.unit;
    BasicTensor<S> grid({H, cfg_.unit, cfg_.out_channels});
    std::copy(dy.values().begin(), dy.values().end(), grid.values().begin());
    auto dx = conv_.backward(grid);
    dx.storage().resize(length_ * cfg_.in_channels);
    dx.reshape({length_, cfg_.in_channels});
    return dx;
  }

  void init(std::mt19937_64& rng) { conv_.init(rng); }
  void collect(ParamList<S>& out, const std::string& prefix) {
    conv_.collect(out, prefix);
  }
  const TAConfig& config() const { return cfg_; }
  Conv2dLayer<S>& conv() { return conv_; }

 private:
  TAConfig cfg_;
  Conv2dLayer<S> conv_;
  std::size_t length_ = 0;
};

/// One branch of a multi-scale block.
struct BranchSpec {
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t unit = 3;
  bool operator==(const BranchSpec&) const = default;
};

/// Four branches: kernels 1x3, 3x3, 3x3, 3x3 with units 3, 3, 6, 9.
inline std::vector<BranchSpec> default_branches() {
  return {{1, 3, 3}, {3, 3, 3}, {3, 3, 6}, {3, 3, 9}};
}

template <class S>
class Block {
 public:
  virtual ~Block() = default;
  virtual BasicTensor<S> forward(const BasicTensor<S>& x) = 0;
  virtual BasicTensor<S> backward(const BasicTensor<S>& dy) = 0;
  virtual void init(std::mt19937_64& rng) = 0;
  virtual void collect(ParamList<S>& out, const std::string& prefix) = 0;
};

/// Branch outputs summed, then ReLU.
template <class S>
class MultiScaleBlock : public Block<S> {
 public:
  MultiScaleBlock(std::span<const BranchSpec> branches, std::size_t in,
                  std::size_t out) {
    if (branches.empty()) throw ValidationError("multi-scale block needs a branch");
    for (const auto& b : branches) {
      branches_.emplace_back(TAConfig{b.unit, b.kh, b.kw, in, out});
    }
  }

  BasicTensor<S> forward(const BasicTensor<S>& x) override {
    auto sum = branches_[0].forward(x);
    for (std::size_t k = 1; k < branches_.size(); ++k) {
      auto y = branches_[k].forward(x);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += y[i];
    }
    output_ = relu(sum);
    return output_;
  }

  BasicTensor<S> backward(const BasicTensor<S>& dy) override {
    auto g = relu_backward(output_, dy);
    auto dx = branches_[0].backward(g);
    for (std::size_t k = 1; k < branches_.size(); ++k) {
      auto d = branches_[k].backward(g);
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d[i];
    }
    return dx;
  }

  /// He init per branch, scaled by 1/sqrt(branches) so the sum keeps the
  /// variance of a single branch.
  void init(std::mt19937_64& rng) override {
    const double scale = 1.0 / std::sqrt(static_cast<double>(branches_.size()));
    for (auto& b : branches_) {
      b.init(rng);
      for (auto& w : b.conv().weight.value.values()) w = static_cast<S>(w * scale);
    }
  }
  void collect(ParamList<S>& out, const std::string& prefix) override {
    for (std::size_t k = 0; k < branches_.size(); ++k) {
      branches_[k].collect(out, prefix + ".branch" + std::to_string(k));
    }
  }
  std::vector<TemporalAggregation<S>>& branches() { return branches_; }

 private:
  std::vector<TemporalAggregation<S>> branches_;
  BasicTensor<S> output_;
};

/// Dilated conv1d (kernel 3, dilation = unit) followed by ReLU.
template <class S>
class DilatedBlock : public Block<S> {
 public:
  DilatedBlock(std::size_t in, std::size_t out, std::size_t dilation)
      : conv_(3, in, out, dilation) {}
  BasicTensor<S> forward(const BasicTensor<S>& x) override {
    output_ = relu(conv_.forward(x));
    return output_;
  }
  BasicTensor<S> backward(const BasicTensor<S>& dy) override {
    return conv_.backward(relu_backward(output_, dy));
  }
  void init(std::mt19937_64& rng) override { conv_.init(rng); }
  void collect(ParamList<S>& out, const std::string& prefix) override {
    conv_.collect(out, prefix + ".conv");
  }

 private:
  Conv1dLayer<S> conv_;
  BasicTensor<S> output_;
};

template <class S>
class DeformableBlock : public Block<S> {
 public:
  DeformableBlock(std::size_t in, std::size_t out, std::size_t dilation)
      : conv_(3, in, out, dilation) {}
  BasicTensor<S> forward(const BasicTensor<S>& x) override {
    output_ = relu(conv_.forward(x));
    return output_;
  }
  BasicTensor<S> backward(const BasicTensor<S>& dy) override {
    return conv_.backward(relu_backward(output_, dy));
  }
  void init(std::mt19937_64& rng) override { conv_.init(rng); }
  void collect(ParamList<S>& out, const std::string& prefix) override {
    conv_.collect(out, prefix + ".deform");
  }
  DeformConv1dLayer<S>& conv() { return conv_; }

 private:
  DeformConv1dLayer<S> conv_;
  BasicTensor<S> output_;
};

// ---------------------------------------------------------------------------
// Detector

enum class BackboneKind {
  MultiScale,  // temporal aggregation branches per block
  Vanilla,     // pointwise (1x1) convolutions, no temporal context
  Dilated,
  Deformable,
};

inline const char* to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::MultiScale: return "multiscale";
    case BackboneKind::Vanilla: return "vanilla";
    case BackboneKind::Dilated: return "dilated";
    case BackboneKind::Deformable: return "deformable";
  }
  return "?";
}

inline BackboneKind backbone_from_string(const std::string& s) {
  for (auto k : {BackboneKind::MultiScale, BackboneKind::Vanilla,
                 BackboneKind::Dilated, BackboneKind::Deformable}) {
    if (s == to_string(k)) return k;
  }
  throw ValidationError("unknown backbone '" + s + "'");
}

struct DetectorConfig {
  std::size_t input_dim = 1024;
  std::size_t num_classes = 1;
  BackboneKind backbone = BackboneKind::MultiScale;
  std::vector<BranchSpec> branches = default_branches();
  std::vector<std::size_t> block_channels = {384, 512};
  /// Dilation of the dilated / deformable baselines.
  std::size_t dilation = 6;
  std::size_t roi_bins = 8;
  /// Fraction of the proposal length added on each side before pooling.
  double extension = 0.5;

  std::size_t feature_channels() const {
    return block_channels.empty() ? input_dim : block_channels.back();
  }
  std::size_t pooled_size() const { return roi_bins * feature_channels(); }

  void validate() const {
    if (num_classes < 1) throw ValidationError("num_classes must be >= 1");
    if (input_dim < 1) throw ValidationError("input_dim must be >= 1");
    if (roi_bins < 1) throw ValidationError("roi_bins must be >= 1");
    if (!(extension >= 0.0)) throw ValidationError("extension must be >= 0");
    if (dilation < 1) throw ValidationError("dilation must be >= 1");
    for (const auto& b : branches) {
      TAConfig{b.unit, b.kh, b.kw, 1, 1}.validate();
    }
  }
  bool operator==(const DetectorConfig&) const = default;
};

inline json to_json(const DetectorConfig& c) {
  json br = json::array();
  for (const auto& b : c.branches) {
    br.push_back({{"kh", b.kh}, {"kw", b.kw}, {"unit", b.unit}});
  }
  return {{"input_dim", c.input_dim},
          {"num_classes", c.num_classes},
          {"backbone", to_string(c.backbone)},
          {"branches", br},
          {"block_channels", c.block_channels},
          {"dilation", c.dilation},
          {"roi_bins", c.roi_bins},
          {"extension", c.extension}};
}

/// Overrides the fields present in `j`.
inline void update_from_json(DetectorConfig& c, const json& j) {
  if (j.contains("input_dim")) c.input_dim = j["input_dim"].get<std::size_t>();
  if (j.contains("num_classes")) c.num_classes = j["num_classes"].get<std::size_t>();
  if (j.contains("backbone")) {
    c.backbone = backbone_from_string(j["backbone"].get<std::string>());
  }
  if (j.contains("branches")) {
    c.branches.clear();
    for (const auto& b : j["branches"]) {
      c.branches.push_back({b.at("kh").get<std::size_t>(),
                            b.at("kw").get<std::size_t>(),
                            b.at("unit").get<std::size_t>()});
    }
  }
  if (j.contains("block_channels")) {
    c.block_channels = j["block_channels"].get<std::vector<std::size_t>>();
  }
  if (j.contains("dilation")) c.dilation = j["dilation"].get<std::size_t>();
  if (j.contains("roi_bins")) c.roi_bins = j["roi_bins"].get<std::size_t>();
  if (j.contains("extension")) c.extension = j["extension"].get<double>();
  c.validate();
}

/// Pooling window in snippet coordinates: the proposal widened by
/// `extension * length` on each side and clamped to [0, T].
struct RoiWindow {
  double lo = 0.0;
  double hi = 0.0;
};

inline RoiWindow roi_window(const TimeInterval& iv, double snippet_interval,
                            std::size_t length, double extension) {
  const double ext = extension * iv.length();
  const double t = static_cast<double>(length);
  return {std::clamp((iv.start - ext) / snippet_interval, 0.0, t),
          std::clamp((iv.end + ext) / snippet_interval, 0.0, t)};
}

/// Per-proposal head outputs: cls [N, C+1] (index C is background),
/// completeness [N, C], regression [N, 2C] as (center, log-length) pairs.
template <class S>
struct DetectorOutputs {
  BasicTensor<S> cls;
  BasicTensor<S> completeness;
  BasicTensor<S> regression;

  std::size_t size() const { return cls.rank() ? cls.dim(0) : 0; }
};

template <class S>
inline BasicTensor<S> features_tensor(const FeatureSequence& fs) {
  std::vector<S> v(fs.values.begin(), fs.values.end());
  return BasicTensor<S>({fs.length, fs.dim}, std::move(v));
}

template <class S>
class Detector {
 public:
  explicit Detector(DetectorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t in = cfg_.input_dim;
    for (std::size_t out : cfg_.block_channels) {
      switch (cfg_.backbone) {
        case BackboneKind::MultiScale:
          blocks_.push_back(
              std::make_unique<MultiScaleBlock<S>>(cfg_.branches, in, out));
          break;
        case BackboneKind::Vanilla: {
          const BranchSpec pointwise{1, 1, 1};
          blocks_.push_back(std::make_unique<MultiScaleBlock<S>>(
              std::span<const BranchSpec>(&pointwise, 1), in, out));
          break;
        }
        case BackboneKind::Dilated:
          blocks_.push_back(
              std::make_unique<DilatedBlock<S>>(in, out, cfg_.dilation));
          break;
        case BackboneKind::Deformable:
          blocks_.push_back(
              std::make_unique<DeformableBlock<S>>(in, out, cfg_.dilation));
          break;
      }
      in = out;
    }
    const std::size_t C = cfg_.num_classes;
    cls_ = LinearLayer<S>(cfg_.pooled_size(), C + 1);
    comp_ = LinearLayer<S>(cfg_.pooled_size(), C);
    reg_ = LinearLayer<S>(cfg_.pooled_size(), 2 * C);
  }

  const DetectorConfig& config() const { return cfg_; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& b : blocks_) b->init(rng);
    cls_.init(rng);
    comp_.init(rng);
    reg_.init(rng);
  }

  ParamList<S> params() {
    ParamList<S> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i]->collect(out, "backbone.block" + std::to_string(i));
    }
    cls_.collect(out, "head.cls");
    comp_.collect(out, "head.completeness");
    reg_.collect(out, "head.regression");
    return out;
  }

  BasicTensor<S> backbone_forward(const BasicTensor<S>& x) {
    require(x.rank() == 2 && x.dim(1) == cfg_.input_dim,
            "detector: expected features [T," + std::to_string(cfg_.input_dim) +
                "], got " + to_string(x.shape()));
    BasicTensor<S> h = x;
    for (auto& b : blocks_) h = b->forward(h);
    return h;
  }

  /// Heads over `rois` (snippet coordinates) on the backbone output of x.
  DetectorOutputs<S> forward(const BasicTensor<S>& x,
                             std::span<const RoiWindow> rois) {
    features_ = backbone_forward(x);
    const std::size_t F = cfg_.pooled_size();
    BasicTensor<S> pooled({rois.size(), F});
    argmax_.assign(rois.size(), {});
    for (std::size_t n = 0; n < rois.size(); ++n) {
      auto p = roi_pool_1d(features_, rois[n].lo, rois[n].hi, cfg_.roi_bins,
                           argmax_[n]);
      std::copy(p.values().begin(), p.values().end(), pooled.data() + n * F);
    }
    DetectorOutputs<S> out;
    out.cls = cls_.forward(pooled);
    out.completeness = comp_.forward(pooled);
    out.regression = reg_.forward(pooled);
    return out;
  }

  DetectorOutputs<S> forward(const FeatureSequence& fs,
                             std::span<const Proposal> proposals) {
    std::vector<RoiWindow> rois;
    for (const auto& p : proposals) {
      rois.push_back(roi_window(p.interval, fs.snippet_interval, fs.length,
                                cfg_.extension));
    }
    return forward(features_tensor<S>(fs), rois);
  }

  /// Accumulates parameter gradients from head-output gradients; returns the
  /// gradient with respect to the input features.
  BasicTensor<S> backward(const DetectorOutputs<S>& grad) {
    auto dpooled = cls_.backward(grad.cls);
    auto d2 = comp_.backward(grad.completeness);
    auto d3 = reg_.backward(grad.regression);
    for (std::size_t i = 0; i < dpooled.size(); ++i) dpooled[i] += d2[i] + d3[i];
    const std::size_t F = cfg_.pooled_size();
    BasicTensor<S> dfeat(features_.shape());
    for (std::size_t n = 0; n < argmax_.size(); ++n) {
      BasicTensor<S> dp({cfg_.roi_bins, cfg_.feature_channels()});
      std::copy(dpooled.data() + n * F, dpooled.data() + (n + 1) * F, dp.data());
      roi_pool_1d_backward(argmax_[n], dp, dfeat);
    }
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      dfeat = blocks_[i]->backward(dfeat);
    }
    return dfeat;
  }

 private:
  DetectorConfig cfg_;
  std::vector<std::unique_ptr<Block<S>>> blocks_;
  LinearLayer<S> cls_, comp_, reg_;
  BasicTensor<S> features_;
  std::vector<std::vector<std::size_t>> argmax_;
};

// ---------------------------------------------------------------------------
// Training targets and loss

/// Regression targets of `gt` relative to proposal `p`:
/// ((c_gt - c_p) / l_p, ln(l_gt / l_p)).
inline std::pair<double, double> regression_targets(const TimeInterval& p,
                                                    const TimeInterval& gt) {
  return {(gt.center() - p.center()) / p.length(),
          std::log(gt.length() / p.length())};
}

inline TimeInterval apply_regression(const TimeInterval& p, double dc,
                                     double dl) {
  const double c = p.center() + dc * p.length();
  const double l = p.length() * std::exp(dl);
  return {c - 0.5 * l, c + 0.5 * l};
}

enum class TargetKind { Positive, Incomplete, Background, Ignore };

struct ProposalTarget {
  TargetKind kind = TargetKind::Ignore;
  int label = -1;
  double dc = 0.0;
  double dl = 0.0;
};

struct AssignOptions {
  double positive_iou = 0.7;
  double incomplete_iou = 0.3;
  double incomplete_coverage = 0.8;
  double background_iou = 0.1;
};

/// Positive: best IoU >= 0.7. Incomplete: best IoU < 0.3 while >= 80% of the
/// proposal lies inside one instance. Background: best IoU < 0.1. Anything
/// else is ignored.
inline ProposalTarget assign_target(const TimeInterval& p,
                                    std::span<const Instance> gts,
                                    const AssignOptions& opt = {}) {
  ProposalTarget t;
  double best = 0.0;
  std::size_t best_idx = 0;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const double iou = temporal_iou(p, gts[g].interval);
    if (iou > best) {
      best = iou;
      best_idx = g;
    }
  }
  if (!gts.empty() && best >= opt.positive_iou) {
    t.kind = TargetKind::Positive;
    t.label = gts[best_idx].label;
    std::tie(t.dc, t.dl) = regression_targets(p, gts[best_idx].interval);
    return t;
  }
  if (best < opt.incomplete_iou) {
    double cover = 0.0;
    int label = -1;
    for (const auto& g : gts) {
      const double inter = std::max(
          0.0, std::min(p.end, g.interval.end) - std::max(p.start, g.interval.start));
      if (inter / p.length() > cover) {
        cover = inter / p.length();
        label = g.label;
      }
    }
    if (cover >= opt.incomplete_coverage) {
      t.kind = TargetKind::Incomplete;
      t.label = label;
      return t;
    }
  }
  if (best < opt.background_iou) t.kind = TargetKind::Background;
  return t;
}

struct LossWeights {
  double classification = 1.0;
  double completeness = 0.5;
  double regression = 0.5;
};

struct LossBreakdown {
  double total = 0.0;
  double classification = 0.0;
  double completeness = 0.0;
  double regression = 0.0;
};

/// Cross-entropy over all non-ignored proposals, hinge on the completeness of
/// the target class for positives (+1) and incompletes (-1), Smooth L1 on the
/// target class regression for positives. Each term is a mean over the
/// proposals it covers. Gradients are written into `grad`.
template <class S>
LossBreakdown detector_loss(const DetectorOutputs<S>& out,
                            std::span<const ProposalTarget> targets,
                            DetectorOutputs<S>& grad,
                            const LossWeights& w = {}) {
  const std::size_t N = out.size();
  const std::size_t C = out.completeness.dim(1);
  grad.cls = BasicTensor<S>(out.cls.shape());
  grad.completeness = BasicTensor<S>(out.completeness.shape());
  grad.regression = BasicTensor<S>(out.regression.shape());
  std::size_t n_cls = 0, n_comp = 0, n_reg = 0;
  for (const auto& t : targets) {
    if (t.kind == TargetKind::Ignore) continue;
    ++n_cls;
    if (t.kind != TargetKind::Background) ++n_comp;
    if (t.kind == TargetKind::Positive) ++n_reg;
  }
  LossBreakdown lb;
  for (std::size_t n = 0; n < N; ++n) {
    const auto& t = targets[n];
    if (t.kind == TargetKind::Ignore) continue;
    const std::size_t cls_target =
        t.kind == TargetKind::Background ? C : static_cast<std::size_t>(t.label);
    std::span<const S> logits(out.cls.data() + n * (C + 1), C + 1);
    std::span<S> g(grad.cls.data() + n * (C + 1), C + 1);
    lb.classification += softmax_cross_entropy(
        logits, cls_target, g, w.classification / static_cast<double>(n_cls));
    if (t.kind == TargetKind::Background) continue;
    const std::size_t c = static_cast<std::size_t>(t.label);
    const auto h = hinge(out.completeness(n, c),
                         t.kind == TargetKind::Positive ? 1.0 : -1.0);
    lb.completeness += h.loss;
    grad.completeness(n, c) +=
        static_cast<S>(w.completeness * h.grad / static_cast<double>(n_comp));
    if (t.kind != TargetKind::Positive) continue;
    const double targets_dc_dl[2] = {t.dc, t.dl};
    for (std::size_t k = 0; k < 2; ++k) {
      const auto s = smooth_l1(out.regression(n, 2 * c + k) - targets_dc_dl[k]);
      lb.regression += s.loss;
      grad.regression(n, 2 * c + k) +=
          static_cast<S>(w.regression * s.grad / static_cast<double>(n_reg));
    }
  }
  if (n_cls) lb.classification /= static_cast<double>(n_cls);
  if (n_comp) lb.completeness /= static_cast<double>(n_comp);
  if (n_reg) lb.regression /= static_cast<double>(n_reg);
  lb.total = w.classification * lb.classification +
             w.completeness * lb.completeness + w.regression * lb.regression;
  return lb;
}

// ---------------------------------------------------------------------------
// Decoding

struct DecodeOptions {
  double nms_threshold = 0.4;
  /// Regressed intervals are clamped to [0, duration].
  double duration = INFINITY;
  /// Weight of the second stream when fusing two (2:3 -> 0.6).
  double second_stream_weight = 0.6;
};

/// Per class c: score = softmax(cls)[c] * sigmoid(completeness[c]), interval
/// from the class-c regression. An optional second stream is fused into the
/// scores and offsets before class-wise NMS.
template <class S>
std::vector<Detection> decode_detections(std::span<const Proposal> proposals,
                                         const DetectorOutputs<S>& out,
                                         const DecodeOptions& opt = {},
                                         const DetectorOutputs<S>* second = nullptr) {
  const std::size_t C = out.completeness.rank() ? out.completeness.dim(1) : 0;
  std::vector<Detection> dets;
  dets.reserve(proposals.size() * C);
  const double w2 = opt.second_stream_weight;
  auto fuse = [&](double a, double b) { return a + w2 * (b - a); };
  for (std::size_t n = 0; n < proposals.size(); ++n) {
    const auto p1 = softmax<S>({out.cls.data() + n * (C + 1), C + 1});
    std::vector<double> p2;
    if (second) p2 = softmax<S>({second->cls.data() + n * (C + 1), C + 1});
    for (std::size_t c = 0; c < C; ++c) {
      double score = p1[c] * sigmoid(out.completeness(n, c));
      double dc = out.regression(n, 2 * c);
      double dl = out.regression(n, 2 * c + 1);
      if (second) {
        score = fuse(score, p2[c] * sigmoid(second->completeness(n, c)));
        dc = fuse(dc, second->regression(n, 2 * c));
        dl = fuse(dl, second->regression(n, 2 * c + 1));
      }
      TimeInterval iv = apply_regression(proposals[n].interval, dc, dl);
      iv.start = std::clamp(iv.start, 0.0, opt.duration);
      iv.end = std::clamp(iv.end, 0.0, opt.duration);
      if (!(iv.end > iv.start)) iv = proposals[n].interval;
      dets.push_back({iv, static_cast<int>(c), score});
    }
  }
  return nms_per_class(dets, opt.nms_threshold);
}

// ---------------------------------------------------------------------------
// Proposal scorer: 4 x (conv1d k3 + ReLU + maxpool 2) -> FC + ReLU -> FC 3.

struct ScorerConfig {
  std::size_t input_dim = 1024;
  std::size_t window = 32;
  std::vector<std::size_t> widths = {128, 256, 512, 1024};
  std::size_t hidden = 512;
  std::size_t kernel = 3;

  std::size_t pooled_length() const {
    std::size_t L = window;
    for (std::size_t i = 0; i < widths.size(); ++i) L /= 2;
    return L;
  }
  /// Parameter count implied by the layer shapes.
  std::size_t parameter_count() const {
    std::size_t n = 0, in = input_dim;
    for (auto w : widths) {
      n += kernel * in * w + w;
      in = w;
    }
    n += pooled_length() * in * hidden + hidden;
    n += hidden * 3 + 3;
    return n;
  }
  void validate() const {
    if (kernel % 2 == 0) throw ValidationError("scorer kernel must be odd");
    if (pooled_length() < 1) {
      throw ValidationError("scorer window too short for its pooling stages");
    }
  }
  bool operator==(const ScorerConfig&) const = default;
};

inline json to_json(const ScorerConfig& c) {
  return {{"input_dim", c.input_dim}, {"window", c.window},
          {"widths", c.widths},       {"hidden", c.hidden},
          {"kernel", c.kernel}};
}

inline void update_from_json(ScorerConfig& c, const json& j) {
  if (j.contains("input_dim")) c.input_dim = j["input_dim"].get<std::size_t>();
  if (j.contains("window")) c.window = j["window"].get<std::size_t>();
  if (j.contains("widths")) c.widths = j["widths"].get<std::vector<std::size_t>>();
  if (j.contains("hidden")) c.hidden = j["hidden"].get<std::size_t>();
  if (j.contains("kernel")) c.kernel = j["kernel"].get<std::size_t>();
  c.validate();
}

/// Scorer classes.
enum ScorerClass : std::size_t { kScorerBackground = 0, kScorerIncomplete = 1, kScorerComplete = 2 };

/// Nearest-neighbour resampling of the snippets under `iv` to `window` rows.
template <class S>
BasicTensor<S> resample_window(const FeatureSequence& fs, const TimeInterval& iv,
                               std::size_t window) {
  BasicTensor<S> out({window, fs.dim});
  const double lo = iv.start / fs.snippet_interval;
  const double step = (iv.end - iv.start) / fs.snippet_interval /
                      static_cast<double>(window);
  for (std::size_t i = 0; i < window; ++i) {
    const double pos = lo + (static_cast<double>(i) + 0.5) * step;
    const auto t = static_cast<std::size_t>(std::clamp(
        std::floor(pos), 0.0, static_cast<double>(fs.length - 1)));
    auto row = fs.row(t);
    std::copy(row.begin(), row.end(), out.data() + i * fs.dim);
  }
  return out;
}

template <class S>
class ProposalScorerNet {
 public:
  explicit ProposalScorerNet(ScorerConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t in = cfg_.input_dim;
    for (auto w : cfg_.widths) {
      convs_.emplace_back(cfg_.kernel, in, w);
      in = w;
    }
    fc1_ = LinearLayer<S>(cfg_.pooled_length() * in, cfg_.hidden);
    fc2_ = LinearLayer<S>(cfg_.hidden, 3);
    stage_out_.resize(convs_.size());
    stage_in_shape_.resize(convs_.size());
    argmax_.resize(convs_.size());
  }

  const ScorerConfig& config() const { return cfg_; }

  void init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& c : convs_) c.init(rng);
    fc1_.init(rng);
    fc2_.init(rng);
  }

  ParamList<S> params() {
    ParamList<S> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(out, "scorer.conv" + std::to_string(i));
    }
    fc1_.collect(out, "scorer.fc1");
    fc2_.collect(out, "scorer.fc2");
    return out;
  }

  /// window [window, input_dim] -> logits [1, 3].
  BasicTensor<S> forward(const BasicTensor<S>& window) {
    require(window.shape() == Shape({cfg_.window, cfg_.input_dim}),
            "scorer: expected window " +
                to_string(Shape{cfg_.window, cfg_.input_dim}));
    BasicTensor<S> h = window;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      stage_out_[i] = relu(convs_[i].forward(h));
      stage_in_shape_[i] = stage_out_[i].shape();
      h = maxpool1d(stage_out_[i], 2, argmax_[i]);
    }
    flat_shape_ = h.shape();
    h.reshape({1, h.size()});
    hidden_ = relu(fc1_.forward(h));
    return fc2_.forward(hidden_);
  }

  /// Accumulates parameter gradients; returns d(window).
  BasicTensor<S> backward(const BasicTensor<S>& dlogits) {
    auto d = fc1_.backward(relu_backward(hidden_, fc2_.backward(dlogits)));
    d.reshape(flat_shape_);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      d = maxpool1d_backward(stage_in_shape_[i], argmax_[i], d);
      d = convs_[i].backward(relu_backward(stage_out_[i], d), true);
    }
    return d;
  }

  /// Probability of the "complete" class.
  double score(const BasicTensor<S>& window) {
    auto logits = forward(window);
    return softmax<S>(logits.values())[kScorerComplete];
  }

 private:
  ScorerConfig cfg_;
  std::vector<Conv1dLayer<S>> convs_;
  LinearLayer<S> fc1_, fc2_;
  std::vector<BasicTensor<S>> stage_out_;
  std::vector<Shape> stage_in_shape_;
  std::vector<std::vector<std::size_t>> argmax_;
  Shape flat_shape_;
  BasicTensor<S> hidden_;
};

}  // namespace telkit

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "telkit/gradcheck.hpp"
#include "telkit/model.hpp"
#include "oracles.hpp"

using namespace telkit;
using T64 = BasicTensor<double>;

namespace {

T64 random_tensor(Shape s, std::mt19937_64& rng, double scale = 1.0) {
  T64 t(std::move(s));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

DetectorConfig tiny_detector(BackboneKind kind = BackboneKind::MultiScale) {
  DetectorConfig c;
  c.input_dim = 3;
  c.num_classes = 2;
  c.backbone = kind;
  c.block_channels = {4, 3};
  c.roi_bins = 3;
  c.dilation = 2;
  return c;
}

}  // namespace

TEST(TemporalAggregation, ReceptiveFieldFormula) {
  EXPECT_EQ((TAConfig{6, 3, 3, 1, 1}.receptive_field()), 15u);
  EXPECT_EQ((TAConfig{9, 5, 3, 1, 1}.receptive_field()), 39u);
  EXPECT_THROW((TAConfig{0, 3, 3, 1, 1}.validate()), ValidationError);
  EXPECT_THROW((TAConfig{3, 2, 3, 1, 1}.validate()), ValidationError);
}

TEST(TemporalAggregation, PerturbationMatchesDependencySet) {
  const std::size_t T = 60;
  std::mt19937_64 rng(21);
  for (std::size_t W : {3u, 6u, 9u}) {
    for (auto [kh, kw] : {std::pair<std::size_t, std::size_t>{1, 3}, {3, 3}, {5, 3}}) {
      auto w = random_tensor({kh, kw, 2, 2}, rng);
      auto b = random_tensor({2}, rng);
      auto x = random_tensor({T, 2}, rng);
      const auto base = ta_forward(x, w, b, W);
      ASSERT_EQ(base.shape(), (Shape{T, 2}));
      std::size_t max_span = 0;
      for (std::size_t s = 0; s < T; ++s) {
        auto xp = x;
        xp(s, 0) += 1.0;
        xp(s, 1) -= 0.5;
        const auto y = ta_forward(xp, w, b, W);
        std::set<std::size_t> changed;
        for (std::size_t t = 0; t < T; ++t) {
          if (y(t, 0) != base(t, 0) || y(t, 1) != base(t, 1)) changed.insert(t);
        }
        ASSERT_EQ(changed, oracle::ta_dependents(s, T, W, kh, kw))
            << "W=" << W << " k=" << kh << "x" << kw << " s=" << s;
        max_span = std::max(max_span, *changed.rbegin() - *changed.begin() + 1);
      }
      EXPECT_EQ(max_span, (kh - 1) * W + kw);
    }
  }
}

TEST(TemporalAggregation, SnippetThirtyWithUnitSix) {
  std::mt19937_64 rng(22);
  auto w = random_tensor({3, 3, 1, 1}, rng);
  T64 b({1});
  auto x = random_tensor({60, 1}, rng);
  auto base = ta_forward(x, w, b, 6);
  x(30, 0) += 1.0;
  auto y = ta_forward(x, w, b, 6);
  std::set<std::size_t> changed;
  for (std::size_t t = 0; t < 60; ++t) {
    if (y[t] != base[t]) changed.insert(t);
  }
  EXPECT_EQ(changed, (std::set<std::size_t>{24, 25, 30, 31, 36, 37}));
}

TEST(TemporalAggregation, IdentityPaddingAndConv1dEquivalence) {
  std::mt19937_64 rng(23);
  auto x = random_tensor({17, 3}, rng);
  T64 id({1, 1, 3, 3}), zb({3});
  for (std::size_t c = 0; c < 3; ++c) id[c * 3 + c] = 1.0;
  EXPECT_EQ(ta_forward(x, id, zb, 5), x);

  // One row (W >= T) and kh = 1: plain conv1d, bitwise.
  auto w = random_tensor({1, 5, 3, 2}, rng);
  auto b = random_tensor({2}, rng);
  EXPECT_EQ(ta_forward(x, w, b, 17), conv1d(x, w.reshaped({5, 3, 2}), b));
  EXPECT_EQ(ta_forward(x, w, b, 40), conv1d(x, w.reshaped({5, 3, 2}), b));
  for (std::size_t W : {1u, 4u, 7u, 20u}) {
    EXPECT_EQ(ta_forward(x, random_tensor({3, 3, 3, 2}, rng), b, W).shape(), (Shape{17, 2}));
  }
}

TEST(TemporalAggregation, LayerMatchesFunction) {
  std::mt19937_64 rng(24);
  TemporalAggregation<double> ta(TAConfig{4, 3, 3, 3, 2});
  ta.init(rng);
  auto x = random_tensor({14, 3}, rng);
  EXPECT_EQ(ta.forward(x), ta_forward(x, ta.conv().weight.value, ta.conv().bias.value, 4));
}

TEST(MultiScaleBlock, SingleBranchAndZeroWeights) {
  std::mt19937_64 rng(25);
  const BranchSpec one{3, 3, 4};
  MultiScaleBlock<double> blk(std::span<const BranchSpec>(&one, 1), 3, 2);
  blk.init(rng);
  auto x = random_tensor({12, 3}, rng);
  auto& conv = blk.branches()[0].conv();
  EXPECT_EQ(blk.forward(x), relu(ta_forward(x, conv.weight.value, conv.bias.value, 4)));

  auto branches = default_branches();
  MultiScaleBlock<double> zero(branches, 3, 2);
  auto y = zero.forward(x);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  ASSERT_EQ(branches.size(), 4u);
  EXPECT_EQ(branches[0], (BranchSpec{1, 3, 3}));
  EXPECT_EQ(branches[3], (BranchSpec{3, 3, 9}));
}

TEST(GradCheck, TemporalAggregationBlock) {
  std::mt19937_64 rng(26);
  auto branches = default_branches();
  MultiScaleBlock<double> blk(branches, 3, 4);
  blk.init(rng);
  Param<double> x({20, 3});
  x.value = random_tensor({20, 3}, rng);
  auto r = random_tensor({20, 4}, rng);
  ParamList<double> params{{"x", &x}};
  blk.collect(params, "block");
  auto loss = [&](bool grad) {
    auto y = blk.forward(x.value);
    if (grad) {
      auto dx = blk.backward(r);
      for (std::size_t i = 0; i < dx.size(); ++i) x.grad[i] += dx[i];
    }
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  auto res = grad_check<double>(loss, params);
  EXPECT_LT(res.max_relative_error, 1e-3) << res.worst_param;
}

TEST(GradCheck, FullDetector) {
  for (auto kind : {BackboneKind::MultiScale, BackboneKind::Vanilla, BackboneKind::Dilated}) {
    Detector<double> det(tiny_detector(kind));
    det.init(3);
    std::mt19937_64 rng(27);
    Param<double> x({30, 3});
    x.value = random_tensor({30, 3}, rng);
    std::vector<RoiWindow> rois = {{2.0, 11.5}, {8.25, 20.0}, {0.0, 30.0}, {17.0, 29.0}};
    std::vector<ProposalTarget> targets = {
        {TargetKind::Positive, 1, 0.1, -0.2},
        {TargetKind::Incomplete, 0, 0, 0},
        {TargetKind::Background, -1, 0, 0},
        {TargetKind::Positive, 0, -0.3, 0.4}};
    auto params = det.params();
    params.push_back({"x", &x});
    auto loss = [&](bool grad) {
      auto out = det.forward(x.value, rois);
      DetectorOutputs<double> g;
      const auto lb = detector_loss<double>(out, targets, g);
      if (grad) {
        auto dx = det.backward(g);
        for (std::size_t i = 0; i < dx.size(); ++i) x.grad[i] += dx[i];
      }
      return lb.total;
    };
    auto res = grad_check<double>(loss, params);
    EXPECT_LT(res.max_relative_error, 1e-3) << to_string(kind) << " " << res.worst_param;
  }
}

TEST(Detector, OutputShapesAndDeterminism) {
  Detector<float> det(tiny_detector());
  det.init(1);
  FeatureSequence fs;
  fs.video_id = "v";
  fs.length = 25;
  fs.dim = 3;
  fs.snippet_interval = 0.5;
  std::mt19937_64 rng(28);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (std::size_t i = 0; i < 75; ++i) fs.values.push_back(n(rng));
  std::vector<Proposal> props = {{{1.0, 4.0}, 0.5}, {{1.0, 4.0}, 0.5}, {{0.0, 2.0}, 0.1}};
  auto out = det.forward(fs, props);
  EXPECT_EQ(out.cls.shape(), (Shape{3, 3}));
  EXPECT_EQ(out.completeness.shape(), (Shape{3, 2}));
  EXPECT_EQ(out.regression.shape(), (Shape{3, 4}));
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(out.cls(0, k), out.cls(1, k));
  auto w = roi_window({0.0, 2.0}, 0.5, 25, 0.5);
  EXPECT_DOUBLE_EQ(w.lo, 0.0);
  EXPECT_DOUBLE_EQ(w.hi, 6.0);
  EXPECT_THROW(det.backbone_forward(Tensor({5, 4})), ShapeError);
}

TEST(Detector, ParameterNamesAreUnique) {
  for (auto kind : {BackboneKind::MultiScale, BackboneKind::Vanilla, BackboneKind::Dilated,
                    BackboneKind::Deformable}) {
    Detector<float> det(tiny_detector(kind));
    std::set<std::string> names;
    for (const auto& p : det.params()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  }
  EXPECT_EQ(backbone_from_string("vanilla"), BackboneKind::Vanilla);
  EXPECT_THROW(backbone_from_string("resnet"), ValidationError);
}

TEST(Detector, ConfigJsonRoundTrip) {
  auto c = tiny_detector(BackboneKind::Dilated);
  c.extension = 0.25;
  DetectorConfig d;
  update_from_json(d, to_json(c));
  EXPECT_EQ(c, d);
}

TEST(Targets, Assignment) {
  std::vector<Instance> gts = {{{10, 20}, 1, 3}, {{40, 80}, 2, 5}};
  auto pos = assign_target({10, 19}, gts);
  EXPECT_EQ(pos.kind, TargetKind::Positive);
  EXPECT_EQ(pos.label, 1);
  EXPECT_NEAR(pos.dc, (15.0 - 14.5) / 9.0, 1e-12);
  EXPECT_NEAR(pos.dl, std::log(10.0 / 9.0), 1e-12);

  auto inc = assign_target({50, 58}, gts);  // IoU 0.2, fully inside
  EXPECT_EQ(inc.kind, TargetKind::Incomplete);
  EXPECT_EQ(inc.label, 2);

  EXPECT_EQ(assign_target({85, 95}, gts).kind, TargetKind::Background);
  EXPECT_EQ(assign_target({10, 30}, gts).kind, TargetKind::Ignore);  // IoU 0.5
  EXPECT_EQ(assign_target({0, 1}, {}).kind, TargetKind::Background);

  const TimeInterval p{3, 7}, g{2, 11};
  auto [dc, dl] = regression_targets(p, g);
  auto back = apply_regression(p, dc, dl);
  EXPECT_NEAR(back.start, 2, 1e-12);
  EXPECT_NEAR(back.end, 11, 1e-12);
}

TEST(Loss, TermsAndWeights) {
  DetectorOutputs<double> out;
  out.cls = T64({2, 3});
  out.completeness = T64({2, 2});
  out.regression = T64({2, 4});
  out.regression(0, 2) = 0.25;
  out.regression(0, 3) = -0.5;
  out.completeness(0, 1) = 3.0;
  std::vector<ProposalTarget> t = {{TargetKind::Positive, 1, 0.25, -0.5},
                                   {TargetKind::Background, -1, 0, 0}};
  DetectorOutputs<double> g;
  auto lb = detector_loss<double>(out, t, g);
  EXPECT_NEAR(lb.classification, std::log(3.0), 1e-12);
  EXPECT_DOUBLE_EQ(lb.completeness, 0.0);
  EXPECT_DOUBLE_EQ(lb.regression, 0.0);
  EXPECT_NEAR(lb.total, std::log(3.0), 1e-12);

  std::vector<ProposalTarget> bg = {{TargetKind::Background, -1, 0, 0},
                                    {TargetKind::Ignore, -1, 0, 0}};
  auto only_ce = detector_loss<double>(out, bg, g);
  EXPECT_NEAR(only_ce.total, std::log(3.0), 1e-12);
  for (double v : g.completeness.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.regression.values()) EXPECT_EQ(v, 0.0);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(g.cls(1, k), 0.0);
}

TEST(Loss, DecreasesOnToySet) {
  // Two well separated categories plus background; a fixed batch trained with
  // plain SGD at lr 0.01 for 50 steps.
  FeatureSequence fs;
  fs.video_id = "toy";
  fs.length = 60;
  fs.dim = 3;
  fs.snippet_interval = 1.0;
  for (std::size_t t = 0; t < 60; ++t) {
    const bool a = t >= 10 && t < 22, b = t >= 36 && t < 50;
    fs.values.push_back(a ? 1.0f : 0.0f);
    fs.values.push_back(b ? 1.0f : 0.0f);
    fs.values.push_back(a || b ? 0.0f : 0.5f);
  }
  std::vector<Instance> gts = {{{10, 22}, 0, 3}, {{36, 50}, 1, 4}};
  std::vector<Proposal> props = {{{10, 21}, 0}, {{11, 22}, 0}, {{36, 49}, 0}, {{37, 50}, 0},
                                 {{12, 15}, 0}, {{40, 43}, 0}, {{0, 6}, 0},   {{53, 59}, 0}};
  std::vector<ProposalTarget> targets;
  for (const auto& p : props) targets.push_back(assign_target(p.interval, gts));
  for (auto k : {TargetKind::Positive, TargetKind::Incomplete, TargetKind::Background}) {
    EXPECT_TRUE(std::any_of(targets.begin(), targets.end(),
                            [&](const ProposalTarget& t) { return t.kind == k; }));
  }
  Detector<float> det(tiny_detector());
  det.init(5);
  auto params = det.params();
  double prev = INFINITY;
  for (int step = 0; step < 50; ++step) {
    auto out = det.forward(fs, props);
    DetectorOutputs<float> g;
    const double loss = detector_loss<float>(out, targets, g).total;
    ASSERT_TRUE(std::isfinite(loss));
    EXPECT_LT(loss, prev) << "step " << step;
    prev = loss;
    det.backward(g);
    sgd_step(params, {0.01, 0.0});
  }
}

TEST(Decode, ZeroRegressionKeepsBoundaries) {
  DetectorOutputs<double> out;
  out.cls = T64({2, 3});
  out.completeness = T64({2, 2});
  out.regression = T64({2, 4});
  out.cls(0, 0) = 2.0;
  out.cls(1, 1) = 2.0;
  std::vector<Proposal> props = {{{3, 9}, 0}, {{20, 30}, 0}};
  auto dets = decode_detections<double>(props, out);
  ASSERT_EQ(dets.size(), 4u);
  for (const auto& d : dets) {
    EXPECT_TRUE(d.interval == props[0].interval || d.interval == props[1].interval);
  }
  // Score = softmax prob * sigmoid(0).
  const double p = std::exp(2.0) / (std::exp(2.0) + 2.0);
  EXPECT_NEAR(dets[0].score, 0.5 * p, 1e-12);
}

TEST(Decode, FusionAndClamping) {
  std::mt19937_64 rng(29);
  DetectorOutputs<double> out;
  out.cls = random_tensor({3, 3}, rng);
  out.completeness = random_tensor({3, 2}, rng);
  out.regression = random_tensor({3, 4}, rng, 0.2);
  std::vector<Proposal> props = {{{3, 9}, 0}, {{20, 30}, 0}, {{1, 38}, 0}};
  DecodeOptions opt;
  opt.duration = 40.0;
  auto plain = decode_detections<double>(props, out, opt);
  auto fused = decode_detections<double>(props, out, opt, &out);
  ASSERT_EQ(plain.size(), fused.size());
  for (std::size_t i = 0; i < plain.size(); ++i) {
    EXPECT_NEAR(plain[i].score, fused[i].score, 1e-15);
    EXPECT_NEAR(plain[i].interval.start, fused[i].interval.start, 1e-12);
    EXPECT_NEAR(plain[i].interval.end, fused[i].interval.end, 1e-12);
  }
  for (const auto& d : plain) {
    EXPECT_GE(d.interval.start, 0.0);
    EXPECT_LE(d.interval.end, 40.0);
  }

  // Fused scores are the 2:3 blend of the two streams.
  DetectorOutputs<double> other = out;
  other.completeness = random_tensor({3, 2}, rng);
  opt.nms_threshold = 1.01;  // keep everything
  auto a = decode_detections<double>(props, out, opt);
  auto b = decode_detections<double>(props, other, opt);
  auto f = decode_detections<double>(props, out, opt, &other);
  auto key = [](const Detection& d) { return std::make_pair(d.label, d.interval.start); };
  std::map<std::pair<int, double>, double> sa, sb;
  for (const auto& d : a) sa[key(d)] = d.score;
  for (const auto& d : b) sb[key(d)] = d.score;
  for (const auto& d : f) EXPECT_NEAR(d.score, 0.4 * sa.at(key(d)) + 0.6 * sb.at(key(d)), 1e-12);
}

TEST(Decode, NestedSegmentsKeepOnlyBest) {
  DetectorOutputs<double> out;
  out.cls = T64({3, 2});
  out.completeness = T64({3, 1});
  out.regression = T64({3, 2});
  out.cls(0, 0) = 3.0;
  out.cls(1, 0) = 2.0;
  out.cls(2, 0) = 1.0;
  std::vector<Proposal> props = {{{0, 20}, 0}, {{10, 20}, 0}, {{12, 20}, 0}};
  auto dets = decode_detections<double>(props, out);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].interval, (TimeInterval{0, 20}));
}

TEST(Decode, EquivariantToTimeShifts) {
  // Shifting features by a multiple of every unit size (18 snippets) with
  // zero-bias layers and zero background shifts the detections exactly.
  Detector<double> det(tiny_detector());
  det.init(9);
  std::mt19937_64 rng(30);
  const std::size_t T = 90, shift = 18;
  FeatureSequence a;
  a.video_id = "a";
  a.length = T;
  a.dim = 3;
  a.snippet_interval = 1.0;
  a.values.assign(T * 3, 0.0f);
  FeatureSequence b = a;
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (std::size_t t = 18; t < 45; ++t) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = n(rng);
      a.values[t * 3 + c] = v;
      b.values[(t + shift) * 3 + c] = v;
    }
  }
  std::vector<Proposal> pa = {{{22, 30}, 0}, {{25, 40}, 0}, {{30, 34}, 0}};
  std::vector<Proposal> pb;
  for (auto p : pa) pb.push_back({{p.interval.start + shift, p.interval.end + shift}, 0});
  auto oa = det.forward(a, pa);
  auto ob = det.forward(b, pb);
  EXPECT_EQ(oa.cls, ob.cls);
  EXPECT_EQ(oa.regression, ob.regression);
  auto da = decode_detections<double>(pa, oa);
  auto db = decode_detections<double>(pb, ob);
  ASSERT_EQ(da.size(), db.size());
  for (std::size_t i = 0; i < da.size(); ++i) {
    EXPECT_EQ(da[i].label, db[i].label);
    EXPECT_DOUBLE_EQ(da[i].score, db[i].score);
    EXPECT_NEAR(da[i].interval.start + shift, db[i].interval.start, 1e-9);
    EXPECT_NEAR(da[i].interval.end + shift, db[i].interval.end, 1e-9);
  }
}

TEST(Scorer, ZeroWeightsGiveUniformScore) {
  ScorerConfig cfg;
  cfg.input_dim = 4;
  cfg.widths = {3, 4, 4, 5};
  cfg.hidden = 6;
  ProposalScorerNet<float> net(cfg);
  Tensor w({32, 4}, 0.7f);
  EXPECT_NEAR(net.score(w), 1.0 / 3.0, 1e-7);
}

TEST(Scorer, ParameterCount) {
  ScorerConfig published;
  published.input_dim = 1024;
  ProposalScorerNet<float> net(published);
  EXPECT_EQ(parameter_count(net.params()), published.parameter_count());
  // 4 conv stages over 1024 inputs, FC 2*1024 -> 512 -> 3.
  const std::size_t convs = 3 * 1024 * 128 + 128 + 3 * 128 * 256 + 256 + 3 * 256 * 512 + 512 +
                            3 * 512 * 1024 + 1024;
  EXPECT_EQ(published.parameter_count(), convs + 2 * 1024 * 512 + 512 + 512 * 3 + 3);
}

TEST(Scorer, GradCheck) {
  ScorerConfig cfg;
  cfg.input_dim = 3;
  cfg.widths = {4, 4, 5, 5};
  cfg.hidden = 6;
  ProposalScorerNet<double> net(cfg);
  net.init(4);
  std::mt19937_64 rng(31);
  Param<double> x({32, 3});
  x.value = random_tensor({32, 3}, rng);
  auto params = net.params();
  params.push_back({"x", &x});
  auto loss = [&](bool grad) {
    auto logits = net.forward(x.value);
    T64 g({1, 3});
    const double l = softmax_cross_entropy<double>(logits.values(), 2, g.values());
    if (grad) {
      auto dx = net.backward(g);
      for (std::size_t i = 0; i < dx.size(); ++i) x.grad[i] += dx[i];
    }
    return l;
  };
  auto res = grad_check<double>(loss, params);
  EXPECT_LT(res.max_relative_error, 1e-3) << res.worst_param;
}

TEST(Scorer, ResampleWindow) {
  FeatureSequence fs;
  fs.length = 10;
  fs.dim = 1;
  fs.snippet_interval = 1.0;
  for (int t = 0; t < 10; ++t) fs.values.push_back(static_cast<float>(t));
  auto w = resample_window<float>(fs, {2.0, 6.0}, 8);
  EXPECT_EQ(w.shape(), (Shape{8, 1}));
  EXPECT_FLOAT_EQ(w[0], 2.0f);
  EXPECT_FLOAT_EQ(w[7], 5.0f);
  auto edge = resample_window<float>(fs, {9.5, 10.0}, 4);
  for (float v : edge.values()) EXPECT_FLOAT_EQ(v, 9.0f);
}

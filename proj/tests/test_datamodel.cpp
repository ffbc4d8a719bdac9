#include <gtest/gtest.h>

#include <random>

#include "telkit/datamodel.hpp"
#include "test_util.hpp"

using namespace telkit;

namespace {

json one_video(json instance, json boundaries = nullptr) {
  json v = {{"id", "v0"}, {"duration", 60.0}, {"instances", json::array({instance})}};
  if (!boundaries.is_null()) v["shot_boundaries"] = boundaries;
  return {{"categories", {"fight", "talk"}}, {"videos", json::array({v})}};
}

FeatureSequence small_features() {
  FeatureSequence fs;
  fs.video_id = "v0";
  fs.length = 4;
  fs.dim = 2;
  fs.snippet_interval = 0.8f;
  fs.values = {1, 2, 3, 4, 5, 6, 7, 8};
  return fs;
}

}  // namespace

TEST(Annotations, ShotCountDerivedFromBoundaries) {
  auto ds = dataset_from_json(one_video(
      {{"start", 5.0}, {"end", 25.0}, {"label", "fight"}}, json::array({10.0, 20.0, 40.0})));
  ASSERT_EQ(ds.videos.size(), 1u);
  EXPECT_EQ(ds.videos[0].instances[0].num_shots, 3);
  EXPECT_EQ(ds.videos[0].instances[0].label, 0);
}

TEST(Annotations, ExplicitShotCountWins) {
  auto ds = dataset_from_json(
      one_video({{"start", 5.0}, {"end", 25.0}, {"label", "talk"}, {"num_shots", 19}}));
  EXPECT_EQ(ds.videos[0].instances[0].num_shots, 19);
  auto ds2 = dataset_from_json(one_video(
      {{"start", 5.0}, {"end", 25.0}, {"label", "talk"}, {"num_shots", 19}},
      json::array({10.0})));
  EXPECT_EQ(ds2.videos[0].instances[0].num_shots, 19);
}

TEST(Annotations, InvertedIntervalIsRejected) {
  EXPECT_THROW(dataset_from_json(one_video({{"start", 25.0}, {"end", 25.0}, {"label", "fight"}})),
               ValidationError);
  EXPECT_THROW(dataset_from_json(one_video({{"start", 30.0}, {"end", 25.0}, {"label", "fight"}})),
               ValidationError);
}

TEST(Annotations, ErrorsCarryFieldContext) {
  try {
    dataset_from_json(one_video({{"start", "x"}, {"end", 25.0}, {"label", "fight"}}));
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("videos[0].instances[0].start"), std::string::npos)
        << e.what();
  }
  try {
    dataset_from_json(one_video({{"start", 1.0}, {"end", 2.0}, {"label", "dance"}}));
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("dance"), std::string::npos);
  }
}

TEST(Annotations, InvariantViolations) {
  EXPECT_THROW(dataset_from_json(one_video({{"start", 5.0}, {"end", 70.0}, {"label", "fight"}})),
               ValidationError);
  EXPECT_THROW(dataset_from_json(one_video({{"start", 5.0}, {"end", 10.0}, {"label", "fight"}},
                                           json::array({20.0, 10.0}))),
               ValidationError);
  EXPECT_THROW(dataset_from_json(one_video({{"start", 5.0}, {"end", 10.0}, {"label", "fight"}},
                                           json::array({0.0}))),
               ValidationError);
  auto j = one_video({{"start", 5.0}, {"end", 10.0}, {"label", "fight"}});
  j["categories"] = {"a", "a"};
  EXPECT_THROW(dataset_from_json(j), ValidationError);
  auto k = one_video({{"start", 5.0}, {"end", 10.0}, {"label", "fight"}});
  k["videos"].push_back(k["videos"][0]);
  EXPECT_THROW(dataset_from_json(k), ValidationError);
  EXPECT_THROW(detail::parse_json("{not json", "inline"), FormatError);
}

TEST(Annotations, ShotCountMonotoneInBoundaries) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 60.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto iv = testutil::random_interval(rng, 60.0);
    std::vector<double> b;
    int before = shots_from_boundaries(iv, b);
    for (int k = 0; k < 10; ++k) {
      const double x = u(rng);
      b.push_back(x);
      const int after = shots_from_boundaries(iv, b);
      EXPECT_EQ(after, before + ((x > iv.start && x < iv.end) ? 1 : 0));
      before = after;
    }
  }
}

TEST(Annotations, JsonRoundTrip) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto mc = testutil::random_micro_case(rng, 5, 4, 3, 3);
    mc.ds.videos[0].shot_boundaries = std::vector<double>{1.5, 7.25, 50.0};
    auto back = dataset_from_json(json::parse(to_json(mc.ds).dump()));
    EXPECT_EQ(back, mc.ds);
  }
}

TEST(Annotations, FileRoundTrip) {
  testutil::TempDir dir("ann");
  auto ds = dataset_from_json(
      one_video({{"start", 5.0}, {"end", 25.0}, {"label", "fight"}}, json::array({10.0})));
  save_annotations(dir / "a.json", ds);
  EXPECT_EQ(load_annotations(dir / "a.json"), ds);
  EXPECT_FALSE(std::filesystem::exists(dir / "a.json.tmp"));
}

TEST(Detections, RoundTripAndUnknownLabels) {
  std::vector<std::string> cats = {"fight", "talk"};
  DetectionMap dets;
  dets["v0"] = {{{1.0, 2.5}, 1, 0.75}, {{0.1, 9.0}, 0, 0.125}};
  dets["v1"] = {};
  auto back = detections_from_json(json::parse(to_json(dets, cats).dump()), cats);
  EXPECT_EQ(back, dets);

  json bad = {{"videos",
               {{{"id", "v0"},
                 {"detections", {{{"start", 1}, {"end", 2}, {"label", "dance"}, {"score", 0.5}}}}}}}};
  EXPECT_THROW(detections_from_json(bad, cats), ValidationError);
}

TEST(Proposals, RoundTrip) {
  ProposalMap props;
  props["v0"] = {{{0.0, 10.0}, 0.5}, {{3.0, 4.0}, 1.0}};
  EXPECT_EQ(proposals_from_json(json::parse(to_json(props).dump())), props);
}

TEST(Features, DecodeHeaderAndPayload) {
  const auto fs = small_features();
  const auto bytes = encode_features(fs);
  ASSERT_EQ(bytes.size(), 16u + 8u * 4u);
  auto back = decode_features(bytes, "v0");
  EXPECT_EQ(back.length, 4u);
  EXPECT_EQ(back.dim, 2u);
  EXPECT_FLOAT_EQ(static_cast<float>(back.snippet_interval), 0.8f);
  EXPECT_EQ(back.values, fs.values);
  EXPECT_FLOAT_EQ(back.row(2)[1], 6.0f);
}

TEST(Features, Errors) {
  auto bytes = encode_features(small_features());
  auto wrong = bytes;
  wrong[0] = 'X';
  EXPECT_THROW(decode_features(wrong, "v"), FormatError);
  EXPECT_THROW(decode_features(bytes.substr(0, bytes.size() - 3), "v"), FormatError);
  EXPECT_THROW(decode_features(bytes.substr(0, 10), "v"), FormatError);
  EXPECT_THROW(decode_features(bytes + "x", "v"), FormatError);
  auto fs = small_features();
  fs.values[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(decode_features(encode_features(fs), "v"), FormatError);
  fs.values[3] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(decode_features(encode_features(fs), "v"), FormatError);
}

TEST(Features, ByteExactFileRoundTrip) {
  testutil::TempDir dir("tff");
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 1.0f);
  FeatureSequence fs;
  fs.video_id = "clip";
  fs.length = 17;
  fs.dim = 5;
  fs.snippet_interval = 0.8f;
  for (std::size_t i = 0; i < 85; ++i) fs.values.push_back(n(rng));
  save_features(dir / "clip.tff", fs);
  const auto first = detail::read_file(dir / "clip.tff");
  const auto loaded = load_features(dir / "clip.tff");
  EXPECT_EQ(loaded, fs);
  save_features(dir / "again.tff", loaded);
  EXPECT_EQ(detail::read_file(dir / "again.tff"), first);
}

TEST(Snippets, TimeToSnippet) {
  auto fs = small_features();
  EXPECT_EQ(time_to_snippet(0.0, fs), 0u);
  EXPECT_EQ(time_to_snippet(4 * 0.8, fs), 3u);
  EXPECT_EQ(time_to_snippet(2.0, fs), 2u);
  std::size_t prev = 0;
  for (double t = 0.0; t <= 3.2; t += 0.01) {
    const auto s = time_to_snippet(t, fs);
    EXPECT_GE(s, prev);
    prev = s;
  }
}

TEST(Snippets, RangeNeverEmpty) {
  auto fs = small_features();
  auto [a, b] = snippet_range({0.1, 0.2}, fs);
  EXPECT_EQ(a, 0u);
  EXPECT_EQ(b, 1u);
  std::tie(a, b) = snippet_range({0.0, 3.2}, fs);
  EXPECT_EQ(a, 0u);
  EXPECT_EQ(b, 4u);
  std::tie(a, b) = snippet_range({0.9, 1.7}, fs);
  EXPECT_EQ(a, 1u);
  EXPECT_EQ(b, 3u);
}

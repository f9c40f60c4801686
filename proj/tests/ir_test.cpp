#include "signloop/ir/generate.hpp"
#include "signloop/ir/patch.hpp"
#include "signloop/ir/random.hpp"
#include "signloop/ir/segment.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace signloop;
using namespace signloop::ir;

namespace signloop::ir {
void PrintTo(const ActionSegment& s, std::ostream* os) { *os << serialize(s, -1); }
}  // namespace signloop::ir

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json fixture() { return Json::parse(read_file(std::string(SIGNLOOP_SOURCE_DIR) + "/samples/thank_you.json")); }

template <class F>
ValidationError expect_validation_error(F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e;
  }
  ADD_FAILURE() << "no ValidationError thrown";
  return ValidationError("", "", "");
}

}  // namespace

TEST(Validate, FixtureInstance) {
  std::vector<ValidationWarning> warnings;
  const ActionSegment s = validate(fixture(), &warnings);
  EXPECT_EQ(s.gloss_id, "THANK_YOU");
  EXPECT_EQ(s.handshape.type, "C");
  EXPECT_EQ(s.handshape.finger_config, (FingerConfig{0.8, 1.0, 0.5, 0.5, 0.7}));
  ASSERT_EQ(s.trajectory.size(), 4u);
  EXPECT_EQ(s.trajectory[1], (TrajectoryPoint{0.12, -0.05, 0.22, 0.04}));
  EXPECT_EQ(s.trajectory[3], (TrajectoryPoint{0.18, -0.12, 0.26, 0.12}));
  EXPECT_DOUBLE_EQ(s.duration, 0.20);
  EXPECT_EQ(s.non_manual_markers, (NonManualMarkers{"smile", "tilt_forward", "straight"}));
  EXPECT_EQ(s.emphasis, Emphasis::mild);
  EXPECT_TRUE(s.extra.empty());
  // 0.20 - 0.12 = 0.08 s of slack = 2 frames at 25 fps
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_EQ(warnings[0].path, "duration");
}

TEST(Validate, FixtureRoundTrips) {
  const ActionSegment s = validate(fixture());
  EXPECT_EQ(validate_text(serialize(s)), s);
  EXPECT_EQ(to_json(s), fixture());
  EXPECT_EQ(validate_text(serialize(s, -1)), s);
}

TEST(Validate, DistinctPathBearingErrors) {
  struct Case {
    std::string path;
    Json value;
    std::string code;
    std::string error_path;
  };
  const std::vector<Case> cases{
      {"/emphasis", "extreme", "enum_value", "emphasis"},
      {"/trajectory/2/t_offset", 0.02, "non_monotone", "trajectory.2.t_offset"},
      {"/handshape/finger_config/index", 1.3, "out_of_range", "handshape.finger_config.index"},
      {"/duration", "0.2", "wrong_type", "duration"},
      {"/duration", 0.0, "out_of_range", "duration"},
      {"/trajectory", Json::array(), "empty_trajectory", "trajectory"},
      {"/trajectory/0/t_offset", -0.01, "out_of_range", "trajectory.0.t_offset"},
      {"/gloss_id", 7, "wrong_type", "gloss_id"},
      {"/handshape/shape", "C", "unknown_field", "handshape.shape"},
      {"/speed", 1.0, "rejected_field", "speed"},
      {"/duration", 0.1, "out_of_range", "trajectory.3.t_offset"},
  };
  for (const auto& c : cases) {
    Json doc = fixture();
    doc[Json::json_pointer(c.path)] = c.value;
    const auto e = expect_validation_error([&] { validate(doc); });
    EXPECT_EQ(e.code(), c.code) << c.path;
    EXPECT_EQ(e.path(), c.error_path) << c.path;
  }
  Json doc = fixture();
  doc.erase("handshape");
  const auto e = expect_validation_error([&] { validate(doc); });
  EXPECT_EQ(e.code(), "missing_field");
  EXPECT_EQ(e.path(), "handshape");
  EXPECT_EQ(expect_validation_error([] { validate_text("{not json"); }).code(), "syntax");
}

TEST(Validate, DescendingOffsetsExample) {
  Json doc = fixture();
  doc["trajectory"][1]["t_offset"] = 0.12;
  doc["trajectory"][2]["t_offset"] = 0.08;
  EXPECT_EQ(expect_validation_error([&] { validate(doc); }).code(), "non_monotone");
}

TEST(Validate, UnknownMarkerWarnsButPasses) {
  Json doc = fixture();
  doc["non_manual_markers"]["eye_gaze"] = "sideways";
  std::vector<ValidationWarning> w;
  validate(doc, &w);
  EXPECT_TRUE(std::any_of(w.begin(), w.end(), [](const auto& x) { return x.path == "non_manual_markers.eye_gaze"; }));
}

TEST(Serialize, ExtrasPreservedAndEmptyTrajectoryRejected) {
  Json doc = fixture();
  doc["camera_tag"] = "front";
  doc["comment"] = Json{{"note", "check"}, {"n", 3}};
  const ActionSegment s = validate(doc);
  EXPECT_EQ(s.extra["camera_tag"], "front");
  const Json again = Json::parse(serialize(s));
  EXPECT_EQ(again["camera_tag"], "front");
  EXPECT_EQ(again["comment"]["n"], 3);
  EXPECT_EQ(validate(again), s);
  ActionSegment bad = s;
  bad.trajectory.clear();
  EXPECT_THROW(serialize(bad), ValidationError);
}

TEST(Serialize, CanonicalFieldOrder) {
  Json doc = fixture();
  Json shuffled = Json::object();
  shuffled["emphasis"] = doc["emphasis"];
  shuffled["camera_tag"] = "x";
  for (const auto& [k, v] : doc.items()) shuffled[k] = v;
  const Json out = to_json(validate(shuffled));
  std::vector<std::string> keys;
  for (const auto& [k, _] : out.items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"gloss_id", "handshape", "trajectory", "duration", "non_manual_markers",
                                            "emphasis", "camera_tag"}));
}

TEST(Serialize, RandomSegmentsRoundTrip) {
  Rng rng = make_rng(77);
  for (int i = 0; i < 1000; ++i) {
    const ActionSegment s = random_segment(rng);
    ASSERT_EQ(validate_text(serialize(s, i % 2 == 0 ? -1 : 2)), s) << serialize(s);
  }
}

TEST(Document, ParsesBothShapes) {
  IrDocument d;
  d.fps = 30;
  Rng rng = make_rng(3);
  for (int i = 0; i < 3; ++i) d.segments.push_back(random_segment(rng));
  d.extra["session"] = "abc";
  const Json j = to_json(d);
  EXPECT_EQ(j["schema"], "sign-ir/1");
  EXPECT_EQ(parse_document(j), d);
  EXPECT_EQ(parse_document(fixture()).segments.size(), 1u);
  Json bad = j;
  bad["schema"] = "sign-ir/2";
  EXPECT_EQ(expect_validation_error([&] { parse_document(bad); }).path(), "schema");
  bad = j;
  bad["segments"][1]["emphasis"] = "loud";
  EXPECT_EQ(expect_validation_error([&] { parse_document(bad); }).path(), "segments.1.emphasis");
}

TEST(Patch, DurationEditLengthensRange) {
  const std::vector<ActionSegment> segs{validate(fixture())};
  for (double fps : {25.0, 30.0}) {
    const auto before = segment_frame_spans(segs, fps)[0];
    const Patch p = parse_patch(Json{{"target_segment", 0}, {"set", {{"duration", 0.30}}}});
    const auto r = apply_patch(segs, p, fps);
    const auto d = diff_segments(segs, r.segments);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].path, "duration");
    EXPECT_LE(std::abs(static_cast<double>(r.touched.size() - before.size()) - 0.10 * fps), 0.5);
    EXPECT_TRUE(r.semantic);
  }
  EXPECT_EQ(apply_patch(segs, parse_patch(Json{{"target_segment", 0}, {"set", {{"duration", 0.30}}}}), 30.0).touched,
            (FrameRange{1, 9}));
}

TEST(Patch, EmphasisEditIsSingleFieldDiff) {
  const std::vector<ActionSegment> segs{validate(fixture())};
  const auto r = apply_patch(segs, parse_patch(Json::parse(read_file(std::string(SIGNLOOP_SOURCE_DIR) + "/samples/emphasis_patch.json"))), 25);
  const auto d = diff_segments(segs, r.segments);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].path, "emphasis");
  EXPECT_EQ(d[0].old_value, "mild");
  EXPECT_EQ(d[0].new_value, "strong");
}

TEST(Patch, RejectedFieldsRefused) {
  const std::vector<ActionSegment> segs{validate(fixture())};
  for (std::string_view f : kRejectedFields) {
    const Json doc{{"target_segment", 0}, {"set", {{std::string(f), 1.0}}}};
    EXPECT_EQ(expect_validation_error([&] { parse_patch(doc); }).code(), "rejected_field") << f;
    const Patch raw{0, {{std::string(f), 1.0}}};
    EXPECT_EQ(expect_validation_error([&] { apply_patch(segs, raw, 25); }).code(), "rejected_field") << f;
  }
}

TEST(Patch, UiOnlyKeysFlaggedNonSemantic) {
  const std::vector<ActionSegment> segs{validate(fixture())};
  const Patch p = parse_patch(Json{{"target_segment", 0}, {"set", {{"camera_tag", "side"}}}});
  const auto r = apply_patch(segs, p, 25);
  EXPECT_FALSE(r.semantic);
  EXPECT_EQ(r.ui_only_paths, (std::vector<std::string>{"camera_tag"}));
  EXPECT_EQ(r.segments[0].extra["camera_tag"], "side");
  const auto removed = apply_patch(r.segments, parse_patch(Json{{"target_segment", 0}, {"set", {{"camera_tag", nullptr}}}}), 25);
  EXPECT_EQ(removed.segments, segs);
}

TEST(Patch, NestedPathsAndMerge) {
  const std::vector<ActionSegment> segs{validate(fixture())};
  const Patch p = parse_patch(Json::parse(R"({"target_segment": 0,
      "set": {"trajectory.1.x": 0.5},
      "merge": {"handshape": {"finger_config": {"ring": 0.9}}}})"));
  const auto r = apply_patch(segs, p, 25);
  const auto d = diff_segments(segs, r.segments);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].path, "handshape.finger_config.ring");
  EXPECT_EQ(d[1].path, "trajectory.1.x");
}

TEST(Patch, FailureLeavesInputUntouched) {
  const std::vector<ActionSegment> segs{validate(fixture())};
  const auto copy = segs;
  const auto bad = [&](const Json& doc) { return expect_validation_error([&] { apply_patch(segs, parse_patch(doc), 25); }); };
  EXPECT_EQ(bad(Json{{"target_segment", 0}, {"set", {{"emphasis", "extreme"}}}}).path(), "emphasis");
  EXPECT_EQ(bad(Json{{"target_segment", 0}, {"set", {{"handshape.finger_config.index", 1.3}}}}).path(),
            "handshape.finger_config.index");
  EXPECT_EQ(bad(Json{{"target_segment", 3}, {"set", {{"emphasis", "strong"}}}}).code(), "bad_target");
  EXPECT_EQ(bad(Json{{"target_segment", 0}, {"set", {{"trajectory.9.x", 1.0}}}}).code(), "bad_path");
  EXPECT_EQ(bad(Json{{"target_segment", 0}, {"set", {{"handshape.thumb", 1.0}}}}).code(), "unknown_field");
  EXPECT_EQ(bad(Json{{"target_segment", 0}}).code(), "empty_patch");
  EXPECT_EQ(segs, copy);
}

TEST(Patch, LocalityOverRandomPatches) {
  Rng rng = make_rng(5);
  std::vector<ActionSegment> segs;
  for (int i = 0; i < 6; ++i) segs.push_back(random_segment(rng));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t target = static_cast<std::size_t>(trial) % segs.size();
    Patch p{target, {}};
    p.ops.push_back({"handshape.finger_config.middle", u(rng)});
    p.ops.push_back({"emphasis", std::string(to_string(static_cast<Emphasis>(trial % 3)))});
    const auto r = apply_patch(segs, p, 25);
    for (const auto& e : diff_segments(segs, r.segments)) {
      ASSERT_EQ(e.segment, target);
      ASSERT_TRUE(e.path == "handshape.finger_config.middle" || e.path == "emphasis") << e.path;
    }
    segs = r.segments;
  }
}

TEST(Diff, IdentityEmptyAndInverse) {
  Rng rng = make_rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ActionSegment> a, b;
    const int n = 1 + trial % 4, m = 1 + (trial / 4) % 4;
    for (int i = 0; i < n; ++i) a.push_back(random_segment(rng));
    for (int i = 0; i < m; ++i) b.push_back(random_segment(rng));
    if (trial % 3 == 0) b = a, b[0].duration += 0.5;
    EXPECT_TRUE(diff_segments(a, a).empty());
    ASSERT_EQ(apply_diff(a, diff_segments(a, b)), b);
  }
}

TEST(Diff, DurationOnlyEditIsOneEntry) {
  const std::vector<ActionSegment> a{validate(fixture())};
  auto b = a;
  b[0].duration = 0.25;
  const auto d = diff_segments(a, b);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(to_json(d[0]), (Json{{"segment", 0}, {"op", "replace"}, {"path", "duration"}, {"old", 0.2}, {"new", 0.25}}));
}

TEST(FrameSpans, PrefixSums) {
  Rng rng = make_rng(1);
  std::vector<ActionSegment> segs(3, random_segment(rng));
  segs[0].duration = 0.08;
  segs[1].duration = 0.12;
  segs[2].duration = 0.2;
  for (auto& s : segs) s.trajectory = {{0, 0, 0, 0}};
  const auto spans = segment_frame_spans(segs, 25);
  EXPECT_EQ(spans[0], (FrameRange{1, 2}));
  EXPECT_EQ(spans[1], (FrameRange{3, 5}));
  EXPECT_EQ(spans[2], (FrameRange{6, 10}));
  EXPECT_EQ(segment_at_frame(spans, 3), 1u);
  EXPECT_EQ(segment_at_frame(spans, 10), 2u);
  EXPECT_EQ(segment_at_frame(spans, 12), 2u);
}

namespace {

VaeConfig small_vae() {
  VaeConfig c;
  c.latent_dim = 4;
  c.hidden1 = 8;
  c.hidden2 = 6;
  return c;
}

}  // namespace

TEST(Generate, RunLengthSegments) {
  const LatentVae vae(small_vae());
  const auto vocab = GlossVocab::toy(10);
  Eigen::MatrixXd Z = Eigen::MatrixXd::Random(5, 4);
  const auto segs = generate_action_structure(Z, {1, 1, 2, 2, 2}, {0, 1, 1, 3, 3}, 25, vae, vocab);
  ASSERT_EQ(segs.size(), 2u);
  EXPECT_EQ(segs[0].gloss_id, "HELLO");
  EXPECT_EQ(segs[1].gloss_id, "THANK_YOU");
  EXPECT_NEAR(segs[0].duration, 0.08, 1e-12);
  EXPECT_NEAR(segs[1].duration, 0.12, 1e-12);
  EXPECT_EQ(segs[0].trajectory.size(), 2u);
  EXPECT_EQ(segs[1].trajectory.size(), 3u);
  EXPECT_EQ(segs[1].non_manual_markers.facial_expression, "raised_brows");
  const auto single = generate_action_structure(Z, {4, 4, 4, 4, 4}, {0, 0, 0, 0, 0}, 25, vae, vocab);
  ASSERT_EQ(single.size(), 1u);
  EXPECT_NEAR(single[0].duration, 0.2, 1e-12);
  EXPECT_THROW(generate_action_structure(Z, {1, 1}, {0, 0, 0, 0, 0}, 25, vae, vocab), ConfigError);
}

TEST(Generate, ClosureAllSegmentsValidate) {
  const LatentVae vae(small_vae());
  const auto vocab = GlossVocab::toy(100);
  Rng rng = make_rng(4);
  std::uniform_int_distribution<int> g(0, 99), a(0, 6), len(1, 60);
  for (int trial = 0; trial < 100; ++trial) {
    const int T = len(rng);
    Eigen::MatrixXd Z = Eigen::MatrixXd::Random(T, 4) * 3;
    std::vector<int> G, A;
    int cur = g(rng);
    for (int t = 0; t < T; ++t) {
      if (t % 4 == 0) cur = g(rng);
      G.push_back(cur);
      A.push_back(a(rng));
    }
    const auto segs = generate_action_structure(Z, G, A, 25, vae, vocab);
    long frames = 0;
    for (const auto& s : segs) {
      ASSERT_EQ(validate(to_json(s)), s);
      frames += static_cast<long>(s.trajectory.size());
    }
    ASSERT_EQ(frames, T);
    ASSERT_EQ(segment_frame_spans(segs, 25).back().last, T);
  }
}

TEST(Generate, HandshapePrototypeLookup) {
  Eigen::VectorXd pose = Eigen::VectorXd::Zero(228);
  pose.segment(75, 143).setConstant(8.0);
  const auto h = decode_handshape(pose);
  EXPECT_EQ(h.type, "5");
  for (double v : h.finger_config.values()) {
    EXPECT_GT(v, 0.99);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Generate, ConditioningFollowsSpans) {
  const auto vocab = GlossVocab::toy(10);
  std::vector<ActionSegment> segs(2, validate(fixture()));
  segs[1].gloss_id = "HELP";
  segs[1].emphasis = Emphasis::strong;
  const auto c = conditioning_from_segments(segs, vocab, 25, 12);
  ASSERT_EQ(c.size(), 12u);
  EXPECT_EQ(c[0].gloss, vocab.index("THANK_YOU"));
  EXPECT_EQ(c[4].emphasis, 0.5);
  EXPECT_EQ(c[5].gloss, vocab.index("HELP"));
  EXPECT_EQ(c[5].emphasis, 1.0);
  EXPECT_EQ(c[11].gloss, vocab.index("HELP"));
  EXPECT_EQ(vocab.index("NOT_A_GLOSS"), 0);
}

TEST(MajorityFilter, RemovesFlicker) {
  EXPECT_EQ(majority_filter({1, 1, 2, 1, 1, 3, 3, 3}, 1), (std::vector<int>{1, 1, 1, 1, 1, 3, 3, 3}));
  EXPECT_EQ(majority_filter({1, 2, 1}, 0), (std::vector<int>{1, 2, 1}));
}

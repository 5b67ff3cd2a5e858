#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "signkit/features.hpp"
#include "signkit/layout.hpp"
#include "signkit/synthetic.hpp"

using namespace signkit;

namespace {

double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a <= -M_PI) a += 2.0 * M_PI;
  return a == -M_PI ? M_PI : a;
}

// One component, K 2D points, all confidences 1.
PoseSequence grid_pose(const std::vector<std::vector<std::pair<float, float>>>& frames,
                       const std::string& name = "BODY") {
  PoseSequence p;
  p.header.fps = 25.0f;
  ComponentSpec c;
  c.name = name;
  c.point_count = static_cast<std::uint16_t>(frames.front().size());
  c.dims = 2;
  p.header.components.push_back(c);
  p.body.frame_count = frames.size();
  for (const auto& frame : frames) {
    for (const auto& [x, y] : frame) {
      p.body.coords.push_back(x);
      p.body.coords.push_back(y);
    }
    for (std::size_t i = 0; i < frame.size(); ++i)
      p.body.confidences.push_back(1.0f);
  }
  return p;
}

PoseSequence synth_pose(int class_id = 0, Hand handedness = Hand::Right,
                        int frames = 12, double noise = 0.0,
                        std::uint64_t seed = 5) {
  synth::SignerProfile prof;
  prof.scale = 1.0;
  prof.speed = 1.0;
  prof.noise_sd = noise;
  prof.handedness = handedness;
  return synth::synthesize_sample(class_id, prof, frames, seed);
}

}  // namespace

TEST_CASE("normalize maps anchors (0,0),(2,0) via x'=(x-1)/2, y'=y/2") {
  const PoseSequence p =
      grid_pose({{{0.f, 0.f}, {2.f, 0.f}, {3.f, 4.f}}});
  NormalizationSpec spec;
  spec.component_a = "BODY";
  spec.point_a = 0;
  spec.component_b = "BODY";
  spec.point_b = 1;
  const PoseSequence n = normalize_pose(p, spec);
  CHECK(n.coord(0, 2, 0) == doctest::Approx((3.0 - 1.0) / 2.0).epsilon(1e-6));
  CHECK(n.coord(0, 2, 1) == doctest::Approx(4.0 / 2.0).epsilon(1e-6));
  CHECK(n.coord(0, 0, 0) == doctest::Approx(-0.5).epsilon(1e-6));
  CHECK(n.coord(0, 1, 0) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("an already-normalized frame is a fixed point") {
  const PoseSequence p =
      grid_pose({{{-0.5f, 0.f}, {0.5f, 0.f}, {0.25f, -0.75f}}});
  NormalizationSpec spec;
  spec.point_a = 0;
  spec.point_b = 1;
  const PoseSequence n = normalize_pose(p, spec);
  CHECK(bit_identical(n, p));
}

TEST_CASE("all-absent anchors fall back to the identity transform") {
  PoseSequence p = grid_pose({{{0.f, 0.f}, {0.f, 0.f}, {0.f, 0.f}}});
  for (std::size_t i = 0; i < 3; ++i) p.conf(0, i) = 0.0f;
  p.body.coords.assign(p.body.coords.size(), 0.0f);
  NormalizationSpec spec;
  spec.point_a = 0;
  spec.point_b = 1;
  const PoseSequence n = normalize_pose(p, spec);
  CHECK(bit_identical(n, p));
}

TEST_CASE("coincident anchors in every frame raise DegenerateAnchors") {
  const PoseSequence p = grid_pose({{{1.f, 1.f}, {1.f, 1.f}, {0.f, 2.f}}});
  NormalizationSpec spec;
  spec.point_a = 0;
  spec.point_b = 1;
  CHECK_THROWS_AS(normalize_pose(p, spec), DegenerateAnchors);
}

TEST_CASE("frames missing an anchor reuse the last valid transform") {
  PoseSequence p = grid_pose(
      {{{0.f, 0.f}, {2.f, 0.f}, {3.f, 4.f}},
       {{0.f, 0.f}, {0.f, 0.f}, {3.f, 4.f}}});
  p.conf(1, 0) = 0.0f;  // anchor a missing in frame 1
  p.coord(1, 0, 0) = p.coord(1, 0, 1) = 0.0f;
  NormalizationSpec spec;
  spec.point_a = 0;
  spec.point_b = 1;
  const PoseSequence n = normalize_pose(p, spec);
  // Frame 1's third point uses frame 0's transform.
  CHECK(n.coord(1, 2, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(n.coord(1, 2, 1) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("re-measured anchor distance equals the target") {
  // The transform is exact in double arithmetic; the stored coordinates are
  // 32-bit floats, so re-measuring carries float rounding (~1e-7).
  Rng rng(99);
  for (int iter = 0; iter < 30; ++iter) {
    PoseSequence p = synth_pose(iter % 5, Hand::Right, 10, 0.01,
                                derive_seed(17, iter));
    const PoseSequence n = normalize_pose(p, NormalizationSpec{});
    const auto [start, count] = component_slice(n, "BODY");
    (void)count;
    for (std::size_t t = 0; t < n.frames(); ++t) {
      const double dx = static_cast<double>(n.coord(t, start + 11, 0)) -
                        n.coord(t, start + 12, 0);
      const double dy = static_cast<double>(n.coord(t, start + 11, 1)) -
                        n.coord(t, start + 12, 1);
      CHECK(std::hypot(dx, dy) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("flip_horizontal is a bit-exact involution") {
  for (int cls : {0, 3, 7}) {
    const PoseSequence p = normalize_pose(synth_pose(cls), {});
    const auto& mirror = default_layout().mirror;
    const PoseSequence once = flip_horizontal(p, mirror);
    const PoseSequence twice = flip_horizontal(once, mirror);
    CHECK(bit_identical(twice, p));
  }
}

TEST_CASE("a left-hand point lands mirrored in the right hand") {
  PoseSequence p = synth_pose();
  const auto [l_start, lc] = component_slice(p, kLeftHandComponent);
  const auto [r_start, rc] = component_slice(p, kRightHandComponent);
  (void)lc;
  (void)rc;
  p.coord(0, l_start, 0) = 0.3f;
  p.coord(0, l_start, 1) = 0.7f;
  const PoseSequence f = flip_horizontal(p, default_layout().mirror);
  CHECK(f.coord(0, r_start, 0) == -0.3f);
  CHECK(f.coord(0, r_start, 1) == 0.7f);
}

TEST_CASE("a component without a mirror declaration cannot be flipped") {
  const PoseSequence p = synth_pose();
  MirrorTable partial;
  partial.point_pairs["BODY"] = default_layout().mirror.point_pairs.at("BODY");
  // LEFT_HAND / RIGHT_HAND are not covered.
  CHECK_THROWS_AS(flip_horizontal(p, partial), MissingMirrorTable);
}

TEST_CASE("limb features on axis-aligned and 3-4-5 limbs") {
  const double coords[] = {0, 0, 1, 0, 0, 2, 1, 1, 4, 5};
  const double conf[] = {1, 1, 1, 1, 1};
  const std::vector<std::pair<std::size_t, std::size_t>> limbs = {
      {0, 1}, {0, 2}, {3, 4}};
  const auto lf = limb_features(coords, conf, 5, limbs);
  CHECK(lf[0].angle == doctest::Approx(0.0));
  CHECK(lf[0].length == doctest::Approx(1.0));
  CHECK(lf[1].angle == doctest::Approx(M_PI / 2));
  CHECK(lf[1].length == doctest::Approx(2.0));
  CHECK(lf[2].length == doctest::Approx(5.0));
  CHECK(lf[2].angle == doctest::Approx(0.9272952180016122).epsilon(1e-9));
}

TEST_CASE("an absent endpoint zeroes both limb outputs") {
  const double coords[] = {0, 0, 1, 0};
  const double conf[] = {1, 0};
  const auto lf = limb_features(coords, conf, 2, {{0, 1}});
  CHECK(lf[0].angle == 0.0);
  CHECK(lf[0].length == 0.0);
}

TEST_CASE("limb angle is rotation-equivariant, length invariant") {
  Rng rng(31337);
  const std::size_t k = 8;
  std::vector<std::pair<std::size_t, std::size_t>> limbs = {
      {0, 1}, {2, 3}, {4, 5}, {6, 7}, {1, 4}};
  for (int iter = 0; iter < 20; ++iter) {
    std::vector<double> coords(2 * k), rotated(2 * k), conf(k, 1.0);
    for (auto& v : coords) v = rng.uniform(-2.0, 2.0);
    const double theta = rng.uniform(-M_PI, M_PI);
    const double c = std::cos(theta), s = std::sin(theta);
    for (std::size_t i = 0; i < k; ++i) {
      rotated[2 * i] = c * coords[2 * i] - s * coords[2 * i + 1];
      rotated[2 * i + 1] = s * coords[2 * i] + c * coords[2 * i + 1];
    }
    const auto base = limb_features(coords.data(), conf.data(), k, limbs);
    const auto rot = limb_features(rotated.data(), conf.data(), k, limbs);
    for (std::size_t l = 0; l < limbs.size(); ++l) {
      CHECK(rot[l].length == doctest::Approx(base[l].length).epsilon(1e-9));
      const double expected = wrap_angle(base[l].angle + theta);
      CHECK(wrap_angle(rot[l].angle - expected) ==
            doctest::Approx(0.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("frame_features has F = 2K + 2L") {
  const PoseSequence p = normalize_pose(synth_pose(), {});
  const FeatureMatrix fm = frame_features(p);
  CHECK(fm.cols == 2 * 75 + 2 * 72);
  CHECK(fm.cols == 294);
  CHECK(fm.rows == p.frames());
  CHECK(fm.feature_names.size() == 294);
  for (double v : fm.values) CHECK(std::isfinite(v));
}

TEST_CASE("an all-absent sequence gives an all-zero feature matrix") {
  PoseSequence p = synth_pose(0, Hand::Right, 3);
  for (auto& c : p.body.confidences) c = 0.0f;
  for (auto& v : p.body.coords) v = 0.0f;
  const FeatureMatrix fm = frame_features(p);
  for (double v : fm.values) CHECK(v == 0.0);
}

TEST_CASE("single frame, single limb feature row") {
  PoseSequence p;
  p.header.fps = 25.0f;
  ComponentSpec c;
  c.name = "BODY";
  c.point_count = 2;
  c.dims = 2;
  c.limbs = {{0, 1}};
  p.header.components.push_back(c);
  p.body.frame_count = 1;
  p.body.coords = {0.f, 0.f, 1.f, 0.f};
  p.body.confidences = {1.f, 1.f};
  const FeatureMatrix fm = frame_features(p);
  REQUIRE(fm.cols == 6);
  const std::vector<double> expected = {0, 0, 1, 0, 0, 1};
  for (std::size_t i = 0; i < 6; ++i) CHECK(fm.values[i] == expected[i]);
}

TEST_CASE("features of a flip are a mirror-table column mapping") {
  const auto& layout = default_layout();
  const PoseSequence p = normalize_pose(synth_pose(2), {});
  const PoseSequence flipped = flip_horizontal(p, layout.mirror);
  const FeatureMatrix orig = frame_features(p);
  const FeatureMatrix flip = frame_features(flipped);

  // Global mirror map over the 75 points, from the mirror table alone.
  std::vector<std::size_t> mirror_of(75);
  std::size_t start = 0;
  std::map<std::string, std::size_t> starts;
  for (const auto& c : layout.components) {
    starts[c.name] = start;
    start += c.point_count;
  }
  start = 0;
  for (const auto& c : layout.components) {
    if (const std::string* partner = layout.mirror.swap_partner(c.name)) {
      for (std::size_t i = 0; i < c.point_count; ++i)
        mirror_of[start + i] = starts[*partner] + i;
    } else {
      for (std::size_t i = 0; i < c.point_count; ++i)
        mirror_of[start + i] = start + i;
      for (const auto& [a, b] : layout.mirror.point_pairs.at(c.name)) {
        mirror_of[start + a] = start + b;
        mirror_of[start + b] = start + a;
      }
    }
    start += c.point_count;
  }

  // Point columns: x negated from the mirror point, y copied.
  for (std::size_t t = 0; t < orig.rows; ++t) {
    for (std::size_t i = 0; i < 75; ++i) {
      const std::size_t src = mirror_of[i];
      CHECK(flip.at(t, 2 * i) == -orig.at(t, 2 * src));
      CHECK(flip.at(t, 2 * i + 1) == orig.at(t, 2 * src + 1));
    }
  }

  // Limb columns: find the mirrored limb (possibly reversed) and apply the
  // angle reflection.
  std::vector<std::pair<std::size_t, std::size_t>> limbs;
  start = 0;
  for (const auto& c : layout.components) {
    for (const auto& [a, b] : c.limbs) limbs.emplace_back(start + a, start + b);
    start += c.point_count;
  }
  auto limb_col = [&](std::size_t a, std::size_t b) -> std::pair<std::size_t, bool> {
    for (std::size_t l = 0; l < limbs.size(); ++l) {
      if (limbs[l] == std::make_pair(a, b)) return {l, false};
      if (limbs[l] == std::make_pair(b, a)) return {l, true};
    }
    REQUIRE(false);
    return {0, false};
  };
  const std::size_t base_col = 2 * 75;
  for (std::size_t l = 0; l < limbs.size(); ++l) {
    const auto [ma, mb] =
        std::make_pair(mirror_of[limbs[l].first], mirror_of[limbs[l].second]);
    const auto [src, reversed] = limb_col(ma, mb);
    for (std::size_t t = 0; t < orig.rows; ++t) {
      const double src_angle = orig.at(t, base_col + 2 * src);
      const double expected =
          reversed ? wrap_angle(-src_angle) : wrap_angle(M_PI - src_angle);
      CHECK(wrap_angle(flip.at(t, base_col + 2 * l) - expected) ==
            doctest::Approx(0.0).epsilon(1e-9));
      CHECK(flip.at(t, base_col + 2 * l + 1) ==
            doctest::Approx(orig.at(t, base_col + 2 * src + 1)).epsilon(1e-12));
    }
  }
}

TEST_CASE("concat_sources shapes and identity") {
  FeatureMatrix a, b;
  a.rows = 4;
  a.cols = 10;
  a.values.assign(40, 1.0);
  a.feature_names.assign(10, "fa");
  b.rows = 4;
  b.cols = 6;
  b.values.assign(24, 2.0);
  b.feature_names.assign(6, "fb");
  const FeatureMatrix ab = concat_sources(a, b);
  CHECK(ab.rows == 4);
  CHECK(ab.cols == 16);
  CHECK(ab.feature_names.front() == "a/fa");
  CHECK(ab.feature_names.back() == "b/fb");

  FeatureMatrix empty;
  const FeatureMatrix same = concat_sources(a, empty);
  CHECK(same.cols == a.cols);
  CHECK(same.values == a.values);
  CHECK(same.feature_names == a.feature_names);
}

TEST_CASE("concat resamples the second source by nearest frame") {
  FeatureMatrix a, b;
  a.rows = 30;
  a.cols = 1;
  a.values.assign(30, 0.0);
  a.feature_names = {"x"};
  b.rows = 60;
  b.cols = 1;
  b.values.resize(60);
  for (std::size_t t = 0; t < 60; ++t) b.values[t] = static_cast<double>(t);
  b.feature_names = {"y"};
  const FeatureMatrix ab = concat_sources(a, b);
  REQUIRE(ab.rows == 30);
  for (std::size_t t = 0; t < 30; ++t) {
    const auto expected = static_cast<double>(
        std::llround(static_cast<double>(t) * 59.0 / 29.0));
    CHECK(ab.at(t, 1) == expected);
  }
  SUBCASE("resampling disabled raises IncompatibleLengths") {
    CHECK_THROWS_AS(concat_sources(a, b, false), IncompatibleLengths);
  }
}

TEST_CASE("hand presence counts frames with any hand keypoint") {
  PoseSequence p = synth_pose(0, Hand::Right, 4);
  CHECK(hand_presence(p, Hand::Right) == 1.0);

  const auto [r_start, r_count] = component_slice(p, kRightHandComponent);
  // Remove the right hand in frame 1 only.
  for (std::size_t i = 0; i < r_count; ++i) {
    p.conf(1, r_start + i) = 0.0f;
    p.coord(1, r_start + i, 0) = 0.0f;
    p.coord(1, r_start + i, 1) = 0.0f;
  }
  CHECK(hand_presence(p, Hand::Right) == doctest::Approx(0.75));

  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < r_count; ++i) {
      p.conf(t, r_start + i) = 0.0f;
      p.coord(t, r_start + i, 0) = 0.0f;
      p.coord(t, r_start + i, 1) = 0.0f;
    }
  CHECK(hand_presence(p, Hand::Right) == 0.0);

  SUBCASE("a layout without hands has no presence") {
    const PoseSequence body_only = grid_pose({{{0.f, 0.f}, {1.f, 1.f}}});
    CHECK_THROWS_AS(hand_presence(body_only, Hand::Right), UnknownComponent);
  }
}

TEST_CASE("dominant hand is the one with the longer wrist path") {
  PoseSequence p;
  p.header.fps = 25.0f;
  for (const char* name : {kLeftHandComponent, kRightHandComponent}) {
    ComponentSpec c;
    c.name = name;
    c.point_count = 1;
    c.dims = 2;
    p.header.components.push_back(c);
  }
  p.body.frame_count = 3;
  p.body.coords.assign(3 * 2 * 2, 0.0f);
  p.body.confidences.assign(3 * 2, 1.0f);
  // Left wrist travels 2.0 in total, right travels 0.5.
  p.coord(0, 0, 0) = 0.0f;
  p.coord(1, 0, 0) = 1.0f;
  p.coord(2, 0, 0) = 2.0f;
  p.coord(0, 1, 0) = 0.0f;
  p.coord(1, 1, 0) = 0.25f;
  p.coord(2, 1, 0) = 0.5f;
  CHECK(dominant_hand(p) == Hand::Left);

  SUBCASE("only right hand present") {
    for (std::size_t t = 0; t < 3; ++t) {
      p.conf(t, 0) = 0.0f;
      p.coord(t, 0, 0) = 0.0f;
    }
    CHECK(dominant_hand(p) == Hand::Right);
  }

  SUBCASE("both absent ties to Right") {
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < 2; ++i) {
        p.conf(t, i) = 0.0f;
        p.coord(t, i, 0) = 0.0f;
      }
    CHECK(dominant_hand(p) == Hand::Right);
  }
}

TEST_CASE("hand presence is invariant under normalization and flips sides") {
  const PoseSequence p = synth_pose(1, Hand::Left, 10);
  const PoseSequence n = normalize_pose(p, {});
  CHECK(hand_presence(p, Hand::Left) == hand_presence(n, Hand::Left));
  const PoseSequence f = flip_horizontal(n, default_layout().mirror);
  CHECK(hand_presence(f, Hand::Left) == hand_presence(n, Hand::Right));
  CHECK(hand_presence(f, Hand::Right) == hand_presence(n, Hand::Left));
}

TEST_CASE("any-hand presence counts frames where either hand was estimated") {
  PoseSequence p = synth_pose(0, Hand::Right, 4);
  CHECK(any_hand_presence(p) == 1.0);
  const auto [ls, lc] = component_slice(p, kLeftHandComponent);
  const auto [rs, rc] = component_slice(p, kRightHandComponent);
  // Remove the left hand everywhere and the right hand in frame 2.
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t i = 0; i < lc; ++i) {
      p.conf(t, ls + i) = 0.0f;
      p.coord(t, ls + i, 0) = p.coord(t, ls + i, 1) = 0.0f;
    }
  for (std::size_t i = 0; i < rc; ++i) {
    p.conf(2, rs + i) = 0.0f;
    p.coord(2, rs + i, 0) = p.coord(2, rs + i, 1) = 0.0f;
  }
  CHECK(any_hand_presence(p) == doctest::Approx(0.75));
}

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "signkit/errors.hpp"
#include "signkit/layout.hpp"
#include "signkit/pose.hpp"

namespace signkit {

enum class Hand { Left, Right };

inline const char* hand_component(Hand h) {
  return h == Hand::Left ? kLeftHandComponent : kRightHandComponent;
}

// T x F matrix of per-frame features with one name per column.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major
  std::vector<std::string> feature_names;

  double at(std::size_t t, std::size_t f) const {
    return values[t * cols + f];
  }
  double& at(std::size_t t, std::size_t f) { return values[t * cols + f]; }
  const double* row(std::size_t t) const { return values.data() + t * cols; }
};

// Anchor pair for pose normalization. Defaults to the shoulder points of
// the default layout; target distance 1 in normalized units.
struct NormalizationSpec {
  std::string component_a = kBodyComponent;
  std::uint16_t point_a = kBodyLeftShoulderPoint;
  std::string component_b = kBodyComponent;
  std::uint16_t point_b = kBodyRightShoulderPoint;
  double target_distance = 1.0;
};

// Translates each frame so the anchor midpoint is at the origin and scales
// so the anchor distance equals target_distance. Frames where an anchor is
// missing (or the anchors are degenerate) reuse the most recent valid
// frame's transform, identity if none yet. Absent keypoints keep their
// stored zeros; confidences are unchanged. z, when present, is scaled but
// not translated.
inline PoseSequence normalize_pose(const PoseSequence& p,
                                   const NormalizationSpec& spec = {}) {
  if (spec.component_a == spec.component_b && spec.point_a == spec.point_b)
    throw DegenerateAnchors("normalization anchors must differ");
  const auto [sa, ca] = component_slice(p, spec.component_a);
  const auto [sb, cb] = component_slice(p, spec.component_b);
  if (spec.point_a >= ca || spec.point_b >= cb)
    throw UnknownComponent("anchor point index out of range");
  const std::size_t ia = sa + spec.point_a;
  const std::size_t ib = sb + spec.point_b;
  const std::size_t d = p.dims();
  const std::size_t t_count = p.frames();

  PoseSequence out = p;
  double mx = 0.0, my = 0.0, scale = 1.0;  // identity until a valid frame
  bool any_valid = false, any_present = false;
  for (std::size_t t = 0; t < t_count; ++t) {
    if (p.conf(t, ia) > 0.0f && p.conf(t, ib) > 0.0f) {
      any_present = true;
      const double ax = p.coord(t, ia, 0), ay = p.coord(t, ia, 1);
      const double bx = p.coord(t, ib, 0), by = p.coord(t, ib, 1);
      const double dist = std::hypot(bx - ax, by - ay);
      if (dist >= 1e-6) {
        mx = 0.5 * (ax + bx);
        my = 0.5 * (ay + by);
        scale = spec.target_distance / dist;
        any_valid = true;
      }
    }
    for (std::size_t k = 0; k < p.points(); ++k) {
      if (p.conf(t, k) == 0.0f) continue;
      out.coord(t, k, 0) =
          static_cast<float>((p.coord(t, k, 0) - mx) * scale);
      out.coord(t, k, 1) =
          static_cast<float>((p.coord(t, k, 1) - my) * scale);
      if (d == 3)
        out.coord(t, k, 2) = static_cast<float>(p.coord(t, k, 2) * scale);
    }
  }
  if (any_present && !any_valid)
    throw DegenerateAnchors("anchor distance below 1e-6 in every frame");
  return out;
}

// Horizontal flip: x negated, swapped components exchange their blocks,
// mirror point pairs swap within a component. The mirror table must cover
// every component of the sequence.
inline PoseSequence flip_horizontal(const PoseSequence& p,
                                    const MirrorTable& mirror) {
  const std::size_t d = p.dims();
  const std::size_t k = p.points();

  // Global source index for every destination point.
  std::vector<std::size_t> source(k);
  std::size_t start = 0;
  for (const auto& c : p.header.components) {
    if (const std::string* partner = mirror.swap_partner(c.name)) {
      const auto [ps, pc] = component_slice(p, *partner);
      if (pc != c.point_count)
        throw MissingMirrorTable("mirror-swap components " + c.name + "/" +
                                 *partner + " differ in point count");
      for (std::size_t i = 0; i < c.point_count; ++i)
        source[start + i] = ps + i;
    } else if (auto it = mirror.point_pairs.find(c.name);
               it != mirror.point_pairs.end()) {
      for (std::size_t i = 0; i < c.point_count; ++i) source[start + i] = start + i;
      for (const auto& [a, b] : it->second) {
        if (a >= c.point_count || b >= c.point_count)
          throw MissingMirrorTable("mirror-pair index out of range in " +
                                   c.name);
        source[start + a] = start + b;
        source[start + b] = start + a;
      }
    } else {
      throw MissingMirrorTable("no mirror declaration for component " +
                               c.name);
    }
    start += c.point_count;
  }

  PoseSequence out = p;
  for (std::size_t t = 0; t < p.frames(); ++t) {
    for (std::size_t dst = 0; dst < k; ++dst) {
      const std::size_t src = source[dst];
      const float conf = p.conf(t, src);
      out.conf(t, dst) = conf;
      if (conf == 0.0f) {
        for (std::size_t dd = 0; dd < d; ++dd) out.coord(t, dst, dd) = 0.0f;
        continue;
      }
      out.coord(t, dst, 0) = -p.coord(t, src, 0);
      for (std::size_t dd = 1; dd < d; ++dd)
        out.coord(t, dst, dd) = p.coord(t, src, dd);
    }
  }
  return out;
}

struct LimbFeature {
  double angle = 0.0;   // radians in (-pi, pi]
  double length = 0.0;  // normalized units
};

// Per-limb 2D angle and length for one frame. A limb with an absent
// endpoint reports (0, 0).
inline std::vector<LimbFeature> limb_features(
    const double* coords_xy, const double* confidences, std::size_t k,
    const std::vector<std::pair<std::size_t, std::size_t>>& limbs) {
  std::vector<LimbFeature> out(limbs.size());
  for (std::size_t l = 0; l < limbs.size(); ++l) {
    const auto [a, b] = limbs[l];
    if (a >= k || b >= k) throw ShapeMismatch("limb index out of range");
    if (confidences[a] == 0.0 || confidences[b] == 0.0) continue;
    const double dx = coords_xy[2 * b] - coords_xy[2 * a];
    const double dy = coords_xy[2 * b + 1] - coords_xy[2 * a + 1];
    double angle = std::atan2(dy, dx);
    if (angle == -M_PI) angle = M_PI;
    out[l].angle = angle;
    out[l].length = std::hypot(dx, dy);
  }
  return out;
}

// Flat per-frame feature vector: [x,y of all K points] ++ [angle,length of
// all L limbs], components in layout order. F = 2K + 2L. Only x and y enter
// the features even for 3D poses.
inline FeatureMatrix frame_features(const PoseSequence& p) {
  const std::size_t k = p.points();
  const std::size_t t_count = p.frames();

  // Limbs with global point indices, plus column names.
  std::vector<std::pair<std::size_t, std::size_t>> limbs;
  std::vector<std::string> names;
  {
    std::size_t start = 0;
    for (const auto& c : p.header.components) {
      for (std::size_t i = 0; i < c.point_count; ++i) {
        names.push_back(c.name + "." + std::to_string(i) + ".x");
        names.push_back(c.name + "." + std::to_string(i) + ".y");
      }
      start += c.point_count;
    }
    start = 0;
    for (const auto& c : p.header.components) {
      for (const auto& [a, b] : c.limbs) {
        limbs.emplace_back(start + a, start + b);
        const std::string base = c.name + ".limb." + std::to_string(a) + "-" +
                                 std::to_string(b);
        names.push_back(base + ".angle");
        names.push_back(base + ".length");
      }
      start += c.point_count;
    }
  }

  FeatureMatrix fm;
  fm.rows = t_count;
  fm.cols = 2 * k + 2 * limbs.size();
  fm.values.assign(fm.rows * fm.cols, 0.0);
  fm.feature_names = std::move(names);

  std::vector<double> xy(2 * k), conf(k);
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < k; ++i) {
      conf[i] = p.conf(t, i);
      if (conf[i] == 0.0) {
        xy[2 * i] = xy[2 * i + 1] = 0.0;
      } else {
        xy[2 * i] = p.coord(t, i, 0);
        xy[2 * i + 1] = p.coord(t, i, 1);
      }
    }
    double* row = fm.values.data() + t * fm.cols;
    for (std::size_t i = 0; i < 2 * k; ++i) row[i] = xy[i];
    const auto lf = limb_features(xy.data(), conf.data(), k, limbs);
    for (std::size_t l = 0; l < lf.size(); ++l) {
      row[2 * k + 2 * l] = lf[l].angle;
      row[2 * k + 2 * l + 1] = lf[l].length;
    }
  }
  return fm;
}

// Row-wise concatenation of two feature sources. When frame counts differ
// and resampling is enabled, b is resampled to a's length by nearest frame.
// Concatenating with an empty source is the identity.
inline FeatureMatrix concat_sources(const FeatureMatrix& a,
                                    const FeatureMatrix& b,
                                    bool resample = true,
                                    const std::string& prefix_a = "a",
                                    const std::string& prefix_b = "b") {
  if (b.cols == 0) return a;
  if (a.cols == 0) return b;
  if (a.rows != b.rows && !resample)
    throw IncompatibleLengths("frame counts differ: " +
                              std::to_string(a.rows) + " vs " +
                              std::to_string(b.rows));

  FeatureMatrix out;
  out.rows = a.rows;
  out.cols = a.cols + b.cols;
  out.values.resize(out.rows * out.cols);
  out.feature_names.reserve(out.cols);
  for (const auto& n : a.feature_names)
    out.feature_names.push_back(prefix_a + "/" + n);
  for (const auto& n : b.feature_names)
    out.feature_names.push_back(prefix_b + "/" + n);

  for (std::size_t t = 0; t < out.rows; ++t) {
    std::size_t tb = t;
    if (a.rows != b.rows) {
      tb = (a.rows <= 1)
               ? 0
               : static_cast<std::size_t>(std::llround(
                     static_cast<double>(t) * static_cast<double>(b.rows - 1) /
                     static_cast<double>(a.rows - 1)));
      if (tb >= b.rows) tb = b.rows - 1;
    }
    double* row = out.values.data() + t * out.cols;
    const double* ra = a.row(t);
    const double* rb = b.row(tb);
    std::copy(ra, ra + a.cols, row);
    std::copy(rb, rb + b.cols, row + a.cols);
  }
  return out;
}

// Fraction of frames in which at least one keypoint of the hand was
// estimated (confidence > 0).
inline double hand_presence(const PoseSequence& p, Hand hand) {
  const auto [start, count] = component_slice(p, hand_component(hand));
  std::size_t present = 0;
  for (std::size_t t = 0; t < p.frames(); ++t) {
    for (std::size_t i = 0; i < count; ++i) {
      if (p.conf(t, start + i) > 0.0f) {
        ++present;
        break;
      }
    }
  }
  return static_cast<double>(present) / static_cast<double>(p.frames());
}

// Both-hands variant: fraction of frames where either hand was estimated.
// The diagnostics default to the dominant hand; this is the alternative.
inline double any_hand_presence(const PoseSequence& p) {
  const auto [ls, lc] = component_slice(p, kLeftHandComponent);
  const auto [rs, rc] = component_slice(p, kRightHandComponent);
  std::size_t present = 0;
  for (std::size_t t = 0; t < p.frames(); ++t) {
    bool any = false;
    for (std::size_t i = 0; i < lc && !any; ++i)
      any = p.conf(t, ls + i) > 0.0f;
    for (std::size_t i = 0; i < rc && !any; ++i)
      any = p.conf(t, rs + i) > 0.0f;
    present += any ? 1 : 0;
  }
  return static_cast<double>(present) / static_cast<double>(p.frames());
}

// The hand whose wrist travels the longer total path over frames where it
// is present in consecutive frames. Ties (including both hands absent)
// resolve to Right.
inline Hand dominant_hand(const PoseSequence& p) {
  auto path_length = [&](Hand h) {
    const auto [start, count] = component_slice(p, hand_component(h));
    (void)count;
    const std::size_t w = start + kHandWristPoint;
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < p.frames(); ++t) {
      if (p.conf(t, w) > 0.0f && p.conf(t + 1, w) > 0.0f) {
        const double dx = p.coord(t + 1, w, 0) - p.coord(t, w, 0);
        const double dy = p.coord(t + 1, w, 1) - p.coord(t, w, 1);
        total += std::hypot(dx, dy);
      }
    }
    return total;
  };
  return path_length(Hand::Left) > path_length(Hand::Right) ? Hand::Left
                                                            : Hand::Right;
}

}  // namespace signkit

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "signkit/dataset.hpp"
#include "signkit/features.hpp"
#include "signkit/layout.hpp"
#include "signkit/pose.hpp"
#include "signkit/rng.hpp"
#include "signkit/threading.hpp"

namespace signkit::synth {

struct SignerProfile {
  double scale = 1.0;     // body size factor, [0.8, 1.2]
  double speed = 1.0;     // trajectory rate factor, [0.7, 1.3]
  double noise_sd = 0.0;  // coordinate jitter, normalized units
  Hand handedness = Hand::Right;
};

struct SynthesisConfig {
  int classes = 2;
  int samples_per_class = 10;
  std::vector<SignerProfile> signers;
  int frames_min = 16;
  int frames_max = 24;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 2) throw Error("synthesis needs >= 2 classes");
    if (signers.size() < 2)
      throw TooFewSigners("synthesis needs >= 2 signers for signer-disjoint "
                          "splits");
    if (samples_per_class < 1) throw Error("samples_per_class must be >= 1");
    if (frames_min < 2 || frames_max < frames_min)
      throw Error("bad frame count range");
    for (const auto& s : signers)
      if (s.noise_sd < 0.0) throw Error("noise_sd must be >= 0");
  }
};

// Seeded signer population: scales over the full documented range, speeds
// over its middle portion, every third signer left-handed.
inline std::vector<SignerProfile> default_signers(int count, double noise_sd,
                                                  std::uint64_t seed) {
  std::vector<SignerProfile> signers(count);
  Rng rng(derive_seed(seed, 0x51e4e4));
  for (int i = 0; i < count; ++i) {
    signers[i].scale = 0.8 + 0.4 * rng.uniform();
    signers[i].speed = 0.85 + 0.3 * rng.uniform();
    signers[i].noise_sd = noise_sd;
    signers[i].handedness = (i % 3 == 2) ? Hand::Left : Hand::Right;
  }
  return signers;
}

namespace detail {

// Static body template in image-like units, left side of the signer at
// x > 0.5. Indices follow the 33-point BODY order of the default layout.
inline const std::vector<std::pair<double, double>>& body_template() {
  static const std::vector<std::pair<double, double>> pts = {
      {0.500, 0.28},  // nose
      {0.520, 0.26}, {0.535, 0.26}, {0.550, 0.26},   // left eye
      {0.480, 0.26}, {0.465, 0.26}, {0.450, 0.26},   // right eye
      {0.570, 0.27}, {0.430, 0.27},                  // ears
      {0.525, 0.31}, {0.475, 0.31},                  // mouth
      {0.640, 0.44}, {0.360, 0.44},                  // shoulders
      {0.700, 0.58}, {0.300, 0.58},                  // elbows
      {0.680, 0.72}, {0.320, 0.72},                  // wrists
      {0.690, 0.76}, {0.310, 0.76},                  // pinkies
      {0.670, 0.76}, {0.330, 0.76},                  // index fingers
      {0.660, 0.74}, {0.340, 0.74},                  // thumbs
      {0.580, 0.80}, {0.420, 0.80},                  // hips
      {0.590, 1.02}, {0.410, 1.02},                  // knees
      {0.600, 1.22}, {0.400, 1.22},                  // ankles
      {0.610, 1.26}, {0.390, 1.26},                  // heels
      {0.630, 1.30}, {0.370, 1.30},                  // foot index
  };
  return pts;
}

// 21-point splayed-hand offsets (a right hand), wrist at the origin.
inline const std::vector<std::pair<double, double>>& hand_template() {
  static const std::vector<std::pair<double, double>> pts = {
      {0.000, 0.000},
      {-0.022, -0.010}, {-0.036, -0.022}, {-0.046, -0.034}, {-0.054, -0.046},
      {-0.020, -0.048}, {-0.024, -0.064}, {-0.026, -0.076}, {-0.028, -0.088},
      {-0.002, -0.050}, {-0.002, -0.068}, {-0.002, -0.080}, {-0.002, -0.092},
      {0.016, -0.048},  {0.018, -0.064},  {0.020, -0.076},  {0.022, -0.086},
      {0.032, -0.042},  {0.036, -0.054},  {0.040, -0.064},  {0.042, -0.072},
  };
  return pts;
}

struct ClassMotion {
  double fx, fy, phase;
};

// Distinct Lissajous parameters per class; classes beyond the table reuse it
// with a larger amplitude so they stay separable.
inline ClassMotion class_motion(int class_id) {
  static const ClassMotion table[] = {
      {1, 2, 0.0},       {2, 1, 0.0},       {1, 3, 0.0},  {3, 1, 0.0},
      {2, 3, 0.0},       {3, 2, 0.0},       {1, 1, M_PI_2}, {1, 2, M_PI_2},
      {3, 4, 0.0},       {4, 3, 0.0},       {2, 5, 0.0},  {5, 2, 0.0},
  };
  constexpr int n = sizeof(table) / sizeof(table[0]);
  return table[class_id % n];
}

}  // namespace detail

// One synthetic sample: static body, resting non-dominant hand, and a
// dominant hand tracing the class's Lissajous trajectory. Left-handed
// signers produce the mirrored motion with the left hand. All keypoints are
// present (confidence 1); absence is introduced by apply_occlusion. With
// noise_sd = 0 the result depends only on (class, signer, t_count).
inline PoseSequence synthesize_sample(int class_id,
                                      const SignerProfile& signer,
                                      int t_count,
                                      std::uint64_t noise_seed) {
  Rng rng(noise_seed);
  const detail::ClassMotion motion = detail::class_motion(class_id);
  const double amp_boost = 1.0 + 0.04 * (class_id / 12);
  const double scale = signer.scale;

  PoseSequence p;
  p.header = default_layout().make_header(25.0f);
  p.body.frame_count = t_count;
  const std::size_t k = p.header.total_points();
  p.body.coords.assign(static_cast<std::size_t>(t_count) * k * 2, 0.0f);
  p.body.confidences.assign(static_cast<std::size_t>(t_count) * k, 1.0f);

  const double side_active = signer.handedness == Hand::Right ? -1.0 : 1.0;
  const double ax = 0.12 * scale * amp_boost;
  const double ay = 0.14 * scale * amp_boost;
  const double cx = 0.5 + side_active * 0.17 * scale;
  const double cy = 0.48;

  const auto& body = detail::body_template();
  const auto& hand = detail::hand_template();

  for (int t = 0; t < t_count; ++t) {
    const double u = signer.speed * static_cast<double>(t) /
                     static_cast<double>(std::max(1, t_count - 1));
    // BODY: static, scaled about the torso center.
    for (std::size_t i = 0; i < body.size(); ++i) {
      const double x = 0.5 + (body[i].first - 0.5) * scale;
      const double y = 0.55 + (body[i].second - 0.55) * scale;
      p.coord(t, i, 0) = static_cast<float>(x + rng.normal(0, signer.noise_sd));
      p.coord(t, i, 1) = static_cast<float>(y + rng.normal(0, signer.noise_sd));
    }
    // Hands: LEFT_HAND block precedes RIGHT_HAND in the layout.
    for (int h = 0; h < 2; ++h) {
      const Hand which = h == 0 ? Hand::Left : Hand::Right;
      const bool active = which == signer.handedness;
      const double hand_sign = which == Hand::Right ? -1.0 : 1.0;
      double wx, wy;
      if (active) {
        wx = cx + side_active * ax *
                      std::sin(2.0 * M_PI * motion.fx * u + motion.phase);
        wy = cy + ay * std::cos(2.0 * M_PI * motion.fy * u);
      } else {
        wx = 0.5 + hand_sign * 0.24 * scale;
        wy = 0.78;
      }
      const std::size_t base = body.size() + (h == 0 ? 0 : hand.size());
      for (std::size_t i = 0; i < hand.size(); ++i) {
        const double ox = hand[i].first * (which == Hand::Right ? 1.0 : -1.0);
        const double oy = hand[i].second;
        p.coord(t, base + i, 0) = static_cast<float>(
            wx + ox * scale + rng.normal(0, signer.noise_sd));
        p.coord(t, base + i, 1) = static_cast<float>(
            wy + oy * scale + rng.normal(0, signer.noise_sd));
      }
    }
  }
  return p;
}

// Deterministic per seed; samples of a class round-robin over the signers.
// sample_id format: c<class>_s<signer>_<index>.
inline std::vector<LabeledSample> generate_dataset(const SynthesisConfig& cfg) {
  cfg.validate();
  const int s_count = static_cast<int>(cfg.signers.size());
  std::vector<LabeledSample> samples(
      static_cast<std::size_t>(cfg.classes) * cfg.samples_per_class);

  parallel_for(samples.size(), [&](std::size_t idx) {
    const int c = static_cast<int>(idx) / cfg.samples_per_class;
    const int j = static_cast<int>(idx) % cfg.samples_per_class;
    const int signer = j % s_count;
    char id[64];
    std::snprintf(id, sizeof(id), "c%02d_s%02d_%03d", c, signer, j);
    LabeledSample s;
    s.sample_id = id;
    s.label = c;
    s.signer_id = "signer" + std::to_string(signer);
    Rng frames_rng(derive_seed(cfg.seed, 0xf7a3e5, c, j));
    const int t_count =
        cfg.frames_min +
        static_cast<int>(frames_rng.below(cfg.frames_max - cfg.frames_min + 1));
    s.pose = synthesize_sample(c, cfg.signers[signer], t_count,
                               derive_seed(cfg.seed, 0xba5e, c, j));
    samples[idx] = std::move(s);
  });
  return samples;
}

// ------------------------------------------------------------- occlusion

enum class OcclusionMode { RandomDrop, HandsInteraction, HandFace };
enum class OcclusionTarget { Dominant, Both };

struct OcclusionSpec {
  OcclusionMode mode = OcclusionMode::RandomDrop;
  OcclusionTarget target = OcclusionTarget::Dominant;
  double fraction = 0.0;  // of frames affected
  std::uint64_t seed = 0;

  void validate() const {
    if (!(fraction >= 0.0 && fraction <= 1.0))
      throw Error("occlusion fraction must be in [0,1]");
  }
};

// Zeroes the target hand (confidences and coordinates) in the selected
// fraction of frames; every other value is untouched. RandomDrop picks
// frames with the spec seed; HandFace picks the frames where the dominant
// wrist is nearest the nose; HandsInteraction the frames where the wrists
// are mutually nearest.
inline PoseSequence apply_occlusion(const PoseSequence& p,
                                    const OcclusionSpec& spec) {
  spec.validate();
  const std::size_t t_count = p.frames();
  const std::size_t k_frames =
      static_cast<std::size_t>(std::llround(spec.fraction * t_count));
  if (k_frames == 0) return p;

  const Hand dominant = dominant_hand(p);
  std::vector<std::size_t> frames;
  if (spec.mode == OcclusionMode::RandomDrop) {
    std::vector<std::size_t> order(t_count);
    for (std::size_t i = 0; i < t_count; ++i) order[i] = i;
    Rng rng(derive_seed(spec.seed, 0x0cc1));
    for (std::size_t i = t_count - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);
    frames.assign(order.begin(), order.begin() + k_frames);
  } else {
    const auto [dh_start, dh_count] =
        component_slice(p, hand_component(dominant));
    (void)dh_count;
    const std::size_t dwrist = dh_start + kHandWristPoint;
    std::vector<std::pair<double, std::size_t>> ranked(t_count);
    for (std::size_t t = 0; t < t_count; ++t) {
      double dist = 1e18;
      if (spec.mode == OcclusionMode::HandFace) {
        const auto [b_start, b_count] = component_slice(p, kBodyComponent);
        (void)b_count;
        const std::size_t nose = b_start + kBodyNosePoint;
        if (p.conf(t, dwrist) > 0.0f && p.conf(t, nose) > 0.0f)
          dist = std::hypot(p.coord(t, dwrist, 0) - p.coord(t, nose, 0),
                            p.coord(t, dwrist, 1) - p.coord(t, nose, 1));
      } else {
        const auto [l_start, lc] = component_slice(p, kLeftHandComponent);
        const auto [r_start, rc] = component_slice(p, kRightHandComponent);
        (void)lc;
        (void)rc;
        const std::size_t lw = l_start + kHandWristPoint;
        const std::size_t rw = r_start + kHandWristPoint;
        if (p.conf(t, lw) > 0.0f && p.conf(t, rw) > 0.0f)
          dist = std::hypot(p.coord(t, lw, 0) - p.coord(t, rw, 0),
                            p.coord(t, lw, 1) - p.coord(t, rw, 1));
      }
      ranked[t] = {dist, t};
    }
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t i = 0; i < k_frames; ++i)
      frames.push_back(ranked[i].second);
  }

  std::vector<std::pair<std::size_t, std::size_t>> targets;
  if (spec.target == OcclusionTarget::Both) {
    targets.push_back(component_slice(p, kLeftHandComponent));
    targets.push_back(component_slice(p, kRightHandComponent));
  } else {
    targets.push_back(component_slice(p, hand_component(dominant)));
  }

  PoseSequence out = p;
  const std::size_t d = p.dims();
  for (const std::size_t t : frames) {
    for (const auto& [start, count] : targets) {
      for (std::size_t i = 0; i < count; ++i) {
        out.conf(t, start + i) = 0.0f;
        for (std::size_t dd = 0; dd < d; ++dd)
          out.coord(t, start + i, dd) = 0.0f;
      }
    }
  }
  return out;
}

}  // namespace signkit::synth

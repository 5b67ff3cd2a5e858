#pragma once

#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "signkit/errors.hpp"
#include "signkit/pose.hpp"

namespace signkit {

// Left/right mirror declarations for a layout: whole components that swap
// with each other under a horizontal flip, plus within-component point
// pairs that swap. Components with no left/right structure are declared
// self-mirrored. Every component of a sequence must be covered for
// flip_horizontal to be defined.
struct MirrorTable {
  std::vector<std::pair<std::string, std::string>> component_swaps;
  std::map<std::string, std::vector<std::pair<std::uint16_t, std::uint16_t>>>
      point_pairs;

  const std::string* swap_partner(const std::string& name) const {
    for (const auto& [a, b] : component_swaps) {
      if (a == name) return &b;
      if (b == name) return &a;
    }
    return nullptr;
  }

  bool covers(const std::string& name) const {
    return swap_partner(name) != nullptr || point_pairs.count(name) != 0;
  }
};

struct Layout {
  std::string name;
  std::uint8_t dims = 2;
  std::vector<ComponentSpec> components;
  MirrorTable mirror;

  PoseHeader make_header(float fps) const {
    PoseHeader h;
    h.fps = fps;
    h.components = components;
    return h;
  }
};

// Parses the documented line-based layout text (see data/holistic75.layout
// for the grammar by example). Unknown directives are errors.
inline Layout parse_layout_text(std::string_view text) {
  Layout layout;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw LayoutError("layout line " + std::to_string(lineno) + ": " + msg);
  };
  auto find_component = [&](const std::string& name) -> ComponentSpec& {
    for (auto& c : layout.components)
      if (c.name == name) return c;
    fail("unknown component " + name);
    return layout.components.front();  // unreachable
  };

  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;

    if (word == "layout") {
      if (!(ls >> layout.name)) fail("layout needs a name");
    } else if (word == "dims") {
      int d = 0;
      if (!(ls >> d) || (d != 2 && d != 3)) fail("dims must be 2 or 3");
      layout.dims = static_cast<std::uint8_t>(d);
    } else if (word == "component") {
      ComponentSpec c;
      int points = 0;
      if (!(ls >> c.name >> points) || points <= 0 || points > 0xffff)
        fail("component needs a name and a positive point count");
      c.point_count = static_cast<std::uint16_t>(points);
      c.dims = layout.dims;
      layout.components.push_back(std::move(c));
    } else if (word == "limb") {
      std::string comp;
      int a = -1, b = -1;
      if (!(ls >> comp >> a >> b) || a < 0 || b < 0) fail("limb needs: component a b");
      auto& c = find_component(comp);
      if (a >= c.point_count || b >= c.point_count || a == b)
        fail("bad limb indices");
      c.limbs.emplace_back(static_cast<std::uint16_t>(a),
                           static_cast<std::uint16_t>(b));
    } else if (word == "mirror-pair") {
      std::string comp;
      int a = -1, b = -1;
      if (!(ls >> comp >> a >> b) || a < 0 || b < 0)
        fail("mirror-pair needs: component a b");
      const auto& c = find_component(comp);
      if (a >= c.point_count || b >= c.point_count || a == b)
        fail("bad mirror-pair indices");
      layout.mirror.point_pairs[comp].emplace_back(
          static_cast<std::uint16_t>(a), static_cast<std::uint16_t>(b));
    } else if (word == "mirror-swap") {
      std::string a, b;
      if (!(ls >> a >> b)) fail("mirror-swap needs two component names");
      find_component(a);
      find_component(b);
      layout.mirror.component_swaps.emplace_back(a, b);
    } else if (word == "mirror-self") {
      std::string comp;
      if (!(ls >> comp)) fail("mirror-self needs a component name");
      find_component(comp);
      layout.mirror.point_pairs.try_emplace(comp);
    } else {
      fail("unknown directive " + word);
    }
  }
  if (layout.components.empty()) fail("layout declares no components");
  return layout;
}

// The shipped default layout: MediaPipe-style BODY (33 points), LEFT_HAND
// and RIGHT_HAND (21 points each, wrist at local index 0) with 30 + 21 + 21
// limb edges. Identical to data/holistic75.layout.
inline constexpr std::string_view kHolistic75LayoutText = R"(# holistic75: 75-point body+hands layout (the 543-point Holistic layout
# with the 468-point face mesh removed).
#
# Grammar, one directive per line, '#' starts a comment:
#   layout <name>
#   dims <2|3>
#   component <name> <point_count>
#   limb <component> <a> <b>             directed edge, local point indices
#   mirror-pair <component> <a> <b>      points that swap under a horizontal flip
#   mirror-swap <compA> <compB>          whole components that swap
#   mirror-self <component>              no left/right structure
#
# Point conventions: BODY follows the 33-point MediaPipe pose order
# (0 nose, 11/12 shoulders, 15/16 wrists, 23/24 hips, ...). Hands follow
# the 21-point MediaPipe hand order with the wrist at local index 0.

layout holistic75
dims 2

component BODY 33
component LEFT_HAND 21
component RIGHT_HAND 21

# BODY limbs: face outline
limb BODY 0 1
limb BODY 1 2
limb BODY 2 3
limb BODY 3 7
limb BODY 0 4
limb BODY 4 5
limb BODY 5 6
limb BODY 6 8
# shoulders and arms
limb BODY 11 12
limb BODY 11 13
limb BODY 13 15
limb BODY 15 17
limb BODY 15 19
limb BODY 15 21
limb BODY 12 14
limb BODY 14 16
limb BODY 16 18
limb BODY 16 20
limb BODY 16 22
# torso
limb BODY 11 23
limb BODY 12 24
limb BODY 23 24
# legs and feet
limb BODY 23 25
limb BODY 24 26
limb BODY 25 27
limb BODY 26 28
limb BODY 27 29
limb BODY 28 30
limb BODY 29 31
limb BODY 30 32

# hand limbs (same for both hands): thumb, index, middle, ring, pinky, palm
limb LEFT_HAND 0 1
limb LEFT_HAND 1 2
limb LEFT_HAND 2 3
limb LEFT_HAND 3 4
limb LEFT_HAND 0 5
limb LEFT_HAND 5 6
limb LEFT_HAND 6 7
limb LEFT_HAND 7 8
limb LEFT_HAND 9 10
limb LEFT_HAND 10 11
limb LEFT_HAND 11 12
limb LEFT_HAND 13 14
limb LEFT_HAND 14 15
limb LEFT_HAND 15 16
limb LEFT_HAND 0 17
limb LEFT_HAND 17 18
limb LEFT_HAND 18 19
limb LEFT_HAND 19 20
limb LEFT_HAND 5 9
limb LEFT_HAND 9 13
limb LEFT_HAND 13 17

limb RIGHT_HAND 0 1
limb RIGHT_HAND 1 2
limb RIGHT_HAND 2 3
limb RIGHT_HAND 3 4
limb RIGHT_HAND 0 5
limb RIGHT_HAND 5 6
limb RIGHT_HAND 6 7
limb RIGHT_HAND 7 8
limb RIGHT_HAND 9 10
limb RIGHT_HAND 10 11
limb RIGHT_HAND 11 12
limb RIGHT_HAND 13 14
limb RIGHT_HAND 14 15
limb RIGHT_HAND 15 16
limb RIGHT_HAND 0 17
limb RIGHT_HAND 17 18
limb RIGHT_HAND 18 19
limb RIGHT_HAND 19 20
limb RIGHT_HAND 5 9
limb RIGHT_HAND 9 13
limb RIGHT_HAND 13 17

# mirror declarations
mirror-swap LEFT_HAND RIGHT_HAND
mirror-pair BODY 1 4
mirror-pair BODY 2 5
mirror-pair BODY 3 6
mirror-pair BODY 7 8
mirror-pair BODY 9 10
mirror-pair BODY 11 12
mirror-pair BODY 13 14
mirror-pair BODY 15 16
mirror-pair BODY 17 18
mirror-pair BODY 19 20
mirror-pair BODY 21 22
mirror-pair BODY 23 24
mirror-pair BODY 25 26
mirror-pair BODY 27 28
mirror-pair BODY 29 30
mirror-pair BODY 31 32
)";

inline const Layout& default_layout() {
  static const Layout layout = parse_layout_text(kHolistic75LayoutText);
  return layout;
}

inline constexpr const char* kBodyComponent = "BODY";
inline constexpr const char* kLeftHandComponent = "LEFT_HAND";
inline constexpr const char* kRightHandComponent = "RIGHT_HAND";

// Local point indices inside the default layout.
inline constexpr std::uint16_t kBodyNosePoint = 0;
inline constexpr std::uint16_t kBodyLeftShoulderPoint = 11;
inline constexpr std::uint16_t kBodyRightShoulderPoint = 12;
inline constexpr std::uint16_t kHandWristPoint = 0;

}  // namespace signkit

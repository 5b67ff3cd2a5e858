#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "signkit/errors.hpp"

namespace signkit {

// One skeletal component (e.g. BODY, LEFT_HAND) of a pose layout: a block of
// named points plus the limb edges between them.
struct ComponentSpec {
  std::string name;
  std::uint16_t point_count = 0;
  std::uint8_t dims = 2;
  std::vector<std::pair<std::uint16_t, std::uint16_t>> limbs;
};

struct PoseHeader {
  std::uint16_t format_version = 1;
  float fps = 0.0f;
  std::vector<ComponentSpec> components;

  std::size_t total_points() const {
    std::size_t n = 0;
    for (const auto& c : components) n += c.point_count;
    return n;
  }

  std::uint8_t dims() const {
    return components.empty() ? 0 : components.front().dims;
  }

  const ComponentSpec* find(const std::string& name) const {
    for (const auto& c : components)
      if (c.name == name) return &c;
    return nullptr;
  }

  bool has(const std::string& name) const { return find(name) != nullptr; }
};

// Per-frame keypoint coordinates and confidences, stored as 32-bit floats
// exactly as they appear in the file. A confidence of 0 means the keypoint
// is absent in that frame, and its coordinates are stored as 0.
struct PoseBody {
  std::size_t frame_count = 0;
  std::vector<float> coords;        // frame_count * K * D, row-major
  std::vector<float> confidences;   // frame_count * K
};

struct PoseSequence {
  PoseHeader header;
  PoseBody body;

  std::size_t frames() const { return body.frame_count; }
  std::size_t points() const { return header.total_points(); }
  std::size_t dims() const { return header.dims(); }

  float coord(std::size_t t, std::size_t k, std::size_t d) const {
    return body.coords[(t * points() + k) * dims() + d];
  }
  float& coord(std::size_t t, std::size_t k, std::size_t d) {
    return body.coords[(t * points() + k) * dims() + d];
  }
  float conf(std::size_t t, std::size_t k) const {
    return body.confidences[t * points() + k];
  }
  float& conf(std::size_t t, std::size_t k) {
    return body.confidences[t * points() + k];
  }
};

// Checks every documented type invariant; throws InvariantViolation.
inline void validate_pose(const PoseSequence& p) {
  const auto& h = p.header;
  if (h.components.empty())
    throw InvariantViolation("pose header has no components");
  if (!(h.fps > 0.0f) || !std::isfinite(h.fps))
    throw InvariantViolation("fps must be a positive finite value");
  std::set<std::string> names;
  const std::uint8_t dims = h.components.front().dims;
  for (const auto& c : h.components) {
    if (c.name.empty())
      throw InvariantViolation("component name must be nonempty");
    if (!names.insert(c.name).second)
      throw InvariantViolation("duplicate component name: " + c.name);
    if (c.point_count == 0)
      throw InvariantViolation("component " + c.name + " has zero points");
    if (c.dims != 2 && c.dims != 3)
      throw InvariantViolation("component dims must be 2 or 3");
    if (c.dims != dims)
      throw InvariantViolation("components disagree on dims");
    for (const auto& [a, b] : c.limbs) {
      if (a >= c.point_count || b >= c.point_count)
        throw InvariantViolation("limb index out of range in " + c.name);
      if (a == b)
        throw InvariantViolation("self-edge limb in " + c.name);
    }
  }
  const std::size_t k = h.total_points();
  if (k == 0) throw InvariantViolation("layout has zero total points");
  if (p.body.frame_count == 0)
    throw InvariantViolation("pose must have at least one frame");
  if (p.body.coords.size() != p.body.frame_count * k * dims)
    throw InvariantViolation("coordinate block size mismatch");
  if (p.body.confidences.size() != p.body.frame_count * k)
    throw InvariantViolation("confidence block size mismatch");
  for (std::size_t t = 0; t < p.body.frame_count; ++t) {
    for (std::size_t i = 0; i < k; ++i) {
      const float c = p.body.confidences[t * k + i];
      if (!(c >= 0.0f && c <= 1.0f))
        throw InvariantViolation("confidence outside [0,1]");
      const float* xy = p.body.coords.data() + (t * k + i) * dims;
      for (std::size_t d = 0; d < dims; ++d) {
        if (!std::isfinite(xy[d]))
          throw InvariantViolation("non-finite coordinate");
        if (c == 0.0f && xy[d] != 0.0f)
          throw InvariantViolation(
              "absent keypoint (confidence 0) must store coordinate 0");
      }
    }
  }
}

namespace detail {

// Little-endian byte reader that refuses to run past the end.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size)
      : data_(data), size_(size) {}

  std::size_t remaining() const { return size_ - pos_; }
  std::size_t pos() const { return pos_; }

  const std::uint8_t* take(std::size_t n) {
    if (n > remaining())
      throw TruncatedFile("unexpected end of file at byte " +
                          std::to_string(pos_));
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  std::uint8_t u8() { return *take(1); }

  std::uint16_t u16() {
    const std::uint8_t* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
  }

  float f32() {
    const std::uint32_t bits = u32();
    float out;
    std::memcpy(&out, &bits, 4);
    return out;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;

  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    bytes.push_back(v & 0xff);
    bytes.push_back((v >> 8) & 0xff);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back((v >> (8 * i)) & 0xff);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
};

}  // namespace detail

inline constexpr char kPoseMagic[4] = {'S', 'P', 'S', '1'};
inline constexpr std::uint16_t kPoseFormatVersion = 1;

// Parses an SPS1 container (see FORMAT.md). The result satisfies every type
// invariant; any malformed input raises BadMagic, TruncatedFile or
// InvariantViolation. Never reads past the buffer.
inline PoseSequence parse_pose_file(const std::uint8_t* data,
                                    std::size_t size) {
  detail::ByteReader r(data, size);
  const std::uint8_t* magic = r.take(4);
  if (std::memcmp(magic, kPoseMagic, 4) != 0)
    throw BadMagic("not an SPS1 pose file");

  PoseSequence p;
  p.header.format_version = r.u16();
  if (p.header.format_version != kPoseFormatVersion)
    throw InvariantViolation("unsupported SPS1 version " +
                             std::to_string(p.header.format_version));
  p.header.fps = r.f32();
  const std::uint8_t dims = r.u8();
  const std::uint8_t component_count = r.u8();
  if (component_count == 0)
    throw InvariantViolation("component count must be >= 1");

  for (std::uint8_t i = 0; i < component_count; ++i) {
    ComponentSpec c;
    c.dims = dims;
    const std::uint8_t name_len = r.u8();
    const std::uint8_t* name = r.take(name_len);
    c.name.assign(reinterpret_cast<const char*>(name), name_len);
    c.point_count = r.u16();
    const std::uint16_t limb_count = r.u16();
    c.limbs.reserve(limb_count);
    for (std::uint16_t l = 0; l < limb_count; ++l) {
      const std::uint16_t a = r.u16();
      const std::uint16_t b = r.u16();
      c.limbs.emplace_back(a, b);
    }
    p.header.components.push_back(std::move(c));
  }

  const std::uint32_t frame_count = r.u32();
  const std::size_t k = p.header.total_points();
  p.body.frame_count = frame_count;
  p.body.coords.resize(static_cast<std::size_t>(frame_count) * k * dims);
  p.body.confidences.resize(static_cast<std::size_t>(frame_count) * k);
  for (auto& v : p.body.coords) v = r.f32();
  for (auto& v : p.body.confidences) v = r.f32();

  if (r.remaining() != 0)
    throw TruncatedFile("file length inconsistent with header: " +
                        std::to_string(r.remaining()) + " trailing bytes");
  validate_pose(p);
  return p;
}

inline PoseSequence parse_pose_file(const std::vector<std::uint8_t>& bytes) {
  return parse_pose_file(bytes.data(), bytes.size());
}

namespace detail {

// Encoder without invariant checks. Exists so fuzz corpora can serialize
// deliberately invalid sequences; library callers go through
// serialize_pose, which validates first.
inline std::vector<std::uint8_t> encode_pose_unchecked(const PoseSequence& p);

}  // namespace detail

// Deterministic serializer; parse(serialize(p)) reproduces p bit-exact.
inline std::vector<std::uint8_t> serialize_pose(const PoseSequence& p) {
  validate_pose(p);
  if (p.header.components.size() > 255)
    throw InvariantViolation("at most 255 components");
  return detail::encode_pose_unchecked(p);
}

inline std::vector<std::uint8_t> detail::encode_pose_unchecked(
    const PoseSequence& p) {
  detail::ByteWriter w;
  w.raw(kPoseMagic, 4);
  w.u16(p.header.format_version);
  w.f32(p.header.fps);
  w.u8(p.header.dims());
  w.u8(static_cast<std::uint8_t>(p.header.components.size()));
  for (const auto& c : p.header.components) {
    if (c.name.size() > 255)
      throw InvariantViolation("component name too long");
    w.u8(static_cast<std::uint8_t>(c.name.size()));
    w.raw(c.name.data(), c.name.size());
    w.u16(c.point_count);
    w.u16(static_cast<std::uint16_t>(c.limbs.size()));
    for (const auto& [a, b] : c.limbs) {
      w.u16(a);
      w.u16(b);
    }
  }
  w.u32(static_cast<std::uint32_t>(p.body.frame_count));
  for (float v : p.body.coords) w.f32(v);
  for (float v : p.body.confidences) w.f32(v);
  return std::move(w.bytes);
}

// Cumulative point offset and size of a named component.
inline std::pair<std::size_t, std::size_t> component_slice(
    const PoseSequence& p, const std::string& name) {
  std::size_t start = 0;
  for (const auto& c : p.header.components) {
    if (c.name == name) return {start, c.point_count};
    start += c.point_count;
  }
  throw UnknownComponent("no component named " + name);
}

// Keeps only the named components, in original header order. Frame count,
// coordinates, and confidences of the kept points are copied unmodified.
inline PoseSequence select_components(const PoseSequence& p,
                                      const std::vector<std::string>& names) {
  const std::set<std::string> wanted(names.begin(), names.end());
  for (const auto& n : wanted)
    if (!p.header.has(n)) throw UnknownComponent("no component named " + n);

  PoseSequence out;
  out.header.format_version = p.header.format_version;
  out.header.fps = p.header.fps;

  struct Keep {
    std::size_t start, count;
  };
  std::vector<Keep> keeps;
  std::size_t offset = 0;
  for (const auto& c : p.header.components) {
    if (wanted.count(c.name)) {
      out.header.components.push_back(c);
      keeps.push_back({offset, c.point_count});
    }
    offset += c.point_count;
  }

  const std::size_t d = p.dims();
  const std::size_t k_in = p.points();
  const std::size_t k_out = out.header.total_points();
  const std::size_t t_count = p.frames();
  out.body.frame_count = t_count;
  out.body.coords.resize(t_count * k_out * d);
  out.body.confidences.resize(t_count * k_out);
  for (std::size_t t = 0; t < t_count; ++t) {
    std::size_t dst = 0;
    for (const auto& keep : keeps) {
      std::memcpy(out.body.coords.data() + (t * k_out + dst) * d,
                  p.body.coords.data() + (t * k_in + keep.start) * d,
                  keep.count * d * sizeof(float));
      std::memcpy(out.body.confidences.data() + t * k_out + dst,
                  p.body.confidences.data() + t * k_in + keep.start,
                  keep.count * sizeof(float));
      dst += keep.count;
    }
  }
  return out;
}

// Bitwise equality, used by round-trip and involution tests.
inline bool bit_identical(const PoseSequence& a, const PoseSequence& b) {
  auto float_bits_equal = [](const std::vector<float>& x,
                             const std::vector<float>& y) {
    return x.size() == y.size() &&
           (x.empty() ||
            std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);
  };
  if (a.header.format_version != b.header.format_version) return false;
  float fa = a.header.fps, fb = b.header.fps;
  if (std::memcmp(&fa, &fb, 4) != 0) return false;
  if (a.header.components.size() != b.header.components.size()) return false;
  for (std::size_t i = 0; i < a.header.components.size(); ++i) {
    const auto& ca = a.header.components[i];
    const auto& cb = b.header.components[i];
    if (ca.name != cb.name || ca.point_count != cb.point_count ||
        ca.dims != cb.dims || ca.limbs != cb.limbs)
      return false;
  }
  return a.body.frame_count == b.body.frame_count &&
         float_bits_equal(a.body.coords, b.body.coords) &&
         float_bits_equal(a.body.confidences, b.body.confidences);
}

}  // namespace signkit

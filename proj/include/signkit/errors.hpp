#pragma once

#include <stdexcept>
#include <string>

namespace signkit {

// Base for every error the library throws. Subclasses exist so callers can
// catch one failure mode without string-matching messages.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct BadMagic : Error {
  explicit BadMagic(const std::string& msg) : Error(msg) {}
};

struct TruncatedFile : Error {
  explicit TruncatedFile(const std::string& msg) : Error(msg) {}
};

struct InvariantViolation : Error {
  explicit InvariantViolation(const std::string& msg) : Error(msg) {}
};

struct UnknownComponent : Error {
  explicit UnknownComponent(const std::string& msg) : Error(msg) {}
};

struct LayoutError : Error {
  explicit LayoutError(const std::string& msg) : Error(msg) {}
};

struct MissingMirrorTable : Error {
  explicit MissingMirrorTable(const std::string& msg) : Error(msg) {}
};

struct DegenerateAnchors : Error {
  explicit DegenerateAnchors(const std::string& msg) : Error(msg) {}
};

struct IncompatibleLengths : Error {
  explicit IncompatibleLengths(const std::string& msg) : Error(msg) {}
};

struct ShapeMismatch : Error {
  explicit ShapeMismatch(const std::string& msg) : Error(msg) {}
};

struct BatchTooSmall : Error {
  explicit BatchTooSmall(const std::string& msg) : Error(msg) {}
};

struct OddDimension : Error {
  explicit OddDimension(const std::string& msg) : Error(msg) {}
};

struct IndivisibleHeads : Error {
  explicit IndivisibleHeads(const std::string& msg) : Error(msg) {}
};

struct LabelOutOfRange : Error {
  explicit LabelOutOfRange(const std::string& msg) : Error(msg) {}
};

struct EmptyGroup : Error {
  explicit EmptyGroup(const std::string& msg) : Error(msg) {}
};

struct EmptyDataset : Error {
  explicit EmptyDataset(const std::string& msg) : Error(msg) {}
};

struct TooFewSigners : Error {
  explicit TooFewSigners(const std::string& msg) : Error(msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace signkit

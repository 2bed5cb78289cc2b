#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

namespace arbiter {

using Vec2 = Eigen::Vector2d;
using json = nlohmann::json;

inline constexpr double kPi = 3.14159265358979323846;

// Error hierarchy. Every failure surfaced by the library derives from Error so
// callers (the CLI in particular) can tag and report it uniformly.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error { using Error::Error; };
class InvalidActionError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class SpecError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class TrainingError : public Error { using Error::Error; };
class OptimizationError : public Error { using Error::Error; };
class LabelingError : public Error { using Error::Error; };
class DegenerateInputError : public Error { using Error::Error; };

// A pipeline stage failed; what() is prefixed with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("[" + stage + "] " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// Rotates `v` counterclockwise by `angle` radians.
inline Vec2 rotate(const Vec2& v, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

/// Scales `v` down so that |v| <= limit. Vectors already inside the limit are
/// returned unchanged (bit-for-bit).
inline Vec2 clip_norm(const Vec2& v, double limit) {
  const double n = v.norm();
  if (n <= limit) return v;
  return v * (limit / n);
}

/// Wraps an angle to (-pi, pi].
double wrap_angle(double angle);

inline bool is_finite(const Vec2& v) { return std::isfinite(v.x()) && std::isfinite(v.y()); }

json to_json(const Vec2& v);
Vec2 vec2_from_json(const json& j);

// 64-bit FNV-1a; stable across platforms, used for config fingerprints.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// Writes `content` to `path` via a sibling temp file and rename, so readers
/// never observe a half-written artifact.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

/// Number of items after applying a dataset scale factor; never below 1.
int scaled_count(int full, double scale);

}  // namespace arbiter

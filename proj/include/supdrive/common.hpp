#ifndef SUPDRIVE_COMMON_HPP_
#define SUPDRIVE_COMMON_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace supdrive {

// Error categories map onto CLI exit codes.
enum class ErrorKind {
  kConfig = 2,
  kContract = 3,
  kState = 4,
  kDegenerate = 5,
  kCheckpoint = 6,
  kParse = 7,
  kIo = 8,
  kPrecondition = 9,
  kTraining = 10,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorKind::kConfig, w) {}
};
struct ContractViolation : Error {
  explicit ContractViolation(const std::string& w)
      : Error(ErrorKind::kContract, w) {}
};
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorKind::kState, w) {}
};
struct DegenerateInput : Error {
  explicit DegenerateInput(const std::string& w)
      : Error(ErrorKind::kDegenerate, w) {}
};
struct CheckpointError : Error {
  explicit CheckpointError(const std::string& w)
      : Error(ErrorKind::kCheckpoint, w) {}
};
struct ParseError : Error {
  explicit ParseError(const std::string& w) : Error(ErrorKind::kParse, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorKind::kIo, w) {}
};
struct PreconditionError : Error {
  explicit PreconditionError(const std::string& w)
      : Error(ErrorKind::kPrecondition, w) {}
};
struct TrainingError : Error {
  explicit TrainingError(const std::string& w)
      : Error(ErrorKind::kTraining, w) {}
};

inline constexpr double kPi = 3.14159265358979323846;

inline constexpr double kmh_to_mps(double kmh) { return kmh / 3.6; }
inline constexpr double mps_to_kmh(double mps) { return mps * 3.6; }

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  bool operator==(const Vec2&) const = default;
  double norm() const { return std::hypot(x, y); }
  bool finite() const { return std::isfinite(x) && std::isfinite(y); }
};

inline Vec2 operator*(double s, Vec2 v) { return v * s; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }
inline Vec2 midpoint(Vec2 a, Vec2 b) { return {(a.x + b.x) / 2, (a.y + b.y) / 2}; }

// Distance from p to the closed segment [a, b].
inline double point_segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return (p - a).norm();
  double t = dot(p - a, ab) / len2;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + ab * t)).norm();
}

inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2 * kPi);
  if (a < 0) a += 2 * kPi;
  return a - kPi;
}

// Seeded random stream. Every stochastic component owns one of these so
// rollouts stay reproducible per worker.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double normal(double sigma) { return sigma == 0.0 ? 0.0 : sigma * normal(); }
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }
  std::uint64_t next_u64() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// SplitMix64 finaliser, used to derive independent child seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(a) ^ b) ^ c);
}

}  // namespace supdrive

#endif  // SUPDRIVE_COMMON_HPP_

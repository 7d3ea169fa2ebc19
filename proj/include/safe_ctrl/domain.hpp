#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace safe_ctrl {

// Upper bound on state/control dimension. Small vectors live on the stack.
inline constexpr int kMaxSmallDim = 8;

using SmallVector = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxSmallDim, 1>;
using SmallMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxSmallDim, kMaxSmallDim>;

using StateVector = SmallVector;
using ControlVector = SmallVector;
/// n x m input map of a control-affine system.
using InputMatrix = SmallMatrix;

/// Raised on contract violations: non-finite states, dimension mismatches,
/// invalid parameters.
class Fault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) {
  return m.allFinite();
}

/// Per-coordinate control limits [lower, upper].
struct ControlBounds {
  ControlVector lower;
  ControlVector upper;

  int dim() const { return static_cast<int>(lower.size()); }

  bool contains(const ControlVector& u, double tol = 0.0) const {
    if (u.size() != lower.size()) return false;
    for (int j = 0; j < u.size(); ++j) {
      if (u[j] < lower[j] - tol || u[j] > upper[j] + tol) return false;
    }
    return true;
  }

  ControlVector clip(const ControlVector& u) const {
    return u.cwiseMax(lower).cwiseMin(upper);
  }

  ControlVector range() const { return upper - lower; }
};

/// Diagonal Gaussian process noise, one standard deviation per state coordinate.
struct NoiseSpec {
  Eigen::VectorXd sigmas;

  double sigma_bar() const { return sigmas.size() == 0 ? 0.0 : sigmas.maxCoeff(); }

  void validate() const {
    for (int i = 0; i < sigmas.size(); ++i) {
      if (!(sigmas[i] >= 0.0) || !std::isfinite(sigmas[i])) {
        throw Fault("noise sigma must be finite and nonnegative");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Seeded randomness
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Reproducible random source. One instance per consumer; not thread safe.
class Rng {
 public:
  explicit Rng(std::uint64_t state_seed) : engine_(state_seed) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Independent stream for a (seed, label) pair. Optional indices select
/// sub-streams, e.g. one per episode and trial.
inline Rng seeded_rng(std::uint64_t seed, std::string_view stream,
                      std::uint64_t index0 = 0, std::uint64_t index1 = 0) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::splitmix64(h ^ detail::fnv1a(stream));
  h = detail::splitmix64(h ^ (index0 * 0x9e3779b97f4a7c15ULL));
  h = detail::splitmix64(h ^ (index1 * 0xc2b2ae3d27d4eb4fULL));
  return Rng(h);
}

/// One draw of eps ~ N(0, diag(sigma^2)).
inline StateVector sample_gaussian_noise(const NoiseSpec& spec, Rng& rng) {
  StateVector eps(spec.sigmas.size());
  for (int i = 0; i < spec.sigmas.size(); ++i) eps[i] = spec.sigmas[i] * rng.normal();
  return eps;
}

// ---------------------------------------------------------------------------
// Episode traces
// ---------------------------------------------------------------------------

struct StepRecord {
  int step = 0;
  StateVector x;
  ControlVector u;
  double cost = 0.0;
  StateVector x_next;
  double barrier = 0.0;  // min over the environment's barriers of h(x_step)
  bool constraint_active = false;
  bool qp_infeasible = false;
};

struct EpisodeTrace {
  std::vector<StepRecord> steps;

  double cost() const {
    return std::accumulate(steps.begin(), steps.end(), 0.0,
                           [](double acc, const StepRecord& s) { return acc + s.cost; });
  }

  int infeasible_count() const {
    int k = 0;
    for (const auto& s : steps) k += s.qp_infeasible ? 1 : 0;
    return k;
  }

  int active_count() const {
    int k = 0;
    for (const auto& s : steps) k += s.constraint_active ? 1 : 0;
    return k;
  }

  /// Step indices contiguous from zero.
  bool contiguous() const {
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (steps[i].step != static_cast<int>(i)) return false;
    }
    return true;
  }
};

}  // namespace safe_ctrl

#include "stochlift/error.hpp"
#include "stochlift/parallel.hpp"
#include "stochlift/rng.hpp"
#include "stochlift/types.hpp"

#include <omp.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace stochlift {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::singular: return "singular";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::io: return "io";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

// ---- threads --------------------------------------------------------------

namespace {
int g_default_threads = -1;
}

void set_num_threads(int threads) {
  if (g_default_threads < 0) g_default_threads = omp_get_max_threads();
  omp_set_num_threads(threads > 0 ? threads : g_default_threads);
}

int num_threads() { return omp_get_max_threads(); }

// ---- rng ------------------------------------------------------------------

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform_open_low();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection on the top of the range keeps the result unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = engine_();
  } while (r >= limit);
  return r % n;
}

// ---- types ----------------------------------------------------------------

double Normalization::to_unit(std::size_t k, double value) const {
  if (constant[k]) return 0.5;
  return (value - min[k]) / (max[k] - min[k]);
}

double Normalization::from_unit(std::size_t k, double value) const {
  if (constant[k]) return min[k];
  return min[k] + value * (max[k] - min[k]);
}

std::string_view to_string(Source source) noexcept {
  switch (source) {
    case Source::duffing: return "duffing";
    case Source::wave: return "wave";
    case Source::external: return "external";
    case Source::generated: return "generated";
  }
  return "external";
}

Source source_from_string(std::string_view name) {
  if (name == "duffing") return Source::duffing;
  if (name == "wave") return Source::wave;
  if (name == "external") return Source::external;
  if (name == "generated") return Source::generated;
  fail(ErrorCode::invalid_argument, "unknown source tag '" + std::string(name) + "'");
}

void TrajectorySet::validate() const {
  require(!trajectories.empty(), ErrorCode::invalid_argument, "trajectory set is empty");
  const auto T = length();
  const auto n = dim();
  require(n >= 1, ErrorCode::invalid_argument, "state dimension must be >= 1");
  require(T >= 2, ErrorCode::invalid_argument, "trajectories need at least 2 states");
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& tr = trajectories[i];
    if (tr.length() != T || tr.dim() != n) {
      std::ostringstream os;
      os << "trajectory " << i << " has shape " << tr.length() << "x" << tr.dim()
         << ", expected " << T << "x" << n;
      fail(ErrorCode::dimension_mismatch, os.str());
    }
    // Generated sets are not clamped, so only data sets are range checked.
    if (normalized() && source != Source::generated) {
      const double lo = tr.states.minCoeff();
      const double hi = tr.states.maxCoeff();
      if (lo < 0.0 || hi > 1.0) {
        std::ostringstream os;
        os << "trajectory " << i << " leaves [0,1] although the set is normalized";
        fail(ErrorCode::invalid_argument, os.str());
      }
    }
  }
  if (normalized()) {
    require(normalization->dim() == n, ErrorCode::dimension_mismatch,
            "normalization record dimension does not match the states");
  }
}

Matrix TrajectorySet::marginal(std::size_t t) const {
  require(t < length(), ErrorCode::invalid_argument, "time index out of range");
  Matrix out(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(dim()));
  for (std::size_t i = 0; i < size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = trajectories[i].states.row(static_cast<Eigen::Index>(t));
  }
  return out;
}

}  // namespace stochlift

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace facetalk {

using Index = Eigen::Index;

// Dense types templated on scalar. Double is the default for geometry and
// fitting; the diffusion model stack is instantiated on float so checkpoints
// (32-bit on disk) round-trip exactly.
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3>;
template <typename S>
using ArrX = Eigen::Array<S, Eigen::Dynamic, 1>;

// Points stored one per row.
template <typename S>
using Points = Eigen::Matrix<S, Eigen::Dynamic, 3>;

inline constexpr Index kExpressionDim = 200;
inline constexpr Index kIdentityDim = 1344;
inline constexpr Index kLandmarkCount = 68;
inline constexpr double kExpressionFps = 24.0;
inline constexpr int kAudioRate = 16000;

// Error taxonomy. The CLI maps these onto its exit codes:
// ConfigError -> 2, DataError (and subclasses) -> 3, NumericalError -> 4.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct FormatError : DataError {
  using DataError::DataError;
};
struct DimensionError : DataError {
  using DataError::DataError;
};
struct InsufficientInputError : DataError {
  using DataError::DataError;
};
struct NumericalError : Error {
  using Error::Error;
};
struct DegenerateInputError : NumericalError {
  using NumericalError::NumericalError;
};

inline void require_same_shape(const char* what, Index r1, Index c1, Index r2,
                               Index c2) {
  if (r1 != r2 || c1 != c2) {
    throw DimensionError(std::string(what) + ": shape mismatch (" +
                         std::to_string(r1) + "x" + std::to_string(c1) +
                         " vs " + std::to_string(r2) + "x" +
                         std::to_string(c2) + ")");
  }
}

// Chunked parallel map over [0, n). Each index is processed exactly once and
// workers write disjoint outputs, so results do not depend on the thread
// count. threads <= 1 runs inline.
inline void parallel_for(Index n, int threads,
                         const std::function<void(Index)>& fn) {
  if (threads <= 1 || n < 2) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(
      std::min<Index>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const Index chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const Index lo = w * chunk;
    const Index hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (Index i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace facetalk

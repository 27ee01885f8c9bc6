#pragma once

#include <cstdint>
#include <random>

namespace iwvi {

/// A reproducible random stream identified by (seed, stream_id).
///
/// Two streams with the same pair produce the same sequence; distinct
/// stream ids give independent sequences. Callers that need parallelism
/// partition their work by stream id. A single instance must not be drawn
/// from concurrently.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  /// Gamma(shape, scale = 1).
  double gamma(double shape);
  std::uint64_t bits() { return engine_(); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

/// Mixes a purpose tag into a seed so different experiment stages draw from
/// disjoint stream families.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace iwvi

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace lexchain {

/// SplitMix64. Chosen over the <random> engines/distributions because the
/// stream must be identical on every platform for seeded reproducibility.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();

  /// Uniform integer in [0, n), rejection-sampled so it is unbiased.
  std::size_t below(std::size_t n);

 private:
  std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Mixes two 64-bit values into one seed (splitmix finalizer on the xor).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

std::string hex64(std::uint64_t value);

std::string_view trim(std::string_view text);
std::string to_lower(std::string_view text);

/// Splits on ASCII whitespace, dropping empty pieces.
std::vector<std::string_view> split_whitespace(std::string_view text);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Runs fn(i) for i in [0, n) on at most `workers` threads. The first
/// exception thrown (lowest index) is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

}  // namespace lexchain

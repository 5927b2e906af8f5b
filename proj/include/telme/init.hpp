#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "telme/numerics.hpp"

namespace telme {

/// Uniform in ±√(6/(fan_in+fan_out)) for an out×in weight matrix.
void glorot_uniform(Matrix& w, std::mt19937_64& rng);

/// Deterministic child seed from a parent seed and a stream tag (splitmix64
/// over an FNV-1a hash of the tag).
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag);

}  // namespace telme

#pragma once

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Every block
// of four 32-bit words is a pure function of (counter, key), so a draw can be
// addressed directly by (seed, path, step) with no shared state.

#include <array>
#include <cstdint>

namespace qtb {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter ctr, PhiloxKey key);

/// Four independent standard normals for stream (seed, path) at index step.
std::array<double, 4> philox_normals(std::uint64_t seed, std::uint64_t path, std::uint64_t step);

}  // namespace qtb

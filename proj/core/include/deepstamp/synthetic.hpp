#pragma once

#include <cstdint>

#include "deepstamp/dataio.hpp"

// Stand-ins for when the real CIFAR-10 binaries are not available: a seeded
// 10-class shapes dataset in the same layout and value grid, and a built-in
// logo watermark.
namespace deepstamp::synthetic {

/// n images of 3x32x32, balanced labels (class = shape kind) in a seeded
/// order. Pixel values lie on the 8-bit grid, so a CIFAR encode/decode
/// round-trip is exact. Image i depends only on (seed, i).
ImageBatch make_shapes(std::size_t n, std::uint64_t seed);

/// Deterministic ring-and-bar logo with soft edges; alpha is 0 near the border.
Watermark builtin_logo(std::size_t side = kImageSide);

}  // namespace deepstamp::synthetic

#pragma once

#include <cstdint>

#include "dcgp/matrix.hpp"
#include "dcgp/patches.hpp"

namespace dcgp {

// Lloyd iteration with k-means++ seeding. Runs until the relative objective
// improvement drops below 1e-6 or 100 iterations; deterministic given seed.
// Throws InsufficientPatches when the sample has fewer rows than M.
PatchMatrix kmeans_init(const PatchMatrix &sample, std::size_t m, std::uint64_t seed);

// Mean squared distance objective of an assignment, exposed for tests.
double kmeans_objective(const PatchMatrix &sample, const PatchMatrix &centers);

}  // namespace dcgp

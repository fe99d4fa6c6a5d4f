#include "dcgp/kmeans.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "dcgp/errors.hpp"
#include "dcgp/rng.hpp"

namespace dcgp {

namespace {

double sq_dist_rows(const DenseMatrix &a, std::size_t i, const DenseMatrix &b,
                    std::size_t j) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) {
    const double diff = a(i, k) - b(j, k);
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

double kmeans_objective(const PatchMatrix &sample, const PatchMatrix &centers) {
  double total = 0.0;
  for (std::size_t i = 0; i < sample.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows(); ++c) {
      best = std::min(best, sq_dist_rows(sample, i, centers, c));
    }
    total += best;
  }
  return total / static_cast<double>(sample.rows());
}

PatchMatrix kmeans_init(const PatchMatrix &sample, std::size_t m, std::uint64_t seed) {
  const std::size_t n = sample.rows();
  const std::size_t d = sample.cols();
  if (n < m) throw InsufficientPatches("kmeans_init: sample smaller than M");
  if (m == 0) throw InsufficientPatches("kmeans_init: M must be positive");

  Rng rng(mix_seed(seed, 0x4b3e));

  // k-means++ seeding.
  PatchMatrix centers(m, d);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::size_t first = rng.integer(n);
  for (std::size_t k = 0; k < d; ++k) centers(0, k) = sample(first, k);
  for (std::size_t c = 1; c < m; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      min_d2[i] = std::min(min_d2[i], sq_dist_rows(sample, i, centers, c - 1));
      total += min_d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      bool found = false;
      for (std::size_t i = 0; i < n; ++i) {
        acc += min_d2[i];
        if (min_d2[i] > 0.0 && acc >= target) {
          pick = i;
          found = true;
          break;
        }
      }
      if (!found) {
        for (std::size_t i = n; i-- > 0;) {
          if (min_d2[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      pick = rng.integer(n);
    }
    for (std::size_t k = 0; k < d; ++k) centers(c, k) = sample(pick, k);
  }

  std::vector<std::size_t> assignment(n, 0);
  double prev_objective = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 100; ++iter) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_c = 0;
      for (std::size_t c = 0; c < m; ++c) {
        const double d2 = sq_dist_rows(sample, i, centers, c);
        if (d2 < best) {
          best = d2;
          best_c = c;
        }
      }
      assignment[i] = best_c;
      objective += best;
    }
    objective /= static_cast<double>(n);

    PatchMatrix next(m, d);
    std::vector<std::size_t> counts(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
      counts[assignment[i]]++;
      for (std::size_t k = 0; k < d; ++k) next(assignment[i], k) += sample(i, k);
    }
    for (std::size_t c = 0; c < m; ++c) {
      if (counts[c] == 0) {
        // Re-seed an empty cluster with a random sample point.
        const std::size_t pick = rng.integer(n);
        for (std::size_t k = 0; k < d; ++k) next(c, k) = sample(pick, k);
      } else {
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (std::size_t k = 0; k < d; ++k) next(c, k) *= inv;
      }
    }
    centers = std::move(next);

    if (prev_objective - objective <
        1e-6 * std::max(std::abs(prev_objective), 1e-300)) {
      break;
    }
    prev_objective = objective;
  }
  return centers;
}

}  // namespace dcgp

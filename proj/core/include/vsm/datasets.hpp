#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vsm/rng.hpp"

namespace vsm {

// Seeded samplers for the small training distributions: five 2D shapes plus
// the one-dimensional linear-Gaussian stream.
enum class DatasetKind {
  banana,
  funnel,
  star,
  ring,
  grid_of_gaussians,
  linear_toy,
};
DatasetKind dataset_kind_from_string(std::string_view s);
const char* to_string(DatasetKind k);

struct DatasetId {
  DatasetKind kind = DatasetKind::banana;
  // linear_toy only: x = theta_star * z + sqrt(gamma) * noise.
  double theta_star = 2.0;
  double gamma = 0.5;
};

struct Dataset {
  int dim = 2;  // 1 for linear_toy
  std::vector<double> pts;  // row-major, n x dim

  std::size_t size() const { return pts.size() / static_cast<std::size_t>(dim); }
  std::span<const double> row(std::size_t i) const {
    return {pts.data() + i * static_cast<std::size_t>(dim),
            static_cast<std::size_t>(dim)};
  }
};

// Draws n i.i.d. points. Identical (id, n, seed) give bit-identical arrays;
// callers wanting disjoint train/test streams pass different seeds.
Dataset sample_dataset(const DatasetId& id, int n, std::uint64_t seed);

// Same stream, reusable between refills (the trainer re-draws minibatches).
Dataset sample_dataset(const DatasetId& id, int n, Rng& rng);

}  // namespace vsm

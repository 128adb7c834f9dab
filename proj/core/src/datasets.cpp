#include "vsm/datasets.hpp"

#include <cmath>
#include <stdexcept>

namespace vsm {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

DatasetKind dataset_kind_from_string(std::string_view s) {
  if (s == "banana") return DatasetKind::banana;
  if (s == "funnel") return DatasetKind::funnel;
  if (s == "star") return DatasetKind::star;
  if (s == "ring") return DatasetKind::ring;
  if (s == "grid_of_gaussians") return DatasetKind::grid_of_gaussians;
  if (s == "linear_toy") return DatasetKind::linear_toy;
  throw std::invalid_argument("unknown dataset: " + std::string(s));
}

const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::banana: return "banana";
    case DatasetKind::funnel: return "funnel";
    case DatasetKind::star: return "star";
    case DatasetKind::ring: return "ring";
    case DatasetKind::grid_of_gaussians: return "grid_of_gaussians";
    case DatasetKind::linear_toy: return "linear_toy";
  }
  throw std::invalid_argument("unknown dataset kind");
}

Dataset sample_dataset(const DatasetId& id, int n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_dataset: n must be >= 1");
  Dataset ds;
  ds.dim = id.kind == DatasetKind::linear_toy ? 1 : 2;
  ds.pts.resize(static_cast<std::size_t>(n) * ds.dim);

  switch (id.kind) {
    case DatasetKind::banana:
      // Standard normal bent along a parabola.
      for (int i = 0; i < n; ++i) {
        const double u1 = rng.normal(), u2 = rng.normal();
        ds.pts[2 * i] = u1;
        ds.pts[2 * i + 1] = u2 + u1 * u1 / 4.0 - 1.0;
      }
      break;
    case DatasetKind::funnel:
      // Neal's funnel: the first coordinate sets the log-scale of the second.
      for (int i = 0; i < n; ++i) {
        const double z1 = 3.0 * rng.normal();
        ds.pts[2 * i] = z1;
        ds.pts[2 * i + 1] = std::exp(z1 / 2.0) * rng.normal();
      }
      break;
    case DatasetKind::star: {
      // Six equal modes on the unit circle, 60 degrees apart.
      const std::vector<double> w(6, 1.0 / 6.0);
      for (int i = 0; i < n; ++i) {
        const int k = rng.categorical(w);
        const double ang = kTwoPi * k / 6.0;
        ds.pts[2 * i] = std::cos(ang) + 0.15 * rng.normal();
        ds.pts[2 * i + 1] = std::sin(ang) + 0.15 * rng.normal();
      }
      break;
    }
    case DatasetKind::ring:
      // Radius-2 circle with radial jitter.
      for (int i = 0; i < n; ++i) {
        const double ang = rng.uniform(0.0, kTwoPi);
        const double r = 2.0 + 0.05 * rng.normal();
        ds.pts[2 * i] = r * std::cos(ang);
        ds.pts[2 * i + 1] = r * std::sin(ang);
      }
      break;
    case DatasetKind::grid_of_gaussians: {
      // 3x3 grid centered at the origin, spacing 1.5, sd 0.1.
      const std::vector<double> w(9, 1.0 / 9.0);
      for (int i = 0; i < n; ++i) {
        const int k = rng.categorical(w);
        ds.pts[2 * i] = 1.5 * (k % 3 - 1) + 0.1 * rng.normal();
        ds.pts[2 * i + 1] = 1.5 * (k / 3 - 1) + 0.1 * rng.normal();
      }
      break;
    }
    case DatasetKind::linear_toy: {
      const double noise_sd = std::sqrt(id.gamma);
      for (int i = 0; i < n; ++i)
        ds.pts[i] = id.theta_star * rng.normal() + noise_sd * rng.normal();
      break;
    }
  }
  return ds;
}

Dataset sample_dataset(const DatasetId& id, int n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_dataset(id, n, rng);
}

}  // namespace vsm

#include "vsm/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace vsm {

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : eng_(mix_seed(seed)), root_seed_(seed) {}

double Rng::uniform() {
  // 53 random bits into (0,1); offset keeps 0 out of the range.
  return static_cast<double>(eng_() >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Marsaglia polar method.
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double f = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * f;
  have_spare_ = true;
  return u * f;
}

void Rng::normal(std::span<double> out) {
  for (double& x : out) x = normal();
}

int Rng::categorical(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("categorical: negative weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("categorical: zero total weight");
  double u = uniform() * total;
  for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
    u -= weights[k];
    if (u <= 0.0) return static_cast<int>(k);
  }
  return static_cast<int>(weights.size()) - 1;
}

Rng Rng::fork(std::uint64_t tag) const {
  return Rng(mix_seed(root_seed_ ^ mix_seed(tag + 0x51ed2701)));
}

}  // namespace vsm

#include "npis/rng.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <cmath>

namespace npis {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

double Rng::exponential(double rate) noexcept { return -std::log1p(-uniform()) / rate; }

double Rng::normal() {
  double u = uniform();
  while (u == 0.0) u = uniform();
  return normal_quantile(u);
}

double normal_quantile(double u) { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * u); }

}  // namespace npis

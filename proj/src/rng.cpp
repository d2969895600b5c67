#include "hetsurv/rng.hpp"

#include <cmath>

namespace hetsurv {

double Rng::normal() {
    // Guard u1 away from 0 so the log stays finite.
    double u1 = uniform();
    if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

int Rng::uniform_int(int n) {
    const std::uint64_t x = gen_();
    return static_cast<int>((static_cast<unsigned __int128>(x) * static_cast<std::uint64_t>(n)) >> 64);
}

Rng Rng::derive(std::uint64_t stream) const {
    return Rng(mix64(seed_ ^ mix64(stream + 0x9e3779b97f4a7c15ULL)));
}

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace hetsurv

#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace hetsurv {

// Deterministic random stream. All stochastic operations take an Rng
// explicitly; reproducibility across runs of the same build is a hard
// requirement, so uniform/normal draws are derived from raw mt19937_64
// output here instead of going through std:: distributions (whose exact
// sequences are implementation-defined).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform on [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without caching; two raw draws per variate.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Uniform integer in [0, n). Rejection-free modulo-bias avoidance via
    // 64-bit multiply-shift.
    int uniform_int(int n);

    // Fisher-Yates; stable ordering independent of library internals.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
        }
    }

    // Independent stream keyed on (seed, stream); used for per-patient and
    // per-fold work so parallel workers stay reproducible.
    Rng derive(std::uint64_t stream) const;

  private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

// SplitMix64 finalizer; also the seed-mixing primitive behind Rng::derive.
std::uint64_t mix64(std::uint64_t x);

}  // namespace hetsurv

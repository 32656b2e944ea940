#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace protorel {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent sub-stream seed for a named purpose within a run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed ^ splitmix64(stream));
}

// mt19937_64 with hand-rolled distributions. The standard pins the engine's
// output sequence but not the library distributions, so uniform/gaussian are
// implemented here to keep runs reproducible across toolchains.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    // [0, 1), 53-bit resolution
    double uniform01() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // [0, n)
    std::int64_t below(std::int64_t n) {
        return static_cast<std::int64_t>(eng_() % static_cast<std::uint64_t>(n));
    }

    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // Box-Muller on (0,1] uniforms
        double u1 = 1.0 - uniform01();
        double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * M_PI * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * M_PI * u2);
    }

    std::vector<double> gaussian_vec(std::int64_t n, double scale = 1.0) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (auto& x : v) x = gaussian() * scale;
        return v;
    }

    // Random direction on the unit sphere.
    std::vector<double> unit_vector(std::int64_t n) {
        std::vector<double> v;
        double norm = 0.0;
        while (norm == 0.0) {
            v = gaussian_vec(n);
            for (double x : v) norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : v) x /= norm;
        return v;
    }

    // Fisher-Yates; avoids std::shuffle, whose draws are unspecified.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(static_cast<std::int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace protorel

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace dk {

// Deterministic splitmix64-based generator. Hand-rolled distributions so the
// same seed gives the same stream on every platform and standard library.
class Rng {
   public:
    explicit Rng(uint64_t seed = 0) : state_(seed * 0x9E3779B97F4A7C15ULL + 0x2545F4914F6CDD1DULL) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Beta(a,a) via Johnk for small a, fallback through gammas.
    double beta(double a, double b) {
        double x = gamma(a), y = gamma(b);
        return x / (x + y);
    }

    // Named substream: independent generator derived from this seed and a label.
    // Used to give model-init / data-order / augmentation / critic-init their
    // own reseedable streams.
    Rng stream(std::string_view name) const {
        uint64_t h = 0xCBF29CE484222325ULL ^ state_;
        for (char c : name) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001B3ULL;
        }
        return Rng(h);
    }

   private:
    double gamma(double shape) {
        // Marsaglia-Tsang; for shape < 1 boost via the standard power trick.
        if (shape < 1.0) {
            double u = 0.0;
            while (u <= 1e-300) u = uniform();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = uniform();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 1e-300 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace dk

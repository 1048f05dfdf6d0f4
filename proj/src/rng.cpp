#include "laser/rng.hpp"

#include <cmath>
#include <numbers>

namespace laser {

double NormalSampler::uniform() {
    // 53 random mantissa bits, shifted off zero
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
}

double NormalSampler::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::vector<float> NormalSampler::normals(std::size_t n, double stddev) {
    std::vector<float> out(n);
    for (auto& x : out) x = static_cast<float>(normal() * stddev);
    return out;
}

}  // namespace laser

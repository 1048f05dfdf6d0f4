#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace laser {

// Portable normal sampler: std::normal_distribution is implementation-defined,
// so frozen weights and initial noise are drawn with Box-Muller over mt19937_64
// to stay bit-stable across standard libraries.
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

    double uniform();  // (0, 1)
    double normal();
    std::vector<float> normals(std::size_t n, double stddev = 1.0);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace laser

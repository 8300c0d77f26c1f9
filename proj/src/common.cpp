#include "relex/common.hpp"

#include <cmath>
#include <cstdio>

namespace relex {

uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::string fmt_double17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

VectorXd random_unit(Rng& rng, int dim) {
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd v(dim);
    do {
        for (int i = 0; i < dim; ++i) v[i] = normal(rng);
    } while (v.norm() < 1e-12);
    return v / v.norm();
}

VectorXd random_in_ball(Rng& rng, int dim, double radius) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    VectorXd u = random_unit(rng, dim);
    double r = radius * std::pow(unif(rng), 1.0 / dim);
    return r * u;
}

}  // namespace relex

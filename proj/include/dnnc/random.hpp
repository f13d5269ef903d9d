#pragma once

// Random variate generation. The engine is std::mt19937_64, whose output
// sequence is fixed by the standard; the distributions come from Boost.Random
// so that draws do not depend on which standard library the code is built with.

#include <cmath>
#include <cstdint>
#include <random>

#include <boost/random/binomial_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/poisson_distribution.hpp>
#include <boost/random/uniform_01.hpp>
#include <boost/random/uniform_int_distribution.hpp>

namespace dnnc {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent substream for unit `stream` of a run seeded with `seed`.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

inline double uniform01(Rng& rng) {
    boost::random::uniform_01<double> dist;
    return dist(rng);
}

/// Uniform on the open interval (0, 1).
inline double uniform_open(Rng& rng) {
    double u = 0.0;
    do {
        u = uniform01(rng);
    } while (u <= 0.0);
    return u;
}

inline double std_normal(Rng& rng) {
    boost::random::normal_distribution<double> dist(0.0, 1.0);
    return dist(rng);
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    boost::random::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(rng);
}

/// Gamma(shape, scale); mean shape*scale.
inline double gamma_draw(Rng& rng, double shape, double scale) {
    boost::random::gamma_distribution<double> dist(shape, scale);
    return dist(rng);
}

/// Inverse-gamma IG(shape, rate) with density proportional to x^(-shape-1) exp(-rate/x).
inline double inv_gamma_draw(Rng& rng, double shape, double rate) {
    return rate / gamma_draw(rng, shape, 1.0);
}

inline std::int64_t poisson_draw(Rng& rng, double mean) {
    if (!(mean > 0.0)) return 0;
    boost::random::poisson_distribution<std::int64_t, double> dist(mean);
    return dist(rng);
}

inline std::int64_t binomial_draw(Rng& rng, std::int64_t trials, double p) {
    if (trials <= 0 || p <= 0.0) return 0;
    if (p >= 1.0) return trials;
    boost::random::binomial_distribution<std::int64_t, double> dist(trials, p);
    return dist(rng);
}

/// Fisher-Yates shuffle driven by uniform_index, stable across standard libraries.
template <class Vec>
void shuffle_in_place(Vec& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = uniform_index(rng, i);
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace dnnc

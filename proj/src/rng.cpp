#include "dtd/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dtd {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : stream_seed_(seed) {
    std::uint64_t s = seed;
    for (auto& w : state_) w = splitmix64(s);
}

Rng Rng::split(std::string_view name) const {
    std::uint64_t mix = stream_seed_;
    std::uint64_t h = fnv1a(name);
    mix ^= h + 0x9e3779b97f4a7c15ULL + (mix << 6) + (mix >> 2);
    return Rng(mix);
}

Rng Rng::split(std::uint64_t index) const {
    std::uint64_t mix = stream_seed_;
    std::uint64_t h = index;
    h = splitmix64(h);
    mix ^= h + 0x9e3779b97f4a7c15ULL + (mix << 6) + (mix >> 2);
    return Rng(mix);
}

std::uint64_t Rng::next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int needs n > 0");
    // Rejection sampling keeps the draw exactly uniform.
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t v;
    do {
        v = next_u64();
    } while (v >= limit);
    return static_cast<int>(v % un);
}

double Rng::normal() {
    // Box-Muller; u1 shifted away from 0 so log stays finite.
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

Tensor Rng::normal_tensor(std::vector<int> shape, double stddev) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = stddev * normal();
    return t;
}

Tensor Rng::uniform_tensor(std::vector<int> shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
    return t;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace dtd

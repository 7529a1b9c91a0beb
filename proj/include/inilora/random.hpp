#pragma once

// Deterministic sampling.
//
// The generator is SplitMix64 addressed by position: the value at counter c
// for seed s is the c-th output of a SplitMix64 stream seeded with s, computed
// directly as mix64(s + (c + 1) * golden). Every matrix entry draws from its
// own counters, so results never depend on evaluation order or thread count.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "inilora/error.hpp"
#include "inilora/matrix.hpp"

namespace inilora {

namespace rng {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// Child seed for a labelled sub-stream, e.g. derive_seed(base, "layers.0.query").
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view label) noexcept {
    return mix64(base ^ mix64(fnv1a64(label) + kGolden));
}

template <typename... Labels>
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view first,
                                    Labels... rest) noexcept {
    return derive_seed(derive_seed(base, first), rest...);
}

/// Random access into a SplitMix64 stream.
class CounterRng {
public:
    explicit constexpr CounterRng(std::uint64_t seed) noexcept : seed_(seed) {}

    constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
        return mix64(seed_ + (counter + 1) * kGolden);
    }

    /// Uniform on the open interval (0, 1) with 53 bits of resolution.
    constexpr double uniform(std::uint64_t counter) const noexcept {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on counters (2i, 2i+1).
    double normal(std::uint64_t index) const noexcept {
        const double u1 = uniform(2 * index);
        const double u2 = uniform(2 * index + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    constexpr std::uint64_t seed() const noexcept { return seed_; }

private:
    std::uint64_t seed_;
};

/// Sequential SplitMix64 for shuffles and other stream-style uses.
class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    constexpr result_type operator()() noexcept {
        state_ += kGolden;
        return mix64(state_);
    }

    /// Integer in [0, n) by multiply-shift.
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
    }

private:
    std::uint64_t state_;
};

/// Fisher-Yates permutation of [0, n).
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = i;
    }
    SplitMix64 gen(seed);
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = gen.below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace rng

enum class DistributionKind { normal, kaiming_normal, kaiming_uniform };

inline std::string to_string(DistributionKind kind) {
    switch (kind) {
        case DistributionKind::normal: return "normal";
        case DistributionKind::kaiming_normal: return "kaiming-normal";
        case DistributionKind::kaiming_uniform: return "kaiming-uniform";
    }
    return "unknown";
}

/// Kaiming kinds use fan_in mode with gain sqrt(2): N(0, 2/fan_in) and
/// U(-sqrt(6/fan_in), sqrt(6/fan_in)).
struct DistributionSpec {
    DistributionKind kind = DistributionKind::normal;
    double mean = 0.0;
    double std = 1.0;
    std::size_t fan_in = 1;

    static DistributionSpec normal(double mean, double std) {
        return {DistributionKind::normal, mean, std, 1};
    }
    static DistributionSpec kaiming_normal(std::size_t fan_in) {
        return {DistributionKind::kaiming_normal, 0.0, 0.0, fan_in};
    }
    static DistributionSpec kaiming_uniform(std::size_t fan_in) {
        return {DistributionKind::kaiming_uniform, 0.0, 0.0, fan_in};
    }

    void validate() const {
        if (kind == DistributionKind::normal) {
            if (!(std > 0.0) || !std::isfinite(std) || !std::isfinite(mean)) {
                throw ValidationError("normal distribution requires finite mean and std > 0");
            }
        } else if (fan_in < 1) {
            throw ValidationError(to_string(kind) + " requires fan_in >= 1");
        }
    }

    /// Standard deviation of the kaiming-normal kind.
    double kaiming_std() const { return std::sqrt(2.0 / static_cast<double>(fan_in)); }
    /// Half-width of the kaiming-uniform kind.
    double kaiming_bound() const { return std::sqrt(6.0 / static_cast<double>(fan_in)); }
};

inline Matrix sample(const DistributionSpec& spec, std::size_t rows, std::size_t cols,
                     std::uint64_t seed) {
    spec.validate();
    Matrix out(rows, cols);
    const rng::CounterRng gen(seed);
    auto v = out.values();
    switch (spec.kind) {
        case DistributionKind::normal:
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] = spec.mean + spec.std * gen.normal(i);
            }
            break;
        case DistributionKind::kaiming_normal: {
            const double s = spec.kaiming_std();
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] = s * gen.normal(i);
            }
            break;
        }
        case DistributionKind::kaiming_uniform: {
            const double bound = spec.kaiming_bound();
            for (std::size_t i = 0; i < v.size(); ++i) {
                v[i] = bound * (2.0 * gen.uniform(i) - 1.0);
            }
            break;
        }
    }
    out.require_finite("sample");
    return out;
}

}  // namespace inilora

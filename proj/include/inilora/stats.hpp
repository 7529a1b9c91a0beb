#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "inilora/error.hpp"
#include "inilora/matrix.hpp"

namespace inilora {

/// Population mean and standard deviation of one weight matrix.
struct LayerStats {
    std::string layer_name;
    double mu = 0.0;
    double sigma = 0.0;
    std::size_t element_count = 0;
};

/// Unweighted average of per-layer statistics.
struct GlobalInitParams {
    double mu_bar = 0.0;
    double sigma_bar = 0.0;
    std::size_t n_layers = 0;
};

inline LayerStats layer_stats(const Matrix& w, std::string name) {
    const auto v = w.values();
    if (v.empty()) {
        throw ValidationError("layer_stats: empty matrix");
    }
    const auto n = static_cast<double>(v.size());
    double sum = 0.0;
    for (double x : v) {
        sum += x;
    }
    double mu = sum / n;
    // One correction pass; for a constant matrix this recovers the value exactly.
    double drift = 0.0;
    for (double x : v) {
        drift += x - mu;
    }
    mu += drift / n;
    double sq = 0.0;
    for (double x : v) {
        const double d = x - mu;
        sq += d * d;
    }
    return {std::move(name), mu, std::sqrt(sq / n), v.size()};
}

namespace detail {

// Summing in sorted order makes the mean independent of layer order.
inline double order_free_mean(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    double s = 0.0;
    for (double x : values) {
        s += x;
    }
    return s / static_cast<double>(values.size());
}

}  // namespace detail

inline GlobalInitParams global_init(std::span<const LayerStats> stats) {
    if (stats.empty()) {
        throw ValidationError("global_init: no layer statistics");
    }
    std::vector<double> mus, sigmas;
    mus.reserve(stats.size());
    sigmas.reserve(stats.size());
    for (const auto& s : stats) {
        mus.push_back(s.mu);
        sigmas.push_back(s.sigma);
    }
    return {detail::order_free_mean(std::move(mus)), detail::order_free_mean(std::move(sigmas)),
            stats.size()};
}

inline nlohmann::json stats_report(const std::string& model_id,
                                   std::span<const LayerStats> per_layer,
                                   const GlobalInitParams& global) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& s : per_layer) {
        layers.push_back(
            {{"name", s.layer_name}, {"mu", s.mu}, {"sigma", s.sigma}, {"elements", s.element_count}});
    }
    return {{"model_id", model_id},
            {"per_layer", std::move(layers)},
            {"mu_bar", global.mu_bar},
            {"sigma_bar", global.sigma_bar}};
}

}  // namespace inilora

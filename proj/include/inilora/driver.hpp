#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "inilora/approx.hpp"
#include "inilora/cache.hpp"
#include "inilora/manifest.hpp"
#include "inilora/random.hpp"
#include "inilora/stats.hpp"

namespace inilora {

inline constexpr std::size_t kDefaultConcurrency = 64;

/// Seed for one layer's draw, independent of scheduling order.
inline std::uint64_t layer_seed(std::uint64_t base, const ManifestLayer& layer) {
    return rng::derive_seed(base, layer.name, to_string(layer.role));
}

struct LayerFailure {
    std::string layer_name;
    std::string message;
};

struct ModelApproxReport {
    std::vector<CacheEntry> entries;  // successful target layers, manifest order
    std::vector<LayerFailure> failures;
    std::size_t cache_hits = 0;
    std::size_t computed = 0;
    std::int64_t steps_executed = 0;
    double init_sigma = 0.0;

    bool ok() const noexcept { return failures.empty(); }
};

using ProgressFn = std::function<void(const std::string&)>;

/// Approximates every target layer of a manifest through the cache, with at
/// most `concurrency` layers in flight. Results do not depend on concurrency.
///
/// Shape problems (rank too large) raise ValidationError before any work
/// starts; per-layer I/O or divergence failures are collected in the report.
inline ModelApproxReport approximate_model(const Manifest& manifest,
                                           const std::vector<std::string>& targets,
                                           const ApproxConfig& cfg, std::size_t concurrency,
                                           ApproxCache& cache, const ProgressFn& progress = {}) {
    cfg.validate();
    if (concurrency < 1) {
        throw ValidationError("concurrency must be >= 1");
    }
    const auto layers = select_layers(manifest, targets);
    if (layers.empty()) {
        throw ValidationError("no manifest layers match the requested targets");
    }
    for (const auto& l : layers) {
        cfg.validate_for(l.rows, l.cols);
    }

    ModelApproxReport report;
    std::vector<std::optional<std::string>> early_failure(layers.size());

    ApproxConfig resolved = cfg;
    if (!resolved.init_sigma) {
        std::vector<LayerStats> stats;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            try {
                stats.push_back(layer_stats(manifest.load_layer(layers[i]).matrix, layers[i].name));
            } catch (const Error& e) {
                early_failure[i] = e.what();
            }
        }
        if (stats.empty()) {
            for (std::size_t i = 0; i < layers.size(); ++i) {
                report.failures.push_back({layers[i].name, *early_failure[i]});
            }
            return report;
        }
        resolved.init_sigma = global_init(stats).sigma_bar;
    }
    report.init_sigma = *resolved.init_sigma;

    struct Outcome {
        std::optional<CacheEntry> entry;
        std::optional<std::string> error;
        bool hit = false;
        std::int64_t steps = 0;
    };
    std::vector<Outcome> outcomes(layers.size());

    auto run_layer = [&](std::size_t i) {
        const auto& layer = layers[i];
        Outcome& out = outcomes[i];
        if (early_failure[i]) {
            out.error = early_failure[i];
            return;
        }
        try {
            const auto w0 = manifest.load_layer(layer);
            ApproxConfig layer_cfg = resolved;
            layer_cfg.seed = layer_seed(cfg.seed, layer);
            const auto key = CacheKey::from(manifest.model_id, layer, resolved, layer_cfg.seed,
                                            content_hash(w0.matrix, w0.dtype));
            if (auto hit = cache.lookup(key, resolved.checkpoint_steps)) {
                out.entry = std::move(hit);
                out.hit = true;
                if (progress) progress(layer.name + ": cache hit");
                return;
            }
            auto result = approximate(w0.matrix, layer_cfg, w0.dtype);
            out.steps = result.steps_executed;
            out.entry = cache.store(key, result);
            if (progress) {
                progress(layer.name + ": approximated, final mse " +
                         format_double(result.final_mse));
            }
        } catch (const std::exception& e) {
            out.error = e.what();
            if (progress) progress(layer.name + ": failed: " + e.what());
        }
    };

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < layers.size(); i = next.fetch_add(1)) {
            run_layer(i);
        }
    };
    const std::size_t n_workers = std::min(concurrency, layers.size());
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(n_workers);
        for (std::size_t w = 0; w < n_workers; ++w) {
            pool.emplace_back(worker);
        }
    }

    for (std::size_t i = 0; i < layers.size(); ++i) {
        auto& o = outcomes[i];
        if (o.error) {
            report.failures.push_back({layers[i].name, *o.error});
            continue;
        }
        report.cache_hits += o.hit ? 1 : 0;
        report.computed += o.hit ? 0 : 1;
        report.steps_executed += o.steps;
        report.entries.push_back(std::move(*o.entry));
    }
    return report;
}

}  // namespace inilora

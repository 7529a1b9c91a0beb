#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "json.hpp"

#include "inilora/approx.hpp"
#include "inilora/error.hpp"
#include "inilora/matrix.hpp"
#include "inilora/random.hpp"
#include "inilora/wtn1.hpp"

namespace inilora {

enum class StrategyKind {
    lora,
    inilora,
    inilora_alpha,
    inilora_beta_kn,
    inilora_beta_ku,
    inilora_iter0,
};

/// How the trainable factors of an adapter start out.
///
/// `sigma` is the normal std for inilora-alpha (default 0.5) and inilora-iter0
/// (the global sigma_bar); other kinds ignore it.
struct InitStrategy {
    StrategyKind kind = StrategyKind::lora;
    double sigma = 0.0;

    static InitStrategy lora() { return {StrategyKind::lora, 0.0}; }
    static InitStrategy inilora() { return {StrategyKind::inilora, 0.0}; }
    static InitStrategy alpha(double sigma = 0.5) { return {StrategyKind::inilora_alpha, sigma}; }
    static InitStrategy beta_kn() { return {StrategyKind::inilora_beta_kn, 0.0}; }
    static InitStrategy beta_ku() { return {StrategyKind::inilora_beta_ku, 0.0}; }
    static InitStrategy iter0(double sigma_bar) { return {StrategyKind::inilora_iter0, sigma_bar}; }

    bool needs_sigma() const noexcept {
        return kind == StrategyKind::inilora_alpha || kind == StrategyKind::inilora_iter0;
    }

    std::string name() const {
        switch (kind) {
            case StrategyKind::lora: return "lora";
            case StrategyKind::inilora: return "inilora";
            case StrategyKind::inilora_alpha: return "inilora-alpha";
            case StrategyKind::inilora_beta_kn: return "inilora-beta-kn";
            case StrategyKind::inilora_beta_ku: return "inilora-beta-ku";
            case StrategyKind::inilora_iter0: return "inilora-iter0";
        }
        return "unknown";
    }

    friend bool operator==(const InitStrategy&, const InitStrategy&) = default;
};

/// Parses a strategy name. inilora-alpha defaults to sigma 0.5; inilora-iter0
/// takes `sigma_bar`.
inline InitStrategy parse_strategy(std::string_view name, double sigma_bar = 0.0) {
    if (name == "lora") return InitStrategy::lora();
    if (name == "inilora") return InitStrategy::inilora();
    if (name == "inilora-alpha") return InitStrategy::alpha();
    if (name == "inilora-beta-kn") return InitStrategy::beta_kn();
    if (name == "inilora-beta-ku") return InitStrategy::beta_ku();
    if (name == "inilora-iter0") return InitStrategy::iter0(sigma_bar);
    throw ValidationError("unknown strategy '" + std::string(name) + "'");
}

inline const std::vector<std::string>& all_strategy_names() {
    static const std::vector<std::string> names{"lora",           "inilora",
                                                "inilora-alpha",  "inilora-beta-kn",
                                                "inilora-beta-ku", "inilora-iter0"};
    return names;
}

/// Pre-computed factors for the inilora strategy.
struct ApproxFactors {
    Matrix a;
    Matrix b;
    Matrix residual;
    std::string w0_hash;

    static ApproxFactors from(const ApproxResult& r) { return {r.a, r.b, r.residual, r.w0_hash}; }

    /// Factors captured mid-approximation; the residual is recomputed from w0.
    static ApproxFactors from_checkpoint(const Matrix& w0, const ApproxCheckpoint& c,
                                         Dtype w0_dtype = Dtype::f64) {
        return {c.a, c.b, residual_of(w0, c.a, c.b), content_hash(w0, w0_dtype)};
    }
};

struct AdapterOptions {
    double scaling = 1.0;
    /// Fold B A into the frozen matrix so the layer starts at w0. When false,
    /// the alpha/beta/iter0 strategies keep frozen = w0 and start at w0 + B A.
    bool preserve_output = true;
    Dtype w0_dtype = Dtype::f64;
};

/// Linear map y = x (frozen + scaling * b a)^T with trainable a, b.
class AdaptedLinear {
public:
    AdaptedLinear(Matrix frozen, Matrix a, Matrix b, double scaling, InitStrategy strategy,
                  std::uint64_t seed, std::string w0_hash)
        : frozen_(std::move(frozen)),
          a_(std::move(a)),
          b_(std::move(b)),
          scaling_(scaling),
          strategy_(strategy),
          seed_(seed),
          w0_hash_(std::move(w0_hash)) {
        if (b_.cols() != a_.rows() || b_.rows() != frozen_.rows() || a_.cols() != frozen_.cols()) {
            throw ShapeError("adapter shapes inconsistent: frozen " + frozen_.shape_string() +
                             ", a " + a_.shape_string() + ", b " + b_.shape_string());
        }
        if (!(scaling_ > 0.0) || !std::isfinite(scaling_)) {
            throw ValidationError("adapter scaling must be positive");
        }
    }

    const Matrix& frozen() const noexcept { return frozen_; }
    const Matrix& a() const noexcept { return a_; }
    const Matrix& b() const noexcept { return b_; }
    Matrix& a() noexcept { return a_; }
    Matrix& b() noexcept { return b_; }

    double scaling() const noexcept { return scaling_; }
    const InitStrategy& strategy() const noexcept { return strategy_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::string& w0_hash() const noexcept { return w0_hash_; }

    std::size_t out_features() const noexcept { return frozen_.rows(); }
    std::size_t in_features() const noexcept { return frozen_.cols(); }
    std::size_t rank() const noexcept { return a_.rows(); }
    std::size_t trainable_parameters() const noexcept { return a_.size() + b_.size(); }

private:
    Matrix frozen_;
    Matrix a_;
    Matrix b_;
    double scaling_;
    InitStrategy strategy_;
    std::uint64_t seed_;
    std::string w0_hash_;
};

inline AdaptedLinear init_adapter(const Matrix& w0, const InitStrategy& strategy, std::size_t rank,
                                  std::uint64_t seed,
                                  const std::optional<ApproxFactors>& approx = std::nullopt,
                                  const AdapterOptions& opts = {}) {
    const std::size_t d = w0.rows(), k = w0.cols();
    if (rank < 1 || rank >= std::min(d, k)) {
        throw ValidationError("rank must be < min(d,k): rank " + std::to_string(rank) + " for " +
                              w0.shape_string());
    }
    const bool is_inilora = strategy.kind == StrategyKind::inilora;
    if (is_inilora != approx.has_value()) {
        throw ValidationError(is_inilora ? "inilora requires approximation factors"
                                         : strategy.name() + " does not take approximation factors");
    }
    if (strategy.needs_sigma() && !(strategy.sigma > 0.0 && std::isfinite(strategy.sigma))) {
        throw ValidationError(strategy.name() + " requires a positive sigma");
    }
    const std::string w0_hash = content_hash(w0, opts.w0_dtype);
    const auto seed_a = rng::derive_seed(seed, "A");
    const auto seed_b = rng::derive_seed(seed, "B");

    auto with_residual = [&](Matrix a, Matrix b) {
        Matrix frozen = opts.preserve_output ? residual_of(w0, a, b) : w0;
        return AdaptedLinear(std::move(frozen), std::move(a), std::move(b), opts.scaling, strategy,
                             seed, w0_hash);
    };

    switch (strategy.kind) {
        case StrategyKind::lora:
            return AdaptedLinear(w0, sample(DistributionSpec::kaiming_uniform(k), rank, k, seed_a),
                                 Matrix(d, rank), opts.scaling, strategy, seed, w0_hash);
        case StrategyKind::inilora: {
            const auto& f = *approx;
            if (f.w0_hash != w0_hash) {
                throw ValidationError("approximation was computed for a different weight matrix "
                                      "(stale cache entry?)");
            }
            if (f.a.rows() != rank || f.a.cols() != k || f.b.rows() != d || f.b.cols() != rank ||
                !f.residual.same_shape(w0)) {
                throw ShapeError("approximation factors do not match w0 " + w0.shape_string() +
                                 " at rank " + std::to_string(rank));
            }
            return AdaptedLinear(f.residual, f.a, f.b, opts.scaling, strategy, seed, w0_hash);
        }
        case StrategyKind::inilora_alpha:
        case StrategyKind::inilora_iter0: {
            auto [a, b] = draw_initial_factors(d, k, rank, 0.0, strategy.sigma, seed);
            return with_residual(std::move(a), std::move(b));
        }
        case StrategyKind::inilora_beta_kn:
            return with_residual(sample(DistributionSpec::kaiming_normal(k), rank, k, seed_a),
                                 sample(DistributionSpec::kaiming_normal(rank), d, rank, seed_b));
        case StrategyKind::inilora_beta_ku:
            return with_residual(sample(DistributionSpec::kaiming_uniform(k), rank, k, seed_a),
                                 sample(DistributionSpec::kaiming_uniform(rank), d, rank, seed_b));
    }
    throw ValidationError("unhandled strategy");
}

/// frozen + scaling * b a
inline Matrix merge(const AdaptedLinear& layer) {
    return add(layer.frozen(), scaled(matmul(layer.b(), layer.a()), layer.scaling()));
}

/// Plain linear layer: x w^T.
inline Matrix linear_forward(const Matrix& w, const Matrix& x) {
    if (x.cols() != w.cols()) {
        throw ShapeError("linear: input " + x.shape_string() + " incompatible with weight " +
                         w.shape_string());
    }
    return matmul_nt(x, w);
}

/// x frozen^T + scaling (x a^T) b^T, without forming the effective weight.
inline Matrix adapter_forward(const AdaptedLinear& layer, const Matrix& x) {
    if (x.cols() != layer.in_features()) {
        throw ShapeError("adapter_forward: input " + x.shape_string() + " needs " +
                         std::to_string(layer.in_features()) + " columns");
    }
    Matrix y = matmul_nt(x, layer.frozen());
    const Matrix low = matmul_nt(matmul_nt(x, layer.a()), layer.b());
    auto yv = y.values();
    auto lv = low.values();
    for (std::size_t i = 0; i < yv.size(); ++i) {
        yv[i] += layer.scaling() * lv[i];
    }
    y.require_finite("adapter_forward");
    return y;
}

/// Same output via the merged weight.
inline Matrix adapter_forward_materialized(const AdaptedLinear& layer, const Matrix& x) {
    return linear_forward(merge(layer), x);
}

struct AdapterGrads {
    Matrix grad_a;  // r x k
    Matrix grad_b;  // d x r
    Matrix grad_x;  // n x k
};

/// Backward pass for y = x W_eff^T given upstream = dL/dy. The frozen matrix
/// gets no gradient.
inline AdapterGrads adapter_grads(const AdaptedLinear& layer, const Matrix& x,
                                  const Matrix& upstream) {
    if (x.cols() != layer.in_features() || upstream.cols() != layer.out_features() ||
        upstream.rows() != x.rows()) {
        throw ShapeError("adapter_grads: x " + x.shape_string() + ", upstream " +
                         upstream.shape_string() + " vs layer " +
                         layer.frozen().shape_string());
    }
    const double s = layer.scaling();
    const Matrix gb = matmul(upstream, layer.b());   // n x r
    const Matrix xa = matmul_nt(x, layer.a());       // n x r
    Matrix grad_a = scaled(matmul_tn(gb, x), s);      // r x k
    Matrix grad_b = scaled(matmul_tn(upstream, xa), s);  // d x r
    Matrix grad_x = add(matmul(upstream, layer.frozen()), scaled(matmul(gb, layer.a()), s));
    return {std::move(grad_a), std::move(grad_b), std::move(grad_x)};
}

// ---------------------------------------------------------------------------
// Checkpoint directory: a.wtn1, b.wtn1, frozen.wtn1, meta.json.

inline void save_adapter(const std::filesystem::path& dir, const AdaptedLinear& layer,
                         bool preserve_output = true) {
    std::filesystem::create_directories(dir);
    wtn1::save(dir / "a.wtn1", layer.a());
    wtn1::save(dir / "b.wtn1", layer.b());
    wtn1::save(dir / "frozen.wtn1", layer.frozen());
    nlohmann::json meta = {{"strategy", layer.strategy().name()},
                           {"rank", layer.rank()},
                           {"scaling", layer.scaling()},
                           {"seed", layer.seed()},
                           {"w0_hash", layer.w0_hash()},
                           {"preserve_output", preserve_output}};
    if (layer.strategy().needs_sigma()) {
        meta["sigma"] = layer.strategy().sigma;
    }
    std::ofstream out(dir / "meta.json");
    out << meta.dump(2) << '\n';
    if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
}

inline AdaptedLinear load_adapter(const std::filesystem::path& dir) {
    std::ifstream in(dir / "meta.json");
    if (!in) throw IoError("missing " + (dir / "meta.json").string());
    nlohmann::json meta;
    try {
        in >> meta;
        auto strategy = parse_strategy(meta.at("strategy").get<std::string>(),
                                       meta.value("sigma", 0.0));
        if (strategy.kind == StrategyKind::inilora_alpha) {
            strategy.sigma = meta.value("sigma", 0.5);
        }
        return AdaptedLinear(wtn1::load(dir / "frozen.wtn1").matrix,
                             wtn1::load(dir / "a.wtn1").matrix, wtn1::load(dir / "b.wtn1").matrix,
                             meta.at("scaling").get<double>(), strategy,
                             meta.at("seed").get<std::uint64_t>(),
                             meta.at("w0_hash").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError("adapter meta.json: " + std::string(e.what()));
    }
}

}  // namespace inilora

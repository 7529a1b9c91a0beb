#pragma once

// A small stack of dense layers standing in for a transformer: an input
// projection, `blocks` query/value pairs, and an output head, with a fixed
// nonlinearity between layers. Base weights are drawn once from the seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "inilora/error.hpp"
#include "inilora/manifest.hpp"
#include "inilora/matrix.hpp"
#include "inilora/random.hpp"
#include "inilora/stats.hpp"
#include "inilora/wtn1.hpp"

namespace inilora::harness {

enum class Nonlinearity { tanh, relu };

inline std::string to_string(Nonlinearity n) { return n == Nonlinearity::tanh ? "tanh" : "relu"; }

inline Nonlinearity parse_nonlinearity(std::string_view s) {
    if (s == "tanh") return Nonlinearity::tanh;
    if (s == "relu") return Nonlinearity::relu;
    throw ValidationError("unknown nonlinearity '" + std::string(s) + "'");
}

struct ToyLayerSpec {
    std::string name;
    LayerRole role = LayerRole::other;
    std::size_t rows = 0;  // output features
    std::size_t cols = 0;  // input features
};

struct ToyModelSpec {
    std::size_t input_dim = 64;
    std::size_t hidden_dim = 64;
    std::size_t output_dim = 8;
    std::size_t blocks = 1;
    std::vector<LayerRole> adapted_roles{LayerRole::query, LayerRole::value};
    Nonlinearity nonlinearity = Nonlinearity::tanh;
    std::uint64_t base_seed = 0;
    std::string model_id = "toy";

    void validate() const {
        if (input_dim < 2 || hidden_dim < 2 || output_dim < 1 || blocks < 1) {
            throw ValidationError("toy model sizes must be >= 2 (output >= 1, blocks >= 1)");
        }
        if (adapted_roles.empty()) {
            throw ValidationError("toy model needs at least one adapted role");
        }
        for (auto r : adapted_roles) {
            if (r == LayerRole::other) {
                throw ValidationError("adapted roles must be query and/or value");
            }
        }
    }

    /// Layers in forward order.
    std::vector<ToyLayerSpec> layers() const {
        std::vector<ToyLayerSpec> out;
        out.push_back({"embed", LayerRole::other, hidden_dim, input_dim});
        for (std::size_t b = 0; b < blocks; ++b) {
            const std::string prefix = "block" + std::to_string(b) + ".";
            out.push_back({prefix + "query", LayerRole::query, hidden_dim, hidden_dim});
            out.push_back({prefix + "value", LayerRole::value, hidden_dim, hidden_dim});
        }
        out.push_back({"head", LayerRole::other, output_dim, hidden_dim});
        return out;
    }

    bool is_adapted(LayerRole role) const {
        return std::find(adapted_roles.begin(), adapted_roles.end(), role) != adapted_roles.end();
    }

    nlohmann::json to_json() const {
        nlohmann::json roles = nlohmann::json::array();
        for (auto r : adapted_roles) roles.push_back(inilora::to_string(r));
        return {{"model_id", model_id},
                {"input_dim", input_dim},
                {"hidden_dim", hidden_dim},
                {"output_dim", output_dim},
                {"blocks", blocks},
                {"adapted_roles", roles},
                {"nonlinearity", to_string(nonlinearity)},
                {"base_seed", base_seed}};
    }
};

struct ToyLayer {
    ToyLayerSpec spec;
    Matrix weight;
    bool adapted = false;
};

struct ToyModel {
    ToyModelSpec spec;
    std::vector<ToyLayer> layers;

    std::vector<std::size_t> adapted_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            if (layers[i].adapted) out.push_back(i);
        }
        return out;
    }

    /// Unweighted mean of the adapted layers' stds.
    GlobalInitParams adapted_stats() const {
        std::vector<LayerStats> stats;
        for (auto i : adapted_indices()) {
            stats.push_back(layer_stats(layers[i].weight, layers[i].spec.name));
        }
        return global_init(stats);
    }
};

/// Base weights ~ N(0, 1/fan_in), one sub-seed per layer name.
inline ToyModel make_toy_model(const ToyModelSpec& spec) {
    spec.validate();
    ToyModel model{spec, {}};
    for (auto& l : spec.layers()) {
        const double std = 1.0 / std::sqrt(static_cast<double>(l.cols));
        Matrix w = sample(DistributionSpec::normal(0.0, std), l.rows, l.cols,
                          rng::derive_seed(spec.base_seed, "base", l.name));
        const bool adapted = spec.is_adapted(l.role);
        model.layers.push_back({std::move(l), std::move(w), adapted});
    }
    return model;
}

inline void apply_activation(Nonlinearity n, Matrix& z) {
    for (double& v : z.values()) {
        v = n == Nonlinearity::tanh ? std::tanh(v) : std::max(v, 0.0);
    }
}

/// dz = dh * f'(z), written in terms of the activation output h.
inline void activation_backward(Nonlinearity n, const Matrix& h, Matrix& grad) {
    auto hv = h.values();
    auto gv = grad.values();
    for (std::size_t i = 0; i < gv.size(); ++i) {
        gv[i] *= n == Nonlinearity::tanh ? 1.0 - hv[i] * hv[i] : (hv[i] > 0.0 ? 1.0 : 0.0);
    }
}

/// Plain forward pass with an explicit weight per layer.
inline Matrix forward_with(const ToyModel& model, const std::vector<const Matrix*>& weights,
                           const Matrix& x) {
    Matrix h = x;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        h = matmul_nt(h, *weights[i]);
        if (i + 1 < weights.size()) apply_activation(model.spec.nonlinearity, h);
    }
    return h;
}

inline Matrix base_forward(const ToyModel& model, const Matrix& x) {
    std::vector<const Matrix*> w;
    for (const auto& l : model.layers) w.push_back(&l.weight);
    return forward_with(model, w, x);
}

/// Writes every layer as WTN1 plus a manifest; returns the manifest path.
inline std::filesystem::path write_toy_manifest(const ToyModel& model,
                                                const std::filesystem::path& dir,
                                                Dtype dtype = Dtype::f64) {
    std::filesystem::create_directories(dir);
    Manifest m;
    m.model_id = model.spec.model_id;
    m.base_dir = dir;
    for (const auto& l : model.layers) {
        const std::string file = l.spec.name + ".wtn1";
        wtn1::save(dir / file, l.weight, dtype);
        m.layers.push_back({l.spec.name, l.spec.role, file, l.spec.rows, l.spec.cols});
    }
    const auto path = dir / "manifest.json";
    save_manifest(path, m);
    return path;
}

}  // namespace inilora::harness

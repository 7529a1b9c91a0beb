#pragma once

// Model manifest: {model_id, layers: [{name, role, file, rows, cols}]}.
// Relative file paths resolve against the manifest's directory.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "inilora/error.hpp"
#include "inilora/wtn1.hpp"

namespace inilora {

enum class LayerRole { query, value, other };

inline std::string to_string(LayerRole role) {
    switch (role) {
        case LayerRole::query: return "query";
        case LayerRole::value: return "value";
        case LayerRole::other: return "other";
    }
    return "other";
}

inline LayerRole parse_role(std::string_view s) {
    if (s == "query") return LayerRole::query;
    if (s == "value") return LayerRole::value;
    if (s == "other") return LayerRole::other;
    throw ValidationError("unknown layer role '" + std::string(s) + "'");
}

struct ManifestLayer {
    std::string name;
    LayerRole role = LayerRole::other;
    std::string file;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

struct Manifest {
    std::string model_id;
    std::vector<ManifestLayer> layers;
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const ManifestLayer& layer) const {
        std::filesystem::path p(layer.file);
        return p.is_absolute() ? p : base_dir / p;
    }

    /// Loads a layer and checks it against the declared shape.
    wtn1::Decoded load_layer(const ManifestLayer& layer) const {
        auto decoded = wtn1::load(resolve(layer));
        if (decoded.matrix.rows() != layer.rows || decoded.matrix.cols() != layer.cols) {
            throw IoError("layer " + layer.name + ": file shape " +
                          decoded.matrix.shape_string() + " does not match manifest " +
                          std::to_string(layer.rows) + "x" + std::to_string(layer.cols));
        }
        return decoded;
    }

    const ManifestLayer& find(std::string_view name) const {
        for (const auto& l : layers) {
            if (l.name == name) return l;
        }
        throw ValidationError("manifest has no layer '" + std::string(name) + "'");
    }
};

inline nlohmann::json to_json(const Manifest& m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : m.layers) {
        layers.push_back({{"name", l.name},
                          {"role", to_string(l.role)},
                          {"file", l.file},
                          {"rows", l.rows},
                          {"cols", l.cols}});
    }
    return {{"model_id", m.model_id}, {"layers", std::move(layers)}};
}

inline Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string());
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + path.string() + ": " + e.what());
    }
    Manifest m;
    m.base_dir = path.parent_path();
    try {
        m.model_id = j.at("model_id").get<std::string>();
        for (const auto& l : j.at("layers")) {
            ManifestLayer layer;
            layer.name = l.at("name").get<std::string>();
            layer.role = parse_role(l.value("role", std::string("other")));
            layer.file = l.at("file").get<std::string>();
            layer.rows = l.at("rows").get<std::size_t>();
            layer.cols = l.at("cols").get<std::size_t>();
            if (layer.rows == 0 || layer.cols == 0) {
                throw ValidationError("layer " + layer.name + " has a zero dimension");
            }
            m.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest " + path.string() + ": " + e.what());
    }
    if (m.model_id.empty()) {
        throw ValidationError("manifest model_id must be non-empty");
    }
    return m;
}

inline void save_manifest(const std::filesystem::path& path, const Manifest& m) {
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << to_json(m).dump(2) << '\n';
}

/// Layers whose role or name appears in `targets`; all layers when empty.
inline std::vector<ManifestLayer> select_layers(const Manifest& m,
                                                const std::vector<std::string>& targets) {
    std::vector<ManifestLayer> out;
    for (const auto& l : m.layers) {
        bool keep = targets.empty();
        for (const auto& t : targets) {
            if (t == l.name || t == to_string(l.role)) {
                keep = true;
            }
        }
        if (keep) out.push_back(l);
    }
    return out;
}

}  // namespace inilora

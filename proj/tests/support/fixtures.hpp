#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "inilora/manifest.hpp"
#include "inilora/random.hpp"
#include "inilora/wtn1.hpp"

namespace inilora::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::string pattern = (std::filesystem::temp_directory_path() / (tag + "-XXXXXX")).string();
        if (mkdtemp(pattern.data()) == nullptr) {
            throw IoError("mkdtemp failed for " + pattern);
        }
        path_ = pattern;
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }

    const std::filesystem::path& path() const noexcept { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// Writes `n_layers` Gaussian layers (alternating query/value roles) and a
/// manifest describing them; returns the manifest path.
inline std::filesystem::path write_gaussian_model(const std::filesystem::path& dir,
                                                  const std::string& model_id,
                                                  std::size_t n_layers, std::size_t rows,
                                                  std::size_t cols, std::uint64_t seed,
                                                  double std = 0.02) {
    std::filesystem::create_directories(dir);
    Manifest m;
    m.model_id = model_id;
    m.base_dir = dir;
    for (std::size_t i = 0; i < n_layers; ++i) {
        const LayerRole role = i % 2 == 0 ? LayerRole::query : LayerRole::value;
        const std::string name = "layer" + std::to_string(i / 2) + "." + to_string(role);
        const std::string file = name + ".wtn1";
        wtn1::save(dir / file, sample(DistributionSpec::normal(0.0, std), rows, cols,
                                      rng::derive_seed(seed, name)));
        m.layers.push_back({name, role, file, rows, cols});
    }
    const auto path = dir / "manifest.json";
    save_manifest(path, m);
    return path;
}

}  // namespace inilora::testing

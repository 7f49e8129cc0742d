#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "dfzsl/diffmath.hpp"
#include "dfzsl/prototypes.hpp"
#include "dfzsl/rng.hpp"

namespace testing {

// Fresh empty directory under the working directory.
inline std::filesystem::path scratch(const std::string& name) {
    const auto p = std::filesystem::current_path() / "scratch" / name;
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline dfzsl::dm::Tensor random_tensor(std::size_t r, std::size_t c, dfzsl::Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    dfzsl::dm::Tensor t(r, c);
    for (double& v : t.values) v = n(rng);
    return t;
}

inline dfzsl::ClassPrototypes random_prototypes(std::size_t c, std::size_t d, dfzsl::Rng& rng) {
    dfzsl::ClassPrototypes p;
    p.directions = random_tensor(c, d, rng);
    dfzsl::dm::normalize_rows(p.directions);
    for (std::size_t i = 0; i < c; ++i) p.class_names.push_back("k" + std::to_string(i));
    return p;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace testing

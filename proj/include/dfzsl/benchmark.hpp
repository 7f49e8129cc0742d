#pragma once

// Desk-scale synthetic dataset: class means on the sphere, vMF features
// around them, noisy "text features", and a protected classifier built from
// the base-class training means.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfzsl/embedding_store.hpp"
#include "dfzsl/flpt.hpp"
#include "dfzsl/prototypes.hpp"
#include "dfzsl/rng.hpp"

namespace dfzsl {

class BenchmarkError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BenchmarkSpec {
    std::size_t dim = 32;
    std::size_t base_classes = 10;
    std::size_t new_classes = 5;
    double kappa = 50.0;
    std::size_t samples_per_class = 200;
    double noise_deg = 10.0;
    std::uint64_t seed = 7;
    double min_angle_deg = 25.0;

    void validate() const;
};

struct Benchmark {
    BenchmarkSpec spec;
    ClassPrototypes means;  // every class, base first
    ClassPrototypes text;   // means rotated by noise_deg
    EmbeddingSet train;
    EmbeddingSet test;
    SplitSpec split;
    ClassPrototypes server_weights;  // normalized base-class training means, split order
    TokenTable tokens;
    double min_pairwise_deg = 0.0;
    // Smallest cosine between an encoded class token and its text feature.
    double token_fit = 0.0;
};

struct BenchmarkFiles {
    std::filesystem::path train_features;
    std::filesystem::path test_features;
    std::filesystem::path text_features;
    std::filesystem::path token_table;
    std::filesystem::path split;
    std::filesystem::path server_weights;
    std::filesystem::path class_means;
    std::filesystem::path description;
    std::filesystem::path pipeline_config;
};

// C unit vectors in R^d with every pairwise angle >= min_angle_rad, by
// rejection. Throws BenchmarkError when the packing is infeasible.
ClassPrototypes draw_separated_means(std::size_t count, std::size_t dim, double min_angle_rad, Rng& rng);

// cos(angle) * mu + sin(angle) * v for a random unit v orthogonal to mu.
std::vector<double> rotate_away(std::span<const double> mu, double angle_rad, Rng& rng);

// Class tokens whose encoding behind `prefix` reproduces each text feature.
TokenTable invert_text_encoder(const ClassPrototypes& text, const std::array<std::vector<double>, kNumPrompts>& prefix,
                               std::uint64_t encoder_seed, std::uint64_t seed, double* min_cosine = nullptr);

Benchmark generate_benchmark(const BenchmarkSpec& spec);
BenchmarkFiles write_benchmark(const Benchmark& bench, const std::filesystem::path& dir);
BenchmarkFiles make_benchmark(const BenchmarkSpec& spec, const std::filesystem::path& dir);

}  // namespace dfzsl

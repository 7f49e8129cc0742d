#pragma once

// Stage 3a: conditional generative model over (enhanced) base features,
// conditioned on text features, used to synthesize features for new classes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfzsl/diffmath.hpp"
#include "dfzsl/embedding_store.hpp"
#include "dfzsl/prototypes.hpp"

namespace dfzsl {

class GeneratorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class GeneratorBackend : std::uint32_t { cvae = 0, cgan = 1 };

const char* to_string(GeneratorBackend backend);
GeneratorBackend parse_backend(const std::string& s);

struct GenTrainConfig {
    GeneratorBackend backend = GeneratorBackend::cvae;
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double kl_weight = 0.1;
    std::size_t latent_dim = 32;
    std::uint64_t seed = 0;

    void validate() const;
};

// Parameters of the decoder/generator G(z, t) and, for the cvae backend, the
// recognition network q(z | x, t). The cgan backend stores its critic under
// "critic_*" names. The generator output is t + MLP([z, t]).
struct GeneratorState {
    GeneratorBackend backend = GeneratorBackend::cvae;
    std::size_t latent_dim = 0;
    std::size_t conditioning_dim = 0;
    std::size_t feature_dim = 0;
    dm::ParamMap params;
};

struct GeneratorLog {
    double initial_loss = 0.0;
    std::vector<double> epoch_losses;
    // Smallest per-batch KL term seen (cvae only).
    double min_kl = 0.0;
};

GeneratorState init_generator(std::size_t feature_dim, std::size_t conditioning_dim, const GenTrainConfig& config);

// Decoder output before normalization, rows of z and t paired.
dm::Var decode(dm::Graph& g, const dm::VarMap& params, dm::Var z, dm::Var t);

// Encoder heads (mean, log-variance) of q(z | x, t).
struct Posterior {
    dm::Var mean;
    dm::Var log_var;
};
Posterior encode(dm::Graph& g, const dm::VarMap& params, dm::Var x, dm::Var t);

// Reconstruction + kl_weight * KL, with z = mean + exp(log_var / 2) * noise.
// Reconstruction is the squared L2 distance between x and the normalized
// decoder output, summed over features and averaged over the batch.
struct CvaeTerms {
    dm::Var loss;
    dm::Var reconstruction;
    dm::Var kl;
};
CvaeTerms cvae_loss(dm::Graph& g, const dm::VarMap& params, const dm::Tensor& x, const dm::Tensor& t,
                    const dm::Tensor& noise, double kl_weight);

GeneratorState train_generator(const EmbeddingSet& enhanced_base, const ClassPrototypes& base_text,
                               const GenTrainConfig& config, GeneratorLog* log = nullptr);

// per_class decodes of z ~ N(0, I) for every class, L2-normalized, labelled by
// class in the given order.
EmbeddingSet synthesize(const GeneratorState& state, const ClassPrototypes& class_text, std::size_t per_class,
                        std::uint64_t seed);

// Same, but with caller-supplied latent rows (per_class x latent_dim) shared by every class.
EmbeddingSet synthesize_with_noise(const GeneratorState& state, const ClassPrototypes& class_text,
                                   const dm::Tensor& noise);

void write_generator(const GeneratorState& state, const std::filesystem::path& path);
GeneratorState read_generator(const std::filesystem::path& path);

}  // namespace dfzsl

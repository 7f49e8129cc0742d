#pragma once

// Stage 1: virtual base-class features drawn from von Mises-Fisher
// distributions around class prototypes, with prototype distillation against a
// prediction-only server when the classifier weights are hidden.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "dfzsl/embedding_store.hpp"
#include "dfzsl/prototypes.hpp"
#include "dfzsl/rng.hpp"
#include "dfzsl/score_oracle.hpp"

namespace dfzsl {

class RecoveryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct VmfParams {
    ClassPrototypes prototypes;
    double kappa_text = 0.0;
    double lambda = 1.0;

    double effective_kappa() const noexcept { return lambda * kappa_text; }
};

enum class RecoveryMode { white_box, black_box };

struct RecoveryConfig {
    std::size_t samples_per_class = 300;
    std::size_t epochs = 100;
    double learning_rate = 3e-4;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    RecoveryMode mode = RecoveryMode::white_box;
    double lambda = 1.0;
    // When false the black-box loop reuses the pool drawn from the initial prototypes.
    bool resample_each_epoch = true;

    void validate() const;
};

// Smallest pairwise angle below which two prototypes count as coincident.
inline constexpr double kCoincidentAngle = 1e-6;

// max over class pairs of (arccos(mu_a . mu_b) / 6)^-2, i.e. the concentration
// whose three-sigma arc from each of the closest pair meets in the middle.
double derive_kappa(const ClassPrototypes& prototypes);

// One draw from vMF(mu, kappa) on the unit sphere in R^d (d = mu.size() >= 2).
// mu must be unit norm.
void sample_vmf_unit(std::span<const double> mu, double kappa, Rng& rng, std::span<double> out);

// n draws for one class, labelled with class_index. Each class uses its own
// substream of `seed`.
EmbeddingSet sample_vmf(const VmfParams& params, std::size_t class_index, std::size_t n, std::uint64_t seed);

// n draws for every class, in class order.
EmbeddingSet sample_vmf_all(const VmfParams& params, std::size_t per_class, std::uint64_t seed);

struct WhiteBoxRecovery {
    EmbeddingSet virtual_base;
    VmfParams params;
};

WhiteBoxRecovery recover_whitebox(const ClassPrototypes& weights, const RecoveryConfig& config);

struct BlackBoxRecovery {
    EmbeddingSet virtual_base;
    ClassPrototypes learned;
    double kappa_text = 0.0;
    // Loss on the first minibatch before any update, and mean loss of the last epoch.
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> epoch_losses;
    std::size_t server_queries = 0;
    bool converged = false;
};

// Mean over samples and classes of (score - cos(x, M))^2.
double prototype_loss(const dm::Tensor& features, const dm::Tensor& scores, const dm::Tensor& prototypes);

// Learns M starting from the text prototypes. Server score columns follow the
// order of text_protos.
BlackBoxRecovery recover_blackbox(const ClassPrototypes& text_protos, ScoreOracle& server,
                                  const RecoveryConfig& config);

}  // namespace dfzsl

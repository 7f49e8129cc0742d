#pragma once

// Stage 2: feature-language prompt tuning. Four learnable prompt vectors feed
// both a frozen text encoder (as the prefix before the class token) and a
// small mapping network whose averaged output is a class-agnostic shift added
// to every image feature.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfzsl/diffmath.hpp"
#include "dfzsl/embedding_store.hpp"
#include "dfzsl/prototypes.hpp"

namespace dfzsl {

class FlptError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kNumPrompts = 4;
inline constexpr double kClipTemperature = 0.01;
inline constexpr std::uint64_t kDefaultEncoderSeed = 0x7E47E7C0DEull;

// Class-name token embeddings, plus optional prefix-token embeddings used to
// initialize the prompts. JSON: {"dim": e, "classes": {"name": [e floats]},
// "prefix": [[e floats] x 4], "encoder_seed": n}; the last two keys are optional.
struct TokenTable {
    std::size_t dim = 0;
    std::map<std::string, std::vector<double>> classes;
    std::optional<std::array<std::vector<double>, kNumPrompts>> prefix;
    std::optional<std::uint64_t> encoder_seed;

    const std::vector<double>& at(const std::string& name) const;
    void validate() const;
};

TokenTable read_token_table(const std::filesystem::path& path);
void write_token_table(const TokenTable& table, const std::filesystem::path& path);

// Deterministic per-name Gaussian embeddings (std 1/sqrt(e)) seeded by a hash
// of the class name.
TokenTable synthetic_token_table(std::span<const std::string> names, std::size_t dim, std::uint64_t seed = 0);

// Frozen encoder: mean-pool {p1 p2 p3 p4 cls}, one GELU hidden layer of width
// 4d, linear map to d, L2-normalize. Weights are fixed by the seed.
class TextEncoder {
public:
    TextEncoder(std::size_t token_dim, std::size_t feature_dim, std::uint64_t seed = kDefaultEncoderSeed);

    std::size_t token_dim() const noexcept { return token_dim_; }
    std::size_t feature_dim() const noexcept { return feature_dim_; }
    const dm::Tensor& hidden_weights() const noexcept { return w_hidden_; }
    const dm::Tensor& output_weights() const noexcept { return w_out_; }

    // prompts: 4 x e, class_tokens: C x e -> C x d unit rows.
    dm::Var encode(dm::Graph& g, dm::Var prompts, dm::Var class_tokens) const;
    dm::Tensor encode(const dm::Tensor& prompts, const dm::Tensor& class_tokens) const;

private:
    std::size_t token_dim_;
    std::size_t feature_dim_;
    dm::Tensor w_hidden_;  // 4d x e
    dm::Tensor w_out_;     // d x 4d
};

struct PromptState {
    dm::Tensor prompts;  // 4 x e
    dm::Tensor map_w1;   // 2e x e
    dm::Tensor map_b1;   // 1 x 2e
    dm::Tensor map_w2;   // d x 2e
    dm::Tensor map_b2;   // 1 x d
    double alpha = 1.0;
    double tau = kClipTemperature;

    std::size_t token_dim() const noexcept { return prompts.cols; }
    std::size_t feature_dim() const noexcept { return map_w2.rows; }

    dm::ParamMap params() const;
    void assign(const dm::ParamMap& params);
};

void write_prompt_state(const PromptState& state, const std::filesystem::path& path);
PromptState read_prompt_state(const std::filesystem::path& path);

// Source of (enhanced) text features: either prompts through the frozen
// encoder, or fixed exported features that the prompts cannot change.
class TextModel {
public:
    static TextModel prompted(TokenTable tokens, std::size_t feature_dim);
    static TextModel frozen(ClassPrototypes features);

    bool tunable() const noexcept { return encoder_.has_value(); }
    std::size_t token_dim() const noexcept;
    std::size_t feature_dim() const noexcept;
    const std::optional<std::array<std::vector<double>, kNumPrompts>>& prefix() const noexcept;
    bool has_class(const std::string& name) const;

    dm::Var features(dm::Graph& g, dm::Var prompts, std::span<const std::string> names) const;
    ClassPrototypes features(const PromptState& state, std::span<const std::string> names) const;

private:
    TextModel() = default;
    dm::Tensor class_tokens(std::span<const std::string> names) const;

    std::optional<TokenTable> tokens_;
    std::optional<TextEncoder> encoder_;
    std::optional<ClassPrototypes> frozen_;
};

// Prompts from the prefix tokens when available, else N(0, 0.02^2); mapping
// network hidden layer random, output layer zero so the initial shift is zero.
PromptState init_prompt_state(const TextModel& text, double alpha, std::uint64_t seed);

// (1/4) sum_i F(p_i) as a 1 x d tensor.
dm::Tensor compute_shift(const PromptState& state);
dm::Var compute_shift(dm::Graph& g, const dm::VarMap& params);

// x + alpha * shift for every record, then renormalized.
EmbeddingSet enhance_features(const EmbeddingSet& features, const PromptState& state);

std::vector<double> encode_class_text(const TextModel& text, const PromptState& state, const std::string& name);

// -log softmax(cos(x, t_c) / tau)[label], via log-sum-exp.
double flpt_loss(std::span<const double> x, std::size_t label, const dm::Tensor& text, double tau);

struct FlptConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double learning_rate = 3e-4;
    double alpha = 1.0;
    std::uint64_t seed = 0;
};

struct FlptResult {
    PromptState state;
    EmbeddingSet enhanced;
    // Mean batch loss per epoch; initial_loss is the full-set loss before training.
    double initial_loss = 0.0;
    std::vector<double> epoch_losses;
};

// Mean loss over `features` with text features for its own class table.
double flpt_dataset_loss(const EmbeddingSet& features, const TextModel& text, const PromptState& state);

FlptResult train_flpt(const EmbeddingSet& virtual_base, const TextModel& text, const FlptConfig& config);

}  // namespace dfzsl

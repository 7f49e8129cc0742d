#include "dfzsl/flpt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dfzsl/rng.hpp"
#include "json.hpp"

namespace dfzsl {

namespace {

using nlohmann::json;

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

dm::Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    dm::Tensor t(rows, cols);
    for (double& v : t.values) v = normal(rng);
    return t;
}

json tensor_json(const dm::Tensor& t) { return json{{"rows", t.rows}, {"cols", t.cols}, {"values", t.values}}; }

dm::Tensor tensor_from_json(const json& j) {
    return dm::Tensor(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                      j.at("values").get<std::vector<double>>());
}

}  // namespace

// ---------------------------------------------------------------- tokens

const std::vector<double>& TokenTable::at(const std::string& name) const {
    auto it = classes.find(name);
    if (it == classes.end()) throw FlptError("token table has no entry for class '" + name + "'");
    return it->second;
}

void TokenTable::validate() const {
    if (dim == 0) throw FlptError("token table dimension must be positive");
    for (const auto& [name, v] : classes) {
        if (name.empty()) throw FlptError("token table has an empty class name");
        if (v.size() != dim) throw FlptError("token for '" + name + "' has wrong dimension");
        if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }))
            throw FlptError("token for '" + name + "' has non-finite values");
    }
    if (prefix)
        for (const auto& p : *prefix)
            if (p.size() != dim) throw FlptError("prefix token has wrong dimension");
}

TokenTable read_token_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FlptError("cannot open token table '" + path.string() + "'");
    TokenTable t;
    try {
        const json j = json::parse(in);
        t.dim = j.at("dim").get<std::size_t>();
        for (const auto& [name, v] : j.at("classes").items()) t.classes[name] = v.get<std::vector<double>>();
        if (j.contains("prefix")) {
            const auto rows = j.at("prefix").get<std::vector<std::vector<double>>>();
            if (rows.size() != kNumPrompts) throw FlptError("token table prefix must hold exactly 4 vectors");
            std::array<std::vector<double>, kNumPrompts> p;
            std::copy(rows.begin(), rows.end(), p.begin());
            t.prefix = p;
        }
        if (j.contains("encoder_seed")) t.encoder_seed = j.at("encoder_seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw FlptError("token table '" + path.string() + "': " + e.what());
    }
    t.validate();
    return t;
}

void write_token_table(const TokenTable& table, const std::filesystem::path& path) {
    table.validate();
    nlohmann::ordered_json j;
    j["dim"] = table.dim;
    nlohmann::ordered_json classes = nlohmann::ordered_json::object();
    for (const auto& [name, v] : table.classes) classes[name] = v;
    j["classes"] = classes;
    if (table.prefix) j["prefix"] = std::vector<std::vector<double>>(table.prefix->begin(), table.prefix->end());
    if (table.encoder_seed) j["encoder_seed"] = *table.encoder_seed;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FlptError("cannot write token table '" + path.string() + "'");
    out << j.dump() << "\n";
}

TokenTable synthetic_token_table(std::span<const std::string> names, std::size_t dim, std::uint64_t seed) {
    TokenTable t;
    t.dim = dim;
    for (const auto& name : names) {
        Rng rng = make_stream(seed, {fnv1a(name)});
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
        std::vector<double> v(dim);
        for (double& x : v) x = normal(rng);
        t.classes[name] = std::move(v);
    }
    return t;
}

// ---------------------------------------------------------------- encoder

TextEncoder::TextEncoder(std::size_t token_dim, std::size_t feature_dim, std::uint64_t seed)
    : token_dim_(token_dim), feature_dim_(feature_dim) {
    if (token_dim == 0 || feature_dim == 0) throw FlptError("text encoder dimensions must be positive");
    Rng rng = make_stream(seed, {token_dim, feature_dim});
    w_hidden_ = gaussian(4 * feature_dim, token_dim, 1.0 / std::sqrt(static_cast<double>(token_dim)), rng);
    w_out_ = gaussian(feature_dim, 4 * feature_dim, 1.0 / std::sqrt(4.0 * static_cast<double>(feature_dim)), rng);
}

dm::Var TextEncoder::encode(dm::Graph& g, dm::Var prompts, dm::Var class_tokens) const {
    const auto prompt_sum = g.scale(g.mean(prompts, dm::Axis::rows), static_cast<double>(kNumPrompts));
    const auto pooled = g.scale(g.add_row(class_tokens, prompt_sum), 1.0 / static_cast<double>(kNumPrompts + 1));
    const auto hidden = g.gelu(g.matmul_nt(pooled, g.constant(w_hidden_)));
    return g.l2_normalize_rows(g.matmul_nt(hidden, g.constant(w_out_)));
}

dm::Tensor TextEncoder::encode(const dm::Tensor& prompts, const dm::Tensor& class_tokens) const {
    dm::Graph g;
    return g.value(encode(g, g.constant(prompts), g.constant(class_tokens)));
}

// ---------------------------------------------------------------- prompt state

dm::ParamMap PromptState::params() const {
    return {{"prompts", prompts}, {"map_w1", map_w1}, {"map_b1", map_b1}, {"map_w2", map_w2}, {"map_b2", map_b2}};
}

void PromptState::assign(const dm::ParamMap& p) {
    prompts = p.at("prompts");
    map_w1 = p.at("map_w1");
    map_b1 = p.at("map_b1");
    map_w2 = p.at("map_w2");
    map_b2 = p.at("map_b2");
}

void write_prompt_state(const PromptState& s, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["alpha"] = s.alpha;
    j["tau"] = s.tau;
    j["prompts"] = tensor_json(s.prompts);
    j["map_w1"] = tensor_json(s.map_w1);
    j["map_b1"] = tensor_json(s.map_b1);
    j["map_w2"] = tensor_json(s.map_w2);
    j["map_b2"] = tensor_json(s.map_b2);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FlptError("cannot write prompt state '" + path.string() + "'");
    out << j.dump() << "\n";
}

PromptState read_prompt_state(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FlptError("cannot open prompt state '" + path.string() + "'");
    try {
        const json j = json::parse(in);
        PromptState s;
        s.alpha = j.at("alpha").get<double>();
        s.tau = j.at("tau").get<double>();
        s.prompts = tensor_from_json(j.at("prompts"));
        s.map_w1 = tensor_from_json(j.at("map_w1"));
        s.map_b1 = tensor_from_json(j.at("map_b1"));
        s.map_w2 = tensor_from_json(j.at("map_w2"));
        s.map_b2 = tensor_from_json(j.at("map_b2"));
        if (s.prompts.rows != kNumPrompts) throw FlptError("prompt state must hold exactly 4 prompts");
        return s;
    } catch (const json::exception& e) {
        throw FlptError("prompt state '" + path.string() + "': " + e.what());
    }
}

// ---------------------------------------------------------------- text model

TextModel TextModel::prompted(TokenTable tokens, std::size_t feature_dim) {
    tokens.validate();
    TextModel m;
    m.encoder_.emplace(tokens.dim, feature_dim, tokens.encoder_seed.value_or(kDefaultEncoderSeed));
    m.tokens_ = std::move(tokens);
    return m;
}

TextModel TextModel::frozen(ClassPrototypes features) {
    TextModel m;
    m.frozen_ = features.normalized();
    return m;
}

std::size_t TextModel::token_dim() const noexcept { return tokens_ ? tokens_->dim : frozen_->dim(); }

std::size_t TextModel::feature_dim() const noexcept { return encoder_ ? encoder_->feature_dim() : frozen_->dim(); }

const std::optional<std::array<std::vector<double>, kNumPrompts>>& TextModel::prefix() const noexcept {
    static const std::optional<std::array<std::vector<double>, kNumPrompts>> none;
    return tokens_ ? tokens_->prefix : none;
}

bool TextModel::has_class(const std::string& name) const {
    if (tokens_) return tokens_->classes.count(name) > 0;
    return std::find(frozen_->class_names.begin(), frozen_->class_names.end(), name) != frozen_->class_names.end();
}

dm::Tensor TextModel::class_tokens(std::span<const std::string> names) const {
    dm::Tensor t(names.size(), tokens_->dim);
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto& v = tokens_->at(names[i]);
        std::copy(v.begin(), v.end(), t.row(i).begin());
    }
    return t;
}

dm::Var TextModel::features(dm::Graph& g, dm::Var prompts, std::span<const std::string> names) const {
    if (encoder_) return encoder_->encode(g, prompts, g.constant(class_tokens(names)));
    try {
        return g.constant(frozen_->select(names).directions);
    } catch (const EmbError& e) {
        throw FlptError(e.what());
    }
}

ClassPrototypes TextModel::features(const PromptState& state, std::span<const std::string> names) const {
    dm::Graph g;
    ClassPrototypes p;
    p.class_names.assign(names.begin(), names.end());
    p.directions = g.value(features(g, g.constant(state.prompts), names));
    return p;
}

PromptState init_prompt_state(const TextModel& text, double alpha, std::uint64_t seed) {
    if (!(alpha >= 0.0)) throw FlptError("alpha must be >= 0");
    const std::size_t e = text.token_dim();
    const std::size_t d = text.feature_dim();
    Rng rng = make_stream(seed, {0xF1F7});
    PromptState s;
    s.alpha = alpha;
    s.tau = kClipTemperature;
    if (text.prefix()) {
        s.prompts = dm::Tensor(kNumPrompts, e);
        for (std::size_t i = 0; i < kNumPrompts; ++i)
            std::copy((*text.prefix())[i].begin(), (*text.prefix())[i].end(), s.prompts.row(i).begin());
    } else {
        s.prompts = gaussian(kNumPrompts, e, 0.02, rng);
    }
    s.map_w1 = gaussian(2 * e, e, 1.0 / std::sqrt(static_cast<double>(e)), rng);
    s.map_b1 = dm::Tensor(1, 2 * e, 0.0);
    s.map_w2 = dm::Tensor(d, 2 * e, 0.0);
    s.map_b2 = dm::Tensor(1, d, 0.0);
    return s;
}

dm::Var compute_shift(dm::Graph& g, const dm::VarMap& p) {
    const auto hidden = g.gelu(g.add_row(g.matmul_nt(p.at("prompts"), p.at("map_w1")), p.at("map_b1")));
    const auto mapped = g.add_row(g.matmul_nt(hidden, p.at("map_w2")), p.at("map_b2"));
    return g.mean(mapped, dm::Axis::rows);
}

dm::Tensor compute_shift(const PromptState& state) {
    dm::Graph g;
    dm::VarMap vars;
    for (const auto& [name, t] : state.params()) vars.emplace(name, g.constant(t));
    return g.value(compute_shift(g, vars));
}

EmbeddingSet enhance_features(const EmbeddingSet& features, const PromptState& state) {
    const dm::Tensor shift = compute_shift(state);
    if (shift.cols != features.dim)
        throw FlptError("feature dimension " + std::to_string(features.dim) + " does not match shift dimension " +
                        std::to_string(shift.cols));
    EmbeddingSet out = features;
    std::vector<double> x(features.dim);
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto r = out.row(i);
        double sq = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            x[k] = static_cast<double>(r[k]) + state.alpha * shift.values[k];
            sq += x[k] * x[k];
        }
        if (!(sq > 0.0)) throw FlptError("enhanced feature " + std::to_string(i) + " collapsed to zero");
        const double inv = 1.0 / std::sqrt(sq);
        for (std::size_t k = 0; k < x.size(); ++k) r[k] = static_cast<float>(x[k] * inv);
    }
    return out;
}

std::vector<double> encode_class_text(const TextModel& text, const PromptState& state, const std::string& name) {
    if (!text.has_class(name)) throw FlptError("unknown class '" + name + "'");
    const std::string names[] = {name};
    const auto p = text.features(state, names);
    return {p.directions.values.begin(), p.directions.values.end()};
}

double flpt_loss(std::span<const double> x, std::size_t label, const dm::Tensor& text, double tau) {
    if (label >= text.rows) throw FlptError("label out of range");
    if (!(tau > 0.0)) throw FlptError("temperature must be positive");
    if (!std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); }) || !text.all_finite())
        throw FlptError("non-finite input to prompt loss");
    std::vector<double> logits(text.rows);
    for (std::size_t c = 0; c < text.rows; ++c) logits[c] = dm::cosine_similarity(x, text.row(c)) / tau;
    const auto top = std::max_element(logits.begin(), logits.end());
    double rest = 0.0;
    for (auto it = logits.begin(); it != logits.end(); ++it)
        if (it != top) rest += std::exp(*it - *top);
    return (*top - logits[label]) + std::log1p(rest);
}

double flpt_dataset_loss(const EmbeddingSet& features, const TextModel& text, const PromptState& state) {
    if (features.empty()) throw FlptError("empty feature set");
    const auto t = text.features(state, features.class_names).directions;
    const auto shift = compute_shift(state);
    std::vector<double> x(features.dim);
    double total = 0.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto r = features.row(i);
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = r[k] + state.alpha * shift.values[k];
        total += flpt_loss(x, features.labels[i], t, state.tau);
    }
    return total / static_cast<double>(features.size());
}

FlptResult train_flpt(const EmbeddingSet& virtual_base, const TextModel& text, const FlptConfig& config) {
    if (virtual_base.empty()) throw FlptError("empty training set");
    if (virtual_base.dim != text.feature_dim())
        throw FlptError("feature dimension does not match text feature dimension");
    std::size_t covered = 0;
    for (auto n : virtual_base.class_counts()) covered += n > 0;
    if (covered < 2) throw FlptError("prompt tuning needs samples from at least two classes");
    for (const auto& name : virtual_base.class_names)
        if (!text.has_class(name)) throw FlptError("no text entry for class '" + name + "'");
    if (config.batch_size == 0) throw FlptError("batch size must be positive");

    FlptResult result;
    result.state = init_prompt_state(text, config.alpha, config.seed);
    result.initial_loss = flpt_dataset_loss(virtual_base, text, result.state);

    const auto& names = virtual_base.class_names;
    const double alpha = result.state.alpha;
    const double tau = result.state.tau;
    dm::ParamMap params = result.state.params();
    dm::Adam adam(dm::AdamConfig{.learning_rate = config.learning_rate});

    std::vector<std::size_t> order(virtual_base.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffler = make_stream(config.seed, {0xF1F8, epoch});
        std::shuffle(order.begin(), order.end(), shuffler);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            dm::Tensor x(end - begin, virtual_base.dim);
            std::vector<std::uint32_t> labels(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                const auto r = virtual_base.row(order[i]);
                std::copy(r.begin(), r.end(), x.row(i - begin).begin());
                labels[i - begin] = virtual_base.labels[order[i]];
            }
            const auto res = dm::eval_with_grad(
                [&](dm::Graph& g, const dm::VarMap& v) {
                    const auto shift = compute_shift(g, v);
                    const auto enhanced = g.add_row(g.constant(x), g.scale(shift, alpha));
                    const auto t = text.features(g, v.at("prompts"), names);
                    return g.softmax_cross_entropy(g.cosine(enhanced, t), labels, tau);
                },
                params);
            if (!std::isfinite(res.loss)) {
                std::ostringstream os;
                os << "non-finite prompt-tuning loss at epoch " << epoch << ", batch starting at " << begin;
                throw FlptError(os.str());
            }
            total += res.loss;
            ++batches;
            adam.step(params, res.grads);
        }
        result.epoch_losses.push_back(total / static_cast<double>(batches));
    }
    result.state.assign(params);
    result.enhanced = enhance_features(virtual_base, result.state);
    return result;
}

}  // namespace dfzsl

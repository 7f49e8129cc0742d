#include "dfzsl/feature_generator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include "dfzsl/rng.hpp"

namespace dfzsl {

namespace {

constexpr char kMagic[4] = {'G', 'E', 'N', '1'};
constexpr std::uint32_t kVersion = 1;

dm::Tensor gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    dm::Tensor t(rows, cols);
    for (double& v : t.values) v = normal(rng);
    return t;
}

dm::Tensor layer(std::size_t out, std::size_t in, Rng& rng, double gain = 1.0) {
    return gaussian(out, in, gain / std::sqrt(static_cast<double>(in)), rng);
}

dm::Var dense(dm::Graph& g, dm::Var x, dm::Var w, dm::Var b) { return g.add_row(g.matmul_nt(x, w), b); }

dm::Var critic(dm::Graph& g, const dm::VarMap& p, dm::Var x, dm::Var t) {
    const auto h = g.gelu(dense(g, g.concat_cols(x, t), p.at("critic_w1"), p.at("critic_b1")));
    return dense(g, h, p.at("critic_w2"), p.at("critic_b2"));
}

// Trainable parameters become graph parameters, the rest constants.
dm::VarMap bind_params(dm::Graph& g, const dm::VarMap& trainable, const dm::ParamMap& all) {
    dm::VarMap out = trainable;
    for (const auto& [name, t] : all)
        if (!out.count(name)) out.emplace(name, g.constant(t));
    return out;
}

dm::ParamMap subset(const dm::ParamMap& all, bool critic_part) {
    dm::ParamMap out;
    for (const auto& [name, t] : all)
        if ((name.rfind("critic_", 0) == 0) == critic_part) out.emplace(name, t);
    return out;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

struct ByteReader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (bytes.size() - pos < n)
            throw GeneratorError("GEN1 truncated at byte offset " + std::to_string(pos));
    }
    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        pos += static_cast<std::size_t>(width);
        return v;
    }
};

}  // namespace

const char* to_string(GeneratorBackend backend) { return backend == GeneratorBackend::cvae ? "cvae" : "cgan"; }

GeneratorBackend parse_backend(const std::string& s) {
    if (s == "cvae") return GeneratorBackend::cvae;
    if (s == "cgan") return GeneratorBackend::cgan;
    throw std::invalid_argument("unknown generator backend '" + s + "' (expected cvae|cgan)");
}

void GenTrainConfig::validate() const {
    if (batch_size == 0) throw GeneratorError("generator batch size must be positive");
    if (!(learning_rate > 0.0)) throw GeneratorError("generator learning rate must be positive");
    if (!(kl_weight >= 0.0)) throw GeneratorError("KL weight must be >= 0");
    if (latent_dim == 0) throw GeneratorError("latent dimension must be >= 1");
}

GeneratorState init_generator(std::size_t feature_dim, std::size_t conditioning_dim, const GenTrainConfig& config) {
    config.validate();
    if (feature_dim != conditioning_dim)
        throw GeneratorError("generator needs text and image features of the same dimension");
    const std::size_t d = feature_dim, c = conditioning_dim, l = config.latent_dim, h = 2 * d;
    Rng rng = make_stream(config.seed, {0x6E40});
    GeneratorState s;
    s.backend = config.backend;
    s.latent_dim = l;
    s.conditioning_dim = c;
    s.feature_dim = d;
    auto& p = s.params;
    p["dec_w1"] = layer(h, l + c, rng);
    p["dec_b1"] = dm::Tensor(1, h, 0.0);
    p["dec_w2"] = layer(d, h, rng, 0.1);
    p["dec_b2"] = dm::Tensor(1, d, 0.0);
    if (config.backend == GeneratorBackend::cvae) {
        p["enc_w1"] = layer(h, d + c, rng);
        p["enc_b1"] = dm::Tensor(1, h, 0.0);
        p["enc_w_mean"] = layer(l, h, rng);
        p["enc_b_mean"] = dm::Tensor(1, l, 0.0);
        p["enc_w_logvar"] = layer(l, h, rng, 0.1);
        p["enc_b_logvar"] = dm::Tensor(1, l, 0.0);
    } else {
        p["critic_w1"] = layer(h, d + c, rng);
        p["critic_b1"] = dm::Tensor(1, h, 0.0);
        p["critic_w2"] = layer(1, h, rng);
        p["critic_b2"] = dm::Tensor(1, 1, 0.0);
    }
    return s;
}

dm::Var decode(dm::Graph& g, const dm::VarMap& p, dm::Var z, dm::Var t) {
    const auto h = g.gelu(dense(g, g.concat_cols(z, t), p.at("dec_w1"), p.at("dec_b1")));
    return g.add(t, dense(g, h, p.at("dec_w2"), p.at("dec_b2")));
}

Posterior encode(dm::Graph& g, const dm::VarMap& p, dm::Var x, dm::Var t) {
    const auto h = g.gelu(dense(g, g.concat_cols(x, t), p.at("enc_w1"), p.at("enc_b1")));
    return {dense(g, h, p.at("enc_w_mean"), p.at("enc_b_mean")),
            dense(g, h, p.at("enc_w_logvar"), p.at("enc_b_logvar"))};
}

CvaeTerms cvae_loss(dm::Graph& g, const dm::VarMap& p, const dm::Tensor& x, const dm::Tensor& t,
                    const dm::Tensor& noise, double kl_weight) {
    const auto xv = g.constant(x);
    const auto tv = g.constant(t);
    const auto post = encode(g, p, xv, tv);
    const auto z = g.add(post.mean, g.mul(g.exp(g.scale(post.log_var, 0.5)), g.constant(noise)));
    const auto recon = g.l2_normalize_rows(decode(g, p, z, tv));
    const double rows = static_cast<double>(x.rows);
    const auto reconstruction = g.scale(g.mse(recon, xv), static_cast<double>(x.cols));
    // -1/2 sum(1 + log_var - mean^2 - exp(log_var)), averaged over the batch
    const auto inner = g.add_scalar(g.sub(g.sub(post.log_var, g.square(post.mean)), g.exp(post.log_var)), 1.0);
    const auto kl = g.scale(g.sum(inner), -0.5 / rows);
    return {g.add(reconstruction, g.scale(kl, kl_weight)), reconstruction, kl};
}

GeneratorState train_generator(const EmbeddingSet& enhanced_base, const ClassPrototypes& base_text,
                               const GenTrainConfig& config, GeneratorLog* log) {
    config.validate();
    if (enhanced_base.empty()) throw GeneratorError("empty training set");
    const auto counts = enhanced_base.class_counts();
    dm::Tensor class_text(enhanced_base.num_classes(), base_text.dim());
    for (std::size_t c = 0; c < enhanced_base.num_classes(); ++c) {
        if (counts[c] == 0) throw GeneratorError("class '" + enhanced_base.class_names[c] + "' has no samples");
        std::size_t idx = 0;
        try {
            idx = base_text.index_of(enhanced_base.class_names[c]);
        } catch (const EmbError&) {
            throw GeneratorError("class '" + enhanced_base.class_names[c] + "' has no text feature");
        }
        std::copy(base_text.row(idx).begin(), base_text.row(idx).end(), class_text.row(c).begin());
    }

    GeneratorState state = init_generator(enhanced_base.dim, base_text.dim(), config);
    GeneratorLog local;
    GeneratorLog& out = log ? *log : local;
    out = GeneratorLog{};
    out.min_kl = std::numeric_limits<double>::infinity();

    const std::size_t l = state.latent_dim;
    dm::Adam gen_opt(dm::AdamConfig{.learning_rate = config.learning_rate});
    dm::Adam critic_opt(dm::AdamConfig{.learning_rate = config.learning_rate});
    std::vector<std::size_t> order(enhanced_base.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    bool have_initial = false;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffler = make_stream(config.seed, {0x6E41, epoch});
        std::shuffle(order.begin(), order.end(), shuffler);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            const std::size_t n = end - begin;
            dm::Tensor x(n, enhanced_base.dim), t(n, class_text.cols);
            for (std::size_t i = 0; i < n; ++i) {
                const auto r = enhanced_base.row(order[begin + i]);
                std::copy(r.begin(), r.end(), x.row(i).begin());
                const auto tr = class_text.row(enhanced_base.labels[order[begin + i]]);
                std::copy(tr.begin(), tr.end(), t.row(i).begin());
            }
            Rng noise_rng = make_stream(config.seed, {0x6E42, epoch, begin});
            const dm::Tensor noise = gaussian(n, l, 1.0, noise_rng);

            double batch_loss = 0.0;
            if (config.backend == GeneratorBackend::cvae) {
                double kl_value = 0.0;
                const auto res = dm::eval_with_grad(
                    [&](dm::Graph& g, const dm::VarMap& v) {
                        const auto terms = cvae_loss(g, v, x, t, noise, config.kl_weight);
                        kl_value = g.scalar(terms.kl);
                        return terms.loss;
                    },
                    state.params);
                batch_loss = res.loss;
                out.min_kl = std::min(out.min_kl, kl_value);
                gen_opt.step(state.params, res.grads);
            } else {
                dm::ParamMap gen = subset(state.params, false);
                dm::ParamMap crit = subset(state.params, true);
                // critic: hinge on real vs generated
                const auto critic_res = dm::eval_with_grad(
                    [&](dm::Graph& g, const dm::VarMap& v) {
                        const auto p = bind_params(g, v, state.params);
                        const auto tv = g.constant(t);
                        const auto fake = g.l2_normalize_rows(decode(g, p, g.constant(noise), tv));
                        const auto real_score = critic(g, p, g.constant(x), tv);
                        const auto fake_score = critic(g, p, fake, tv);
                        const auto real_term = g.mean(g.relu(g.add_scalar(g.scale(real_score, -1.0), 1.0)), dm::Axis::all);
                        const auto fake_term = g.mean(g.relu(g.add_scalar(fake_score, 1.0)), dm::Axis::all);
                        return g.add(real_term, fake_term);
                    },
                    crit);
                critic_opt.step(crit, critic_res.grads);
                for (auto& [name, tns] : crit) state.params[name] = tns;
                const auto gen_res = dm::eval_with_grad(
                    [&](dm::Graph& g, const dm::VarMap& v) {
                        const auto p = bind_params(g, v, state.params);
                        const auto tv = g.constant(t);
                        const auto fake = g.l2_normalize_rows(decode(g, p, g.constant(noise), tv));
                        return g.scale(g.mean(critic(g, p, fake, tv), dm::Axis::all), -1.0);
                    },
                    gen);
                gen_opt.step(gen, gen_res.grads);
                for (auto& [name, tns] : gen) state.params[name] = tns;
                batch_loss = critic_res.loss + gen_res.loss;
            }
            if (!std::isfinite(batch_loss))
                throw GeneratorError("non-finite generator loss at epoch " + std::to_string(epoch));
            if (!have_initial) {
                out.initial_loss = batch_loss;
                have_initial = true;
            }
            total += batch_loss;
            ++batches;
        }
        out.epoch_losses.push_back(total / static_cast<double>(batches));
    }
    if (!std::isfinite(out.min_kl)) out.min_kl = 0.0;
    return state;
}

EmbeddingSet synthesize_with_noise(const GeneratorState& state, const ClassPrototypes& class_text,
                                   const dm::Tensor& noise) {
    if (class_text.size() > 0 && class_text.dim() != state.conditioning_dim)
        throw GeneratorError("text feature dimension does not match generator conditioning dimension");
    if (noise.rows > 0 && noise.cols != state.latent_dim) throw GeneratorError("noise width does not match latent dimension");
    EmbeddingSet out(static_cast<std::uint32_t>(state.feature_dim), class_text.class_names);
    if (noise.rows == 0) return out;
    for (std::size_t c = 0; c < class_text.size(); ++c) {
        dm::Graph g;
        dm::VarMap p;
        for (const auto& [name, t] : state.params) p.emplace(name, g.constant(t));
        dm::Tensor t(noise.rows, class_text.dim());
        for (std::size_t i = 0; i < noise.rows; ++i)
            std::copy(class_text.row(c).begin(), class_text.row(c).end(), t.row(i).begin());
        const auto x = g.l2_normalize_rows(decode(g, p, g.constant(noise), g.constant(t)));
        const auto& xs = g.value(x);
        for (std::size_t i = 0; i < xs.rows; ++i) out.add(static_cast<std::uint32_t>(c), xs.row(i));
    }
    return out;
}

EmbeddingSet synthesize(const GeneratorState& state, const ClassPrototypes& class_text, std::size_t per_class,
                        std::uint64_t seed) {
    if (class_text.size() > 0 && class_text.dim() != state.conditioning_dim)
        throw GeneratorError("text feature dimension does not match generator conditioning dimension");
    EmbeddingSet out(static_cast<std::uint32_t>(state.feature_dim), class_text.class_names);
    if (per_class == 0) return out;
    for (std::size_t c = 0; c < class_text.size(); ++c) {
        Rng rng = make_stream(seed, {0x5A17, c});
        const dm::Tensor noise = gaussian(per_class, state.latent_dim, 1.0, rng);
        const auto one = synthesize_with_noise(state, class_text.select(std::span(&class_text.class_names[c], 1)), noise);
        for (std::size_t i = 0; i < one.size(); ++i) out.add(static_cast<std::uint32_t>(c), one.row(i));
    }
    return out;
}

void write_generator(const GeneratorState& state, const std::filesystem::path& path) {
    std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(state.backend));
    put_u32(out, static_cast<std::uint32_t>(state.latent_dim));
    put_u32(out, static_cast<std::uint32_t>(state.conditioning_dim));
    put_u32(out, static_cast<std::uint32_t>(state.feature_dim));
    put_u32(out, static_cast<std::uint32_t>(state.params.size()));
    for (const auto& [name, t] : state.params) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(t.rows));
        put_u32(out, static_cast<std::uint32_t>(t.cols));
    }
    for (const auto& [name, t] : state.params)
        for (double v : t.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw GeneratorError("cannot write '" + path.string() + "'");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

GeneratorState read_generator(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw GeneratorError("cannot open '" + path.string() + "'");
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    ByteReader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw GeneratorError("not a GEN1 file (bad magic)");
    r.pos = 4;
    if (r.uint(4) != kVersion) throw GeneratorError("unsupported GEN1 version");
    GeneratorState s;
    const auto tag = r.uint(4);
    if (tag > 1) throw GeneratorError("unknown generator backend tag " + std::to_string(tag));
    s.backend = static_cast<GeneratorBackend>(tag);
    s.latent_dim = r.uint(4);
    s.conditioning_dim = r.uint(4);
    s.feature_dim = r.uint(4);
    const auto count = r.uint(4);
    std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> table;
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto len = r.uint(4);
        r.need(len);
        std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), len);
        r.pos += len;
        const auto rows = r.uint(4);
        const auto cols = r.uint(4);
        table.push_back({std::move(name), {rows, cols}});
    }
    for (const auto& [name, shape] : table) {
        dm::Tensor t(shape.first, shape.second);
        for (double& v : t.values) v = std::bit_cast<double>(r.uint(8));
        s.params.emplace(name, std::move(t));
    }
    if (r.pos != bytes.size()) throw GeneratorError("trailing bytes after GEN1 payload");
    return s;
}

}  // namespace dfzsl

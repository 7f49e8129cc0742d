#include "dfzsl/benchmark.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "dfzsl/vmf_recovery.hpp"
#include "json.hpp"

namespace dfzsl {

namespace {

constexpr std::size_t kPlacementAttempts = 20000;
constexpr std::size_t kInversionSteps = 4000;

std::vector<double> random_unit(std::size_t d, Rng& rng) {
    std::normal_distribution<double> normal;
    std::vector<double> v(d);
    double n = 0.0;
    do {
        n = 0.0;
        for (double& x : v) {
            x = normal(rng);
            n += x * x;
        }
    } while (n < 1e-24);
    n = std::sqrt(n);
    for (double& x : v) x /= n;
    return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::string class_name(std::size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "c%02zu", i);
    return buf;
}

}  // namespace

void BenchmarkSpec::validate() const {
    if (dim < 2) throw BenchmarkError("benchmark dimension must be >= 2");
    if (base_classes < 2) throw BenchmarkError("benchmark needs >= 2 base classes");
    if (new_classes < 1) throw BenchmarkError("benchmark needs >= 1 new class");
    if (!(kappa > 0.0)) throw BenchmarkError("benchmark kappa must be positive");
    if (samples_per_class == 0) throw BenchmarkError("benchmark needs >= 1 sample per class");
    if (!(noise_deg >= 0.0 && noise_deg <= 180.0)) throw BenchmarkError("noise angle must lie in [0, 180] degrees");
    if (!(min_angle_deg > 0.0 && min_angle_deg < 180.0)) throw BenchmarkError("minimum angle must lie in (0, 180) degrees");
}

ClassPrototypes draw_separated_means(std::size_t count, std::size_t dim, double min_angle_rad, Rng& rng) {
    const auto fail = [&] {
        return BenchmarkError("infeasible geometry: cannot place " + std::to_string(count) + " class means " +
                              std::to_string(min_angle_rad * 180.0 / std::numbers::pi) + " degrees apart in dimension " +
                              std::to_string(dim));
    };
    if (dim == 2 && static_cast<double>(count) * min_angle_rad > 2.0 * std::numbers::pi + 1e-12) throw fail();
    const double max_cos = std::cos(min_angle_rad);
    ClassPrototypes out;
    out.directions = dm::Tensor(count, dim);
    for (std::size_t c = 0; c < count; ++c) {
        bool placed = false;
        for (std::size_t attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
            const auto v = random_unit(dim, rng);
            bool ok = true;
            for (std::size_t k = 0; k < c && ok; ++k) ok = dot(v, out.directions.row(k)) <= max_cos;
            if (ok) {
                std::copy(v.begin(), v.end(), out.directions.row(c).begin());
                placed = true;
            }
        }
        if (!placed) throw fail();
        out.class_names.push_back(class_name(c));
    }
    return out;
}

std::vector<double> rotate_away(std::span<const double> mu, double angle_rad, Rng& rng) {
    std::vector<double> v;
    double n = 0.0;
    do {
        v = random_unit(mu.size(), rng);
        const double p = dot(v, mu);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * mu[i];
        n = std::sqrt(dot(v, v));
    } while (n < 1e-8);
    std::vector<double> out(mu.size());
    if (angle_rad == 0.0) {
        std::copy(mu.begin(), mu.end(), out.begin());
        return out;
    }
    const double c = std::cos(angle_rad), s = std::sin(angle_rad);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * mu[i] + s * v[i] / n;
    return out;
}

TokenTable invert_text_encoder(const ClassPrototypes& text, const std::array<std::vector<double>, kNumPrompts>& prefix,
                               std::uint64_t encoder_seed, std::uint64_t seed, double* min_cosine) {
    const std::size_t e = prefix[0].size(), d = text.dim(), c = text.size();
    const TextEncoder encoder(e, d, encoder_seed);
    dm::Tensor prompts(kNumPrompts, e);
    for (std::size_t i = 0; i < kNumPrompts; ++i) std::copy(prefix[i].begin(), prefix[i].end(), prompts.row(i).begin());
    Rng rng = make_stream(seed, {0x1F4E});
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(e)));
    dm::Tensor tokens(c, e);
    for (double& v : tokens.values) v = normal(rng);

    dm::ParamMap params{{"cls", tokens}};
    dm::Adam opt(dm::AdamConfig{.learning_rate = 0.02});
    const auto build = [&](dm::Graph& g, const dm::VarMap& v) {
        const auto enc = encoder.encode(g, g.constant(prompts), v.at("cls"));
        return g.scale(g.sum(g.mul(enc, g.constant(text.directions))), -1.0 / static_cast<double>(c));
    };
    const auto worst = [&] {
        const auto enc = encoder.encode(prompts, params.at("cls"));
        double m = 1.0;
        for (std::size_t k = 0; k < c; ++k) m = std::min(m, dot(enc.row(k), text.row(k)));
        return m;
    };
    for (std::size_t step = 0; step < kInversionSteps; ++step) {
        const auto res = dm::eval_with_grad(build, params);
        opt.step(params, res.grads);
        if (step % 100 == 99 && worst() > 1.0 - 1e-9) break;
    }

    TokenTable table;
    table.dim = e;
    table.prefix = prefix;
    table.encoder_seed = encoder_seed;
    for (std::size_t k = 0; k < c; ++k) {
        const auto r = params.at("cls").row(k);
        table.classes[text.class_names[k]] = std::vector<double>(r.begin(), r.end());
    }
    if (min_cosine) *min_cosine = worst();
    return table;
}

Benchmark generate_benchmark(const BenchmarkSpec& spec) {
    spec.validate();
    const std::size_t total = spec.base_classes + spec.new_classes;
    const std::size_t d = spec.dim;
    Benchmark b;
    b.spec = spec;

    Rng geometry = make_stream(spec.seed, {0xBE, 1});
    b.means = draw_separated_means(total, d, spec.min_angle_deg * std::numbers::pi / 180.0, geometry);
    double min_deg = 180.0;
    for (std::size_t i = 0; i < total; ++i)
        for (std::size_t j = i + 1; j < total; ++j)
            min_deg = std::min(min_deg, std::acos(std::clamp(dot(b.means.row(i), b.means.row(j)), -1.0, 1.0)) *
                                            180.0 / std::numbers::pi);
    b.min_pairwise_deg = min_deg;

    Rng noise = make_stream(spec.seed, {0xBE, 2});
    b.text.class_names = b.means.class_names;
    b.text.directions = dm::Tensor(total, d);
    for (std::size_t c = 0; c < total; ++c) {
        const auto t = rotate_away(b.means.row(c), spec.noise_deg * std::numbers::pi / 180.0, noise);
        std::copy(t.begin(), t.end(), b.text.directions.row(c).begin());
    }

    b.train = EmbeddingSet(static_cast<std::uint32_t>(d), b.means.class_names);
    b.test = EmbeddingSet(static_cast<std::uint32_t>(d), b.means.class_names);
    std::vector<double> x(d);
    for (std::size_t c = 0; c < total; ++c) {
        for (int part = 0; part < 2; ++part) {
            Rng rng = make_stream(spec.seed, {0xBE, 3, c, static_cast<std::uint64_t>(part)});
            auto& set = part == 0 ? b.train : b.test;
            for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
                sample_vmf_unit(b.means.row(c), spec.kappa, rng, x);
                set.add(static_cast<std::uint32_t>(c), std::span<const double>(x));
            }
        }
    }
    b.train = normalize(b.train);
    b.test = normalize(b.test);

    for (std::size_t c = 0; c < total; ++c)
        (c < spec.base_classes ? b.split.base : b.split.novel).push_back(b.means.class_names[c]);

    b.server_weights.class_names = b.split.base;
    b.server_weights.directions = dm::Tensor(spec.base_classes, d);
    for (std::size_t i = 0; i < b.train.size(); ++i) {
        const auto l = b.train.labels[i];
        if (l >= spec.base_classes) continue;
        const auto r = b.train.row(i);
        auto w = b.server_weights.directions.row(l);
        for (std::size_t k = 0; k < d; ++k) w[k] += r[k];
    }
    b.server_weights = b.server_weights.normalized();

    Rng prefix_rng = make_stream(spec.seed, {0xBE, 4});
    // Token width 2d: with e = d the frozen encoder cannot reach every direction.
    const std::size_t e = 2 * d;
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(e)));
    std::array<std::vector<double>, kNumPrompts> prefix;
    for (auto& p : prefix) {
        p.resize(e);
        for (double& v : p) v = normal(prefix_rng);
    }
    b.tokens = invert_text_encoder(b.text, prefix, derive_seed(spec.seed, {0xBE, 5}), derive_seed(spec.seed, {0xBE, 6}),
                                   &b.token_fit);
    return b;
}

BenchmarkFiles write_benchmark(const Benchmark& b, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    BenchmarkFiles f;
    f.train_features = dir / "train_features.emb1";
    f.test_features = dir / "test_features.emb1";
    f.text_features = dir / "text_features.emb1";
    f.token_table = dir / "token_table.json";
    f.split = dir / "split.json";
    f.server_weights = dir / "server_weights.emb1";
    f.class_means = dir / "class_means.emb1";
    f.description = dir / "benchmark.json";
    f.pipeline_config = dir / "pipeline.json";

    write_emb1(b.train, f.train_features);
    write_emb1(b.test, f.test_features);
    write_emb1(prototypes_to_set(b.text), f.text_features);
    write_token_table(b.tokens, f.token_table);
    write_split(b.split, f.split);
    write_emb1(prototypes_to_set(b.server_weights), f.server_weights);
    write_emb1(prototypes_to_set(b.means), f.class_means);

    nlohmann::ordered_json desc;
    desc["dim"] = b.spec.dim;
    desc["base_classes"] = b.spec.base_classes;
    desc["new_classes"] = b.spec.new_classes;
    desc["kappa"] = b.spec.kappa;
    desc["samples_per_class"] = b.spec.samples_per_class;
    desc["noise_deg"] = b.spec.noise_deg;
    desc["min_angle_deg"] = b.spec.min_angle_deg;
    desc["seed"] = b.spec.seed;
    desc["min_pairwise_deg"] = b.min_pairwise_deg;
    desc["token_fit"] = b.token_fit;
    std::ofstream(f.description, std::ios::trunc) << desc.dump(2) << "\n";

    nlohmann::ordered_json cfg;
    cfg["mode"] = "white-box";
    cfg["seed"] = b.spec.seed;
    cfg["paths"] = {{"weights", "server_weights.emb1"},
                    {"token_table", "token_table.json"},
                    {"split", "split.json"},
                    {"test_features", "test_features.emb1"},
                    {"out_dir", "run"}};
    std::ofstream(f.pipeline_config, std::ios::trunc) << cfg.dump(2) << "\n";
    return f;
}

BenchmarkFiles make_benchmark(const BenchmarkSpec& spec, const std::filesystem::path& dir) {
    return write_benchmark(generate_benchmark(spec), dir);
}

}  // namespace dfzsl

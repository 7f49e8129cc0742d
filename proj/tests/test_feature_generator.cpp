#include <cmath>
#include <fstream>

#include "bench_fixture.hpp"
#include "doctest.h"
#include "dfzsl/feature_generator.hpp"
#include "dfzsl/flpt.hpp"
#include "dfzsl/vmf_recovery.hpp"
#include "helpers.hpp"

using namespace dfzsl;

namespace {

// Enhanced base features and enhanced text for every class of the default
// benchmark, from the white-box path with the pipeline's stage seeds.
struct Stage2 {
    EmbeddingSet enhanced_base;
    ClassPrototypes base_text, new_text;
    EmbeddingSet enhanced_test;
};

const Stage2& stage2() {
    static const Stage2 s = [] {
        const auto& b = testing::default_benchmark();
        RecoveryConfig rc;
        rc.seed = derive_seed(b.spec.seed, {1});
        const auto virt = recover_whitebox(b.server_weights, rc).virtual_base;
        const auto text = TextModel::prompted(b.tokens, b.spec.dim);
        FlptConfig fc;
        fc.seed = derive_seed(b.spec.seed, {2});
        const auto r = train_flpt(virt, text, fc);
        return Stage2{r.enhanced, text.features(r.state, b.split.base), text.features(r.state, b.split.novel),
                      enhance_features(b.test, r.state)};
    }();
    return s;
}

double cos_f(std::span<const float> x, std::span<const double> m) {
    double d = 0, nx = 0, nm = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        d += x[k] * m[k];
        nx += double(x[k]) * x[k];
        nm += m[k] * m[k];
    }
    return d / std::sqrt(nx * nm);
}

}  // namespace

TEST_SUITE("feature_generator") {

TEST_CASE("with no KL weight a single repeated sample is memorized") {
    auto rng = make_stream(1);
    auto p = testing::random_prototypes(1, 8, rng);
    EmbeddingSet x(8, p.class_names);
    auto sample = testing::random_tensor(1, 8, rng);
    dm::normalize_rows(sample);
    for (int i = 0; i < 64; ++i) x.add(0, sample.row(0));
    GenTrainConfig cfg;
    cfg.kl_weight = 0.0;
    cfg.epochs = 300;
    cfg.batch_size = 16;
    cfg.latent_dim = 4;
    GeneratorLog log;
    const auto state = train_generator(x, p, cfg, &log);
    dm::Graph g;
    dm::VarMap v;
    for (const auto& [name, t] : state.params) v.emplace(name, g.constant(t));
    dm::Tensor xs(8, 8), ts(8, 8);
    for (std::size_t i = 0; i < 8; ++i) {
        std::copy(sample.row(0).begin(), sample.row(0).end(), xs.row(i).begin());
        std::copy(p.row(0).begin(), p.row(0).end(), ts.row(i).begin());
    }
    const auto terms = cvae_loss(g, v, xs, ts, testing::random_tensor(8, 4, rng), 0.0);
    MESSAGE("reconstruction " << g.scalar(terms.reconstruction));
    CHECK(g.scalar(terms.reconstruction) < 1e-3);
}

TEST_CASE("KL stays non-negative during training") {
    auto rng = make_stream(2);
    const auto p = testing::random_prototypes(3, 6, rng);
    const auto x = sample_vmf_all({p, 30.0, 1.0}, 40, 2);
    GenTrainConfig cfg;
    cfg.epochs = 20;
    cfg.latent_dim = 4;
    GeneratorLog log;
    train_generator(x, p, cfg, &log);
    CHECK(log.min_kl >= 0.0);
    CHECK(log.epoch_losses.size() == 20);
}

TEST_CASE("gradients flow through the reparameterized latent") {
    auto rng = make_stream(3);
    GenTrainConfig cfg;
    cfg.latent_dim = 2;
    auto state = init_generator(3, 3, cfg);
    for (auto& [name, t] : state.params) t = testing::random_tensor(t.rows, t.cols, rng, 0.5);
    auto x = testing::random_tensor(4, 3, rng), t = testing::random_tensor(4, 3, rng);
    dm::normalize_rows(x);
    dm::normalize_rows(t);
    const auto noise = testing::random_tensor(4, 2, rng);
    const dm::LossBuilder f = [&](dm::Graph& g, const dm::VarMap& v) { return cvae_loss(g, v, x, t, noise, 0.3).loss; };
    CHECK(dm::finite_diff_check(f, state.params) < 1e-4);
    const auto r = dm::eval_with_grad(f, state.params);
    double enc = 0.0;
    for (double v : r.grads.at("enc_w_mean").values) enc += std::abs(v);
    CHECK(enc > 0.0);
}

TEST_CASE("synthesis: empty, deterministic, unit norm, labelled") {
    auto rng = make_stream(4);
    const auto p = testing::random_prototypes(2, 6, rng);
    GenTrainConfig cfg;
    cfg.latent_dim = 3;
    const auto state = init_generator(6, 6, cfg);
    CHECK(synthesize(state, p, 0, 1).empty());
    const auto a = synthesize(state, p, 50, 1), b = synthesize(state, p, 50, 1);
    CHECK(bit_equal(a, b));
    CHECK(a.size() == 100);
    CHECK(a.class_names == p.class_names);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.labels[i] == i / 50);
        double n = 0.0;
        for (float v : a.row(i)) n += double(v) * v;
        CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
    }
    CHECK_FALSE(bit_equal(a, synthesize(state, p, 50, 2)));
    ClassPrototypes wrong = testing::random_prototypes(2, 5, rng);
    CHECK_THROWS_AS(synthesize(state, wrong, 1, 1), GeneratorError);
}

TEST_CASE("training errors") {
    auto rng = make_stream(5);
    const auto p = testing::random_prototypes(2, 4, rng);
    auto x = sample_vmf_all({p, 30.0, 1.0}, 5, 5);
    auto renamed = p;
    renamed.class_names[1] = "other";
    CHECK_THROWS_AS(train_generator(x, renamed, GenTrainConfig{}), GeneratorError);
    EmbeddingSet missing(4, p.class_names);
    missing.add(0, x.row(0));
    CHECK_THROWS_AS(train_generator(missing, p, GenTrainConfig{}), GeneratorError);
    GenTrainConfig bad;
    bad.latent_dim = 0;
    CHECK_THROWS_AS(bad.validate(), GeneratorError);
    bad = {};
    bad.kl_weight = -1.0;
    CHECK_THROWS_AS(bad.validate(), GeneratorError);
}

TEST_CASE("conditioning changes the output once trained on separable classes") {
    auto rng = make_stream(6);
    const auto p = testing::random_prototypes(2, 8, rng);
    const auto x = sample_vmf_all({p, 50.0, 1.0}, 100, 6);
    GenTrainConfig cfg;
    cfg.epochs = 20;
    cfg.latent_dim = 4;
    const auto state = train_generator(x, p, cfg);
    const auto noise = testing::random_tensor(30, 4, rng);
    const auto out = synthesize_with_noise(state, p, noise);
    double mean_cos = 0.0;
    for (std::size_t i = 0; i < 30; ++i) {
        const auto a = out.row(i), b = out.row(30 + i);
        double d = 0.0;
        for (std::size_t k = 0; k < 8; ++k) d += double(a[k]) * b[k];
        mean_cos += d / 30.0;
    }
    CHECK(mean_cos < 1.0 - 1e-4);
}

TEST_CASE("cgan backend trains and synthesizes unit vectors") {
    auto rng = make_stream(7);
    const auto p = testing::random_prototypes(2, 6, rng);
    const auto x = sample_vmf_all({p, 30.0, 1.0}, 40, 7);
    GenTrainConfig cfg;
    cfg.backend = GeneratorBackend::cgan;
    cfg.epochs = 5;
    cfg.latent_dim = 3;
    GeneratorLog log;
    const auto state = train_generator(x, p, cfg, &log);
    CHECK(state.params.count("critic_w1") == 1);
    CHECK(state.params.count("enc_w1") == 0);
    const auto out = synthesize(state, p, 10, 3);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double n = 0.0;
        for (float v : out.row(i)) n += double(v) * v;
        CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
    }
    CHECK(parse_backend("cgan") == GeneratorBackend::cgan);
    CHECK_THROWS(parse_backend("gan"));
}

TEST_CASE("GEN1 round-trip and errors") {
    const auto dir = testing::scratch("gen1");
    auto rng = make_stream(8);
    GenTrainConfig cfg;
    cfg.latent_dim = 5;
    auto state = init_generator(4, 4, cfg);
    for (auto& [name, t] : state.params) t = testing::random_tensor(t.rows, t.cols, rng);
    write_generator(state, dir / "g.gen1");
    const auto back = read_generator(dir / "g.gen1");
    CHECK(back.backend == state.backend);
    CHECK(back.latent_dim == 5);
    CHECK(back.feature_dim == 4);
    CHECK(back.conditioning_dim == 4);
    REQUIRE(back.params.size() == state.params.size());
    for (const auto& [name, t] : state.params) {
        CHECK(back.params.at(name).values == t.values);
        CHECK(back.params.at(name).rows == t.rows);
    }

    std::ifstream in(dir / "g.gen1", std::ios::binary);
    std::vector<char> bytes{std::istreambuf_iterator<char>(in), {}};
    const auto write = [&](const std::vector<char>& b, const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        out.write(b.data(), static_cast<std::streamsize>(b.size()));
        return dir / name;
    };
    auto truncated = bytes;
    truncated.resize(bytes.size() - 5);
    try {
        read_generator(write(truncated, "t.gen1"));
        FAIL("expected truncation");
    } catch (const GeneratorError& e) {
        CHECK(std::string(e.what()).find("offset") != std::string::npos);
    }
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(read_generator(write(magic, "m.gen1")), GeneratorError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(read_generator(write(trailing, "x.gen1")), GeneratorError);
}

TEST_CASE("benchmark: loss halves and synthesized classes sit nearest their real class means") {
    const auto& b = testing::default_benchmark();
    const auto& s = stage2();
    GenTrainConfig cfg;
    cfg.seed = derive_seed(b.spec.seed, {3});
    GeneratorLog log;
    const auto state = train_generator(s.enhanced_base, s.base_text, cfg, &log);
    MESSAGE("generator loss " << log.initial_loss << " -> " << log.epoch_losses.back());
    CHECK(log.epoch_losses.back() < 0.5 * log.initial_loss);

    const auto synth = synthesize(state, s.new_text, 300, derive_seed(b.spec.seed, {4}));
    // Mean direction of the enhanced real test features per class.
    const auto& test = s.enhanced_test;
    std::vector<std::vector<double>> real(test.num_classes(), std::vector<double>(test.dim, 0.0));
    for (std::size_t i = 0; i < test.size(); ++i)
        for (std::size_t k = 0; k < test.dim; ++k) real[test.labels[i]][k] += test.row(i)[k];
    for (std::uint32_t c = 0; c < synth.num_classes(); ++c) {
        std::vector<double> score(real.size(), 0.0);
        for (std::size_t i = 0; i < synth.size(); ++i)
            if (synth.labels[i] == c)
                for (std::size_t m = 0; m < real.size(); ++m) score[m] += cos_f(synth.row(i), real[m]);
        const auto own = test.require_class(synth.class_names[c]);
        for (std::size_t m = 0; m < real.size(); ++m)
            if (m != own) CHECK(score[own] > score[m]);
    }
}

}

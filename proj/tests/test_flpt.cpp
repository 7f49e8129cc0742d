#include <cmath>

#include "bench_fixture.hpp"
#include "doctest.h"
#include "dfzsl/flpt.hpp"
#include "dfzsl/vmf_recovery.hpp"
#include "dfzsl/zsl_classifier.hpp"
#include "helpers.hpp"

using namespace dfzsl;

namespace {

TextModel small_text(std::size_t c, std::size_t e, std::size_t d, std::uint64_t seed = 0) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < c; ++i) names.push_back("class" + std::to_string(i));
    return TextModel::prompted(synthetic_token_table(names, e, seed), d);
}

std::vector<std::string> names_of(std::size_t c) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < c; ++i) names.push_back("class" + std::to_string(i));
    return names;
}

double nearest_text_accuracy(const EmbeddingSet& x, const ClassPrototypes& text) {
    const auto clf = text_classifier(text);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < x.size(); ++i) hit += clf.class_names[clf.predict(x.row(i))] == x.class_names[x.labels[i]];
    return static_cast<double>(hit) / static_cast<double>(x.size());
}

}  // namespace

TEST_SUITE("flpt") {

TEST_CASE("zero output layer gives a zero shift") {
    const auto text = small_text(3, 8, 5);
    const auto s = init_prompt_state(text, 1.0, 1);
    const auto shift = compute_shift(s);
    CHECK(shift.rows == 1);
    CHECK(shift.cols == 5);
    for (double v : shift.values) CHECK(v == 0.0);
}

TEST_CASE("a constant mapping network gives that constant") {
    const auto text = small_text(3, 8, 5);
    auto s = init_prompt_state(text, 1.0, 1);
    s.map_w2 = dm::Tensor(5, 16, 0.0);
    s.map_b2 = dm::Tensor(1, 5, std::vector<double>{0.1, -0.2, 0.3, 0.0, 2.0});
    const auto shift = compute_shift(s);
    for (std::size_t k = 0; k < 5; ++k) CHECK(shift.values[k] == doctest::Approx(s.map_b2.values[k]).epsilon(1e-15));
}

TEST_CASE("shift is the average of the four mapped prompts") {
    auto rng = make_stream(2);
    const auto text = small_text(3, 4, 3);
    auto s = init_prompt_state(text, 1.0, 1);
    s.prompts = testing::random_tensor(4, 4, rng);
    s.map_w2 = testing::random_tensor(3, 8, rng);
    s.map_b1 = testing::random_tensor(1, 8, rng);
    std::vector<double> expected(3, 0.0);
    for (std::size_t i = 0; i < 4; ++i) {
        std::vector<double> h(8);
        for (std::size_t j = 0; j < 8; ++j) h[j] = dm::gelu(testing::dot(s.map_w1.row(j), s.prompts.row(i)) + s.map_b1.values[j]);
        for (std::size_t k = 0; k < 3; ++k) expected[k] += (testing::dot(s.map_w2.row(k), h) + s.map_b2.values[k]) / 4.0;
    }
    const auto shift = compute_shift(s);
    for (std::size_t k = 0; k < 3; ++k) CHECK(shift.values[k] == doctest::Approx(expected[k]).epsilon(1e-12));
}

TEST_CASE("squared shift norm and text cosine have correct prompt gradients") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto rng = make_stream(seed, {3});
        const auto text = small_text(2, 6, 4, seed);
        auto s = init_prompt_state(text, 1.0, seed);
        s.map_w2 = testing::random_tensor(4, 12, rng, 0.3);
        s.prompts = testing::random_tensor(4, 6, rng, 0.5);
        auto params = s.params();
        const dm::LossBuilder shift_norm = [](dm::Graph& g, const dm::VarMap& v) { return g.sum(g.square(compute_shift(g, v))); };
        CHECK(dm::finite_diff_check(shift_norm, params) < 1e-4);

        const dm::Tensor x = testing::random_tensor(1, 4, rng);
        const std::vector<std::string> one{"class1"};
        const dm::LossBuilder cos = [&](dm::Graph& g, const dm::VarMap& v) {
            return g.sum(g.cosine(g.constant(x), text.features(g, v.at("prompts"), one)));
        };
        CHECK(dm::finite_diff_check(cos, {{"prompts", params.at("prompts")}}) < 1e-4);
    }
}

TEST_CASE("enhance_features") {
    const auto text = small_text(2, 4, 2);
    auto s = init_prompt_state(text, 1.0, 0);
    EmbeddingSet x(2, {"a", "b"});
    const float e1[] = {1.0f, 0.0f};
    x.add(1, std::span<const float>(e1));

    CHECK(bit_equal(enhance_features(x, s), x));  // zero shift
    s.map_b2 = dm::Tensor(1, 2, std::vector<double>{0.0, 1.0});
    const auto shifted = enhance_features(x, s);
    CHECK(shifted.row(0)[0] == doctest::Approx(0.707107).epsilon(1e-6));
    CHECK(shifted.row(0)[1] == doctest::Approx(0.707107).epsilon(1e-6));
    CHECK(shifted.labels == x.labels);
    s.alpha = 0.0;
    CHECK(bit_equal(enhance_features(x, s), x));

    EmbeddingSet wrong(3, {"a"});
    CHECK_THROWS_AS(enhance_features(wrong, s), FlptError);
}

TEST_CASE("the shift does not depend on the class") {
    auto rng = make_stream(4);
    const auto text = small_text(2, 4, 3);
    auto s = init_prompt_state(text, 0.7, 0);
    s.map_b2 = testing::random_tensor(1, 3, rng);
    EmbeddingSet x(3, {"a", "b"});
    const float v[] = {0.2f, -0.4f, 0.5f};
    x.add(0, std::span<const float>(v));
    x.add(1, std::span<const float>(v));
    const auto out = enhance_features(x, s);
    for (std::size_t k = 0; k < 3; ++k) CHECK(out.row(0)[k] == out.row(1)[k]);
}

TEST_CASE("class text features are unit norm and distinct") {
    const auto names = names_of(100);
    const auto text = TextModel::prompted(synthetic_token_table(names, 16, 5), 8);
    const auto s = init_prompt_state(text, 1.0, 5);
    std::vector<std::vector<double>> t;
    for (const auto& n : names) {
        t.push_back(encode_class_text(text, s, n));
        CHECK(std::abs(std::sqrt(testing::dot(t.back(), t.back())) - 1.0) < 1e-6);
    }
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(testing::dot(t[0], t[i]) < 1.0 - 1e-6);
    CHECK_THROWS_AS(encode_class_text(text, s, "missing"), FlptError);
}

TEST_CASE("prompt loss") {
    const double pi = std::numbers::pi;
    // every text direction makes the same angle with x
    dm::Tensor equal(4, 3);
    for (std::size_t c = 0; c < 4; ++c) {
        equal(c, 0) = 0.5;
        equal(c, 1) = std::cos(c * pi / 2.0);
        equal(c, 2) = std::sin(c * pi / 2.0);
    }
    const std::vector<double> up{1.0, 0.0, 0.0};
    CHECK(flpt_loss(up, 2, equal, 0.01) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(flpt_loss(up, 2, equal, 0.01) == doctest::Approx(1.386294).epsilon(1e-6));

    dm::Tensor sat(3, 2, std::vector<double>{1, 0, -1, 0, -1, 0});
    const std::vector<double> x{1.0, 0.0};
    CHECK(flpt_loss(x, 0, sat, 0.01) < 1e-80);
    CHECK(flpt_loss(x, 0, sat, 0.01) >= 0.0);

    // cosines 0.6 (correct) and 0.4
    dm::Tensor two(2, 2);
    two(0, 0) = 0.6;
    two(0, 1) = 0.8;
    two(1, 0) = 0.4;
    two(1, 1) = std::sqrt(1.0 - 0.16);
    CHECK(flpt_loss(x, 0, two, 1.0) == doctest::Approx(std::log1p(std::exp(-0.2))).epsilon(1e-12));
    CHECK(flpt_loss(x, 0, two, 1.0) == doctest::Approx(0.598139).epsilon(1e-6));

    for (double k : {0.5, 2.0}) {
        auto rng = make_stream(static_cast<std::uint64_t>(k * 10));
        const auto t = testing::random_prototypes(5, 6, rng);
        const auto v = testing::random_tensor(1, 6, rng);
        std::vector<double> a(v.values), b(v.values);
        for (double& e : b) e *= k;
        CHECK(std::abs(flpt_loss(a, 3, t.directions, 0.01) - flpt_loss(b, 3, t.directions, 0.01)) < 1e-9);
    }
    CHECK_THROWS_AS(flpt_loss(x, 5, two, 1.0), FlptError);
    const std::vector<double> bad{NAN, 0.0};
    CHECK_THROWS_AS(flpt_loss(bad, 0, two, 1.0), FlptError);
}

TEST_CASE("prompt gradients are nonzero at a generic initialization") {
    auto rng = make_stream(6);
    const auto names = names_of(3);
    const auto text = small_text(3, 8, 5, 6);
    const auto s = init_prompt_state(text, 1.0, 6);
    auto x = testing::random_tensor(9, 5, rng);
    dm::normalize_rows(x);
    const std::vector<std::uint32_t> labels{0, 1, 2, 0, 1, 2, 0, 1, 2};
    const auto r = dm::eval_with_grad(
        [&](dm::Graph& g, const dm::VarMap& v) {
            const auto xh = g.add_row(g.constant(x), compute_shift(g, v));
            return g.softmax_cross_entropy(g.cosine(xh, text.features(g, v.at("prompts"), names)), labels, 0.01);
        },
        s.params());
    double norm = 0.0;
    for (double v : r.grads.at("prompts").values) norm += v * v;
    CHECK(norm > 0.0);
    double map_norm = 0.0;
    for (double v : r.grads.at("map_w2").values) map_norm += v * v;
    CHECK(map_norm > 0.0);
}

TEST_CASE("zero epochs keeps the initialization") {
    auto rng = make_stream(7);
    const auto protos = testing::random_prototypes(3, 5, rng);
    auto text = TextModel::prompted(synthetic_token_table(protos.class_names, 8, 7), 5);
    const auto virt = sample_vmf_all({protos, 20.0, 1.0}, 10, 7);
    FlptConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 7;
    const auto r = train_flpt(virt, text, cfg);
    const auto init = init_prompt_state(text, cfg.alpha, cfg.seed);
    CHECK(r.state.prompts.values == init.prompts.values);
    CHECK(r.state.map_w1.values == init.map_w1.values);
    CHECK(bit_equal(r.enhanced, virt));
    CHECK(r.epoch_losses.empty());
}

TEST_CASE("training is deterministic and rejects empty input") {
    auto rng = make_stream(8);
    const auto protos = testing::random_prototypes(3, 5, rng);
    auto text = TextModel::prompted(synthetic_token_table(protos.class_names, 8, 8), 5);
    const auto virt = sample_vmf_all({protos, 20.0, 1.0}, 20, 8);
    FlptConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 8;
    const auto a = train_flpt(virt, text, cfg), b = train_flpt(virt, text, cfg);
    CHECK(a.state.prompts.values == b.state.prompts.values);
    CHECK(a.state.map_w2.values == b.state.map_w2.values);
    CHECK(bit_equal(a.enhanced, b.enhanced));
    CHECK_THROWS_AS(train_flpt(EmbeddingSet(5, protos.class_names), text, cfg), FlptError);
}

TEST_CASE("frozen text mode only learns the shift") {
    auto rng = make_stream(9);
    const auto protos = testing::random_prototypes(3, 5, rng);
    const auto text = TextModel::frozen(protos);
    CHECK_FALSE(text.tunable());
    const auto virt = sample_vmf_all({protos, 20.0, 1.0}, 20, 9);
    FlptConfig cfg;
    cfg.epochs = 2;
    const auto r = train_flpt(virt, text, cfg);
    const auto before = text.features(init_prompt_state(text, cfg.alpha, cfg.seed), protos.class_names);
    const auto after = text.features(r.state, protos.class_names);
    CHECK(after.directions.values == before.directions.values);
    for (std::size_t i = 0; i < protos.directions.size(); ++i)
        CHECK(std::abs(after.directions.values[i] - protos.directions.values[i]) < 1e-12);
    double moved = 0.0;
    for (double v : r.state.map_w2.values) moved += std::abs(v);
    CHECK(moved > 0.0);
}

TEST_CASE("token table JSON round-trips") {
    const auto dir = testing::scratch("token_table");
    auto t = synthetic_token_table(names_of(3), 4, 1);
    t.encoder_seed = 99;
    t.prefix = std::array<std::vector<double>, kNumPrompts>{std::vector<double>(4, 0.1), std::vector<double>(4, 0.2),
                                                            std::vector<double>(4, 0.3), std::vector<double>(4, 0.4)};
    write_token_table(t, dir / "t.json");
    const auto back = read_token_table(dir / "t.json");
    CHECK(back.dim == 4);
    CHECK(back.classes == t.classes);
    CHECK(back.encoder_seed == 99);
    CHECK((*back.prefix)[3] == (*t.prefix)[3]);
}

TEST_CASE("prompt state round-trips") {
    auto rng = make_stream(10);
    const auto dir = testing::scratch("prompt_state");
    auto s = init_prompt_state(small_text(2, 4, 3), 0.5, 1);
    s.map_w2 = testing::random_tensor(3, 8, rng);
    write_prompt_state(s, dir / "p.json");
    const auto back = read_prompt_state(dir / "p.json");
    CHECK(back.map_w2.values == s.map_w2.values);
    CHECK(back.alpha == 0.5);
}

TEST_CASE("benchmark: loss drops and held-out nearest-text accuracy does not get worse") {
    const auto& b = testing::default_benchmark();
    // stage seeds the pipeline derives from the benchmark's top-level seed
    RecoveryConfig rc;
    rc.seed = derive_seed(b.spec.seed, {1});
    const auto virt = recover_whitebox(b.server_weights, rc).virtual_base;
    const auto text = TextModel::prompted(b.tokens, b.spec.dim);
    FlptConfig cfg;
    cfg.seed = derive_seed(b.spec.seed, {2});
    const auto r = train_flpt(virt, text, cfg);
    REQUIRE(!r.epoch_losses.empty());
    CHECK(r.epoch_losses.back() < 0.9 * r.initial_loss);

    const auto held_out = apply_split(b.test, b.split).base;
    const auto init = init_prompt_state(text, cfg.alpha, cfg.seed);
    const double before = nearest_text_accuracy(enhance_features(held_out, init), text.features(init, held_out.class_names));
    const double after = nearest_text_accuracy(enhance_features(held_out, r.state), text.features(r.state, held_out.class_names));
    MESSAGE("nearest-text accuracy before " << before << " after " << after);
    CHECK(after >= before);
}

}

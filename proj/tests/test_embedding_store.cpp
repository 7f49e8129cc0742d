#include <cmath>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "dfzsl/embedding_store.hpp"
#include "helpers.hpp"

using namespace dfzsl;

namespace {

EmbeddingSet random_set(std::uint64_t seed) {
    Rng rng = make_stream(seed, {11});
    std::uniform_int_distribution<std::uint32_t> dim(1, 20), classes(1, 6), count(0, 40);
    std::normal_distribution<float> n;
    const std::uint32_t d = dim(rng), c = classes(rng);
    std::vector<std::string> names;
    for (std::uint32_t i = 0; i < c; ++i) names.push_back("class_" + std::to_string(i) + (i % 2 ? "\xC3\xA9" : ""));
    EmbeddingSet s(d, names);
    std::uniform_int_distribution<std::uint32_t> label(0, c - 1);
    const auto records = count(rng);
    std::vector<float> v(d);
    for (std::uint32_t i = 0; i < records; ++i) {
        for (float& x : v) x = n(rng);
        s.add(label(rng), std::span<const float>(v));
    }
    return s;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::uint32_t u32_at(const std::vector<std::uint8_t>& b, std::size_t off) {
    return b[off] | (b[off + 1] << 8) | (b[off + 2] << 16) | (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

template <class F>
EmbErrorKind error_kind(F&& f) {
    try {
        f();
    } catch (const EmbError& e) {
        return e.kind();
    }
    FAIL("no EmbError thrown");
    return EmbErrorKind::io;
}

}  // namespace

TEST_SUITE("embedding_store") {

TEST_CASE("small set has the documented layout and round-trips") {
    const auto dir = testing::scratch("emb_layout");
    EmbeddingSet s(3, {"ab", "c"});
    const float r0[] = {1.0f, 2.0f, 3.0f}, r1[] = {-0.5f, 0.25f, 8.0f};
    s.add(1, std::span<const float>(r0));
    s.add(0, std::span<const float>(r1));
    write_emb1(s, dir / "s.emb1");
    const auto b = file_bytes(dir / "s.emb1");
    CHECK(std::memcmp(b.data(), "EMB1", 4) == 0);
    CHECK(u32_at(b, 4) == 1);
    CHECK(u32_at(b, 8) == 3);
    CHECK(u32_at(b, 12) == 2);
    CHECK(u32_at(b, 16) == 2);
    CHECK(u32_at(b, 20) == 2);
    CHECK(std::memcmp(b.data() + 24, "ab", 2) == 0);
    CHECK(u32_at(b, 26) == 1);
    CHECK(b[30] == 'c');
    CHECK(u32_at(b, 31) == 1);
    float first;
    std::memcpy(&first, b.data() + 35, 4);
    CHECK(first == 1.0f);
    CHECK(b.size() == 31 + 2 * (4 + 12));
    CHECK(bit_equal(read_emb1(dir / "s.emb1"), s));
}

TEST_CASE("empty record list round-trips") {
    const auto dir = testing::scratch("emb_empty");
    EmbeddingSet s(4, {"only"});
    write_emb1(s, dir / "e.emb1");
    const auto back = read_emb1(dir / "e.emb1");
    CHECK(back.empty());
    CHECK(back.class_names == s.class_names);
    CHECK(back.dim == 4);
}

TEST_CASE("file size is header plus names plus records") {
    const auto dir = testing::scratch("emb_size");
    Rng rng = make_stream(3);
    std::normal_distribution<float> n;
    EmbeddingSet s(512, {"alpha", "beta", "gamma"});
    std::vector<float> v(512);
    for (int i = 0; i < 10000; ++i) {
        for (float& x : v) x = n(rng);
        s.add(static_cast<std::uint32_t>(i % 3), std::span<const float>(v));
    }
    write_emb1(s, dir / "big.emb1");
    const std::size_t expected = 20 + (4 + 5) + (4 + 4) + (4 + 5) + 10000ull * (4 + 4 * 512);
    CHECK(std::filesystem::file_size(dir / "big.emb1") == expected);
    CHECK(emb1_size(s) == expected);
    CHECK(bit_equal(read_emb1(dir / "big.emb1"), s));
}

TEST_CASE("random sets round-trip byte-identically") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto s = random_set(seed);
        const auto bytes = encode_emb1(s);
        const auto back = decode_emb1(bytes);
        CHECK(bit_equal(back, s));
        CHECK(encode_emb1(back) == bytes);
    }
}

TEST_CASE("decode errors are distinct categories") {
    EmbeddingSet s(2, {"a", "b"});
    const float r[] = {1.0f, 0.0f};
    s.add(1, std::span<const float>(r));
    const auto good = encode_emb1(s);

    auto bad_magic = good;
    std::memcpy(bad_magic.data(), "XXXX", 4);
    CHECK(error_kind([&] { decode_emb1(bad_magic); }) == EmbErrorKind::bad_magic);

    auto bad_version = good;
    bad_version[4] = 2;
    CHECK(error_kind([&] { decode_emb1(bad_version); }) == EmbErrorKind::unsupported_version);

    auto bad_index = good;
    bad_index[good.size() - 12] = 2;  // class index of the only record
    CHECK(error_kind([&] { decode_emb1(bad_index); }) == EmbErrorKind::bad_class_index);

    auto trailing = good;
    trailing.push_back(0);
    CHECK(error_kind([&] { decode_emb1(trailing); }) == EmbErrorKind::trailing_data);
}

TEST_CASE("truncation mid-record names the byte offset") {
    const auto dir = testing::scratch("emb_trunc");
    EmbeddingSet s(2, {"a", "b"});
    const float r[] = {1.0f, 0.0f};
    s.add(1, std::span<const float>(r));
    auto bytes = encode_emb1(s);
    bytes.resize(bytes.size() - 3);
    {
        std::ofstream out(dir / "t.emb1", std::ios::binary);
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    try {
        read_emb1(dir / "t.emb1");
        FAIL("expected truncation");
    } catch (const EmbError& e) {
        CHECK(e.kind() == EmbErrorKind::truncated);
        // the record starts at 20 + 5 + 5 = 30
        INFO(std::string(e.what()));
        CHECK(std::string(e.what()).find("offset 30") != std::string::npos);
    }
}

TEST_CASE("write rejects invalid sets and unwritable paths") {
    EmbeddingSet no_dim;
    no_dim.class_names = {"a"};
    CHECK(error_kind([&] { encode_emb1(no_dim); }) == EmbErrorKind::invalid_set);
    EmbeddingSet no_classes;
    no_classes.dim = 3;
    CHECK(error_kind([&] { encode_emb1(no_classes); }) == EmbErrorKind::invalid_set);
    EmbeddingSet ok(1, {"a"});
    CHECK(error_kind([&] { write_emb1(ok, "/nonexistent_dir/x/y.emb1"); }) == EmbErrorKind::io);
}

TEST_CASE("normalize") {
    EmbeddingSet s(2, {"a"});
    const float v[] = {3.0f, 4.0f}, u[] = {0.0f, 1.0f};
    s.add(0, std::span<const float>(v));
    s.add(0, std::span<const float>(u));
    const auto n = normalize(s);
    CHECK(n.row(0)[0] == doctest::Approx(0.6).epsilon(1e-7));
    CHECK(n.row(0)[1] == doctest::Approx(0.8).epsilon(1e-7));
    CHECK(n.row(1)[0] == 0.0f);
    CHECK(n.row(1)[1] == 1.0f);

    EmbeddingSet z(2, {"a"});
    const float zero[] = {0.0f, 0.0f};
    z.add(0, std::span<const float>(u));
    z.add(0, std::span<const float>(zero));
    try {
        normalize(z);
        FAIL("expected zero-vector error");
    } catch (const EmbError& e) {
        CHECK(e.kind() == EmbErrorKind::zero_vector);
        CHECK(std::string(e.what()).find("record 1") != std::string::npos);
    }
}

TEST_CASE("normalize keeps directions and is idempotent") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto s = random_set(seed);
        const auto once = normalize(s);
        const auto twice = normalize(once);
        for (std::size_t i = 0; i < s.size(); ++i) {
            double dot = 0, na = 0, nb = 0, norm = 0;
            for (std::size_t k = 0; k < s.dim; ++k) {
                dot += double(s.row(i)[k]) * once.row(i)[k];
                na += double(s.row(i)[k]) * s.row(i)[k];
                nb += double(once.row(i)[k]) * once.row(i)[k];
                norm += double(once.row(i)[k]) * once.row(i)[k];
                CHECK(std::abs(twice.row(i)[k] - once.row(i)[k]) <= 1e-7);
            }
            CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
            CHECK(dot / std::sqrt(na * nb) == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("apply_split partitions by class and keeps vectors") {
    EmbeddingSet s(2, {"a", "b", "c"});
    for (std::uint32_t i = 0; i < 9; ++i) {
        const float v[] = {static_cast<float>(i), 1.0f};
        s.add(i % 3, std::span<const float>(v));
    }
    SplitSpec split{{"b", "a"}, {"c"}};
    const auto parts = apply_split(s, split);
    CHECK(parts.base.class_names == std::vector<std::string>{"b", "a"});
    CHECK(parts.novel.class_names == std::vector<std::string>{"c"});
    CHECK(parts.base.size() + parts.novel.size() == s.size());
    for (std::size_t i = 0; i < parts.base.size(); ++i) {
        const auto& name = parts.base.class_names[parts.base.labels[i]];
        const auto orig = static_cast<std::uint32_t>(parts.base.row(i)[0]);
        CHECK(s.class_names[orig % 3] == name);
    }
    for (std::size_t i = 0; i < parts.novel.size(); ++i) CHECK(static_cast<int>(parts.novel.row(i)[0]) % 3 == 2);
}

TEST_CASE("split errors") {
    EmbeddingSet s(1, {"a", "b"});
    CHECK(error_kind([&] { apply_split(s, SplitSpec{{"a"}, {"a"}}); }) == EmbErrorKind::split_overlap);
    CHECK(error_kind([&] { apply_split(s, SplitSpec{{"a"}, {"zzz"}}); }) == EmbErrorKind::unknown_class);
    CHECK(error_kind([&] { parse_split(R"({"base": ["a"]})"); }) == EmbErrorKind::invalid_set);
}

TEST_CASE("split JSON round-trips") {
    const auto dir = testing::scratch("split_json");
    SplitSpec s{{"x", "y"}, {"z"}};
    write_split(s, dir / "split.json");
    const auto back = read_split(dir / "split.json");
    CHECK(back.base == s.base);
    CHECK(back.novel == s.novel);
    CHECK(parse_split(dump_split(s)).novel == s.novel);
}

TEST_CASE("select and merge join by name") {
    EmbeddingSet a(1, {"p", "q"}), b(1, {"q", "r"});
    const float one[] = {1.0f}, two[] = {2.0f};
    a.add(0, std::span<const float>(one));
    b.add(0, std::span<const float>(two));
    b.add(1, std::span<const float>(one));
    const auto m = merge(a, b);
    CHECK(m.class_names == std::vector<std::string>{"p", "q", "r"});
    CHECK(m.labels == std::vector<std::uint32_t>{0, 1, 2});
    const std::vector<std::string> keep{"r", "p"};
    const auto sel = select_classes(m, keep);
    CHECK(sel.class_names == keep);
    CHECK(sel.labels == std::vector<std::uint32_t>{1, 0});
}

}

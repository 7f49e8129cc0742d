#include "dfzsl/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace dfzsl {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 4 + 4 * 4;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

    void need(std::size_t n, const char* what) const {
        if (remaining() < n) {
            std::ostringstream os;
            os << "EMB1 truncated at byte offset " << pos_ << " while reading " << what << " (need " << n
               << " bytes, have " << remaining() << ")";
            throw EmbError(EmbErrorKind::truncated, os.str());
        }
    }

    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void check_class_table(const std::vector<std::string>& names) {
    std::set<std::string_view> seen;
    for (const auto& n : names) {
        if (n.empty()) throw EmbError(EmbErrorKind::invalid_set, "empty class name");
        if (!seen.insert(n).second) throw EmbError(EmbErrorKind::invalid_set, "duplicate class name '" + n + "'");
    }
}

}  // namespace

const char* to_string(EmbErrorKind kind) {
    switch (kind) {
        case EmbErrorKind::io: return "io";
        case EmbErrorKind::bad_magic: return "bad_magic";
        case EmbErrorKind::unsupported_version: return "unsupported_version";
        case EmbErrorKind::bad_class_index: return "bad_class_index";
        case EmbErrorKind::truncated: return "truncated";
        case EmbErrorKind::trailing_data: return "trailing_data";
        case EmbErrorKind::invalid_set: return "invalid_set";
        case EmbErrorKind::zero_vector: return "zero_vector";
        case EmbErrorKind::unknown_class: return "unknown_class";
        case EmbErrorKind::split_overlap: return "split_overlap";
    }
    return "unknown";
}

EmbError::EmbError(EmbErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

EmbeddingSet::EmbeddingSet(std::uint32_t d, std::vector<std::string> names) : dim(d), class_names(std::move(names)) {}

std::span<const float> EmbeddingSet::row(std::size_t i) const { return {values.data() + i * dim, dim}; }

std::span<float> EmbeddingSet::row(std::size_t i) { return {values.data() + i * dim, dim}; }

void EmbeddingSet::add(std::uint32_t label, std::span<const float> vec) {
    if (vec.size() != dim) throw EmbError(EmbErrorKind::invalid_set, "vector dimension does not match set dimension");
    if (label >= class_names.size()) throw EmbError(EmbErrorKind::bad_class_index, "label out of range");
    labels.push_back(label);
    values.insert(values.end(), vec.begin(), vec.end());
}

void EmbeddingSet::add(std::uint32_t label, std::span<const double> vec) {
    std::vector<float> tmp(vec.begin(), vec.end());
    add(label, std::span<const float>(tmp));
}

std::optional<std::uint32_t> EmbeddingSet::class_index(std::string_view name) const {
    for (std::size_t i = 0; i < class_names.size(); ++i)
        if (class_names[i] == name) return static_cast<std::uint32_t>(i);
    return std::nullopt;
}

std::uint32_t EmbeddingSet::require_class(std::string_view name) const {
    auto idx = class_index(name);
    if (!idx) throw EmbError(EmbErrorKind::unknown_class, "unknown class name '" + std::string(name) + "'");
    return *idx;
}

std::vector<std::size_t> EmbeddingSet::class_counts() const {
    std::vector<std::size_t> counts(class_names.size(), 0);
    for (auto l : labels) ++counts.at(l);
    return counts;
}

void EmbeddingSet::validate() const {
    if (dim == 0) throw EmbError(EmbErrorKind::invalid_set, "dimension must be positive");
    if (class_names.empty()) throw EmbError(EmbErrorKind::invalid_set, "class table is empty");
    check_class_table(class_names);
    if (values.size() != labels.size() * dim)
        throw EmbError(EmbErrorKind::invalid_set, "value count does not match records x dim");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] >= class_names.size())
            throw EmbError(EmbErrorKind::bad_class_index, "record " + std::to_string(i) + " has class index " +
                                                              std::to_string(labels[i]) + " >= class count");
}

bool bit_equal(const EmbeddingSet& a, const EmbeddingSet& b) {
    return a.dim == b.dim && a.class_names == b.class_names && a.labels == b.labels &&
           a.values.size() == b.values.size() &&
           std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) == 0;
}

std::size_t emb1_size(const EmbeddingSet& set) {
    std::size_t n = kHeaderBytes;
    for (const auto& name : set.class_names) n += 4 + name.size();
    n += set.size() * (4 + 4 * static_cast<std::size_t>(set.dim));
    return n;
}

std::vector<std::uint8_t> encode_emb1(const EmbeddingSet& set) {
    set.validate();
    std::vector<std::uint8_t> out;
    out.reserve(emb1_size(set));
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, kVersion);
    put_u32(out, set.dim);
    put_u32(out, static_cast<std::uint32_t>(set.class_names.size()));
    put_u32(out, static_cast<std::uint32_t>(set.size()));
    for (const auto& name : set.class_names) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
    }
    for (std::size_t i = 0; i < set.size(); ++i) {
        put_u32(out, set.labels[i]);
        for (float v : set.row(i)) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
    return out;
}

EmbeddingSet decode_emb1(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw EmbError(EmbErrorKind::bad_magic, "not an EMB1 file (bad magic)");
    r.str(4, "magic");
    const auto version = r.u32("version");
    if (version != kVersion)
        throw EmbError(EmbErrorKind::unsupported_version, "unsupported EMB1 version " + std::to_string(version));
    EmbeddingSet set;
    set.dim = r.u32("dim");
    const auto num_classes = r.u32("class_count");
    const auto num_records = r.u32("record_count");
    if (set.dim == 0) throw EmbError(EmbErrorKind::invalid_set, "EMB1 dimension is zero");
    if (num_classes == 0) throw EmbError(EmbErrorKind::invalid_set, "EMB1 class count is zero");
    set.class_names.reserve(num_classes);
    for (std::uint32_t c = 0; c < num_classes; ++c) {
        const auto len = r.u32("class name length");
        set.class_names.push_back(r.str(len, "class name"));
    }
    check_class_table(set.class_names);
    const std::size_t record_bytes = 4 + 4 * static_cast<std::size_t>(set.dim);
    // Reserve only what the payload can actually hold.
    const std::size_t fits = r.remaining() / record_bytes;
    set.labels.reserve(std::min<std::size_t>(num_records, fits));
    set.values.reserve(std::min<std::size_t>(num_records, fits) * set.dim);
    for (std::uint32_t i = 0; i < num_records; ++i) {
        const std::size_t at = r.offset();
        r.need(record_bytes, "record");
        const auto label = r.u32("class index");
        if (label >= num_classes) {
            std::ostringstream os;
            os << "record " << i << " at byte offset " << at << " has class index " << label << " >= class count "
               << num_classes;
            throw EmbError(EmbErrorKind::bad_class_index, os.str());
        }
        set.labels.push_back(label);
        for (std::uint32_t k = 0; k < set.dim; ++k) set.values.push_back(r.f32("vector"));
    }
    if (r.remaining() != 0)
        throw EmbError(EmbErrorKind::trailing_data,
                       std::to_string(r.remaining()) + " unexpected bytes after last record at offset " +
                           std::to_string(r.offset()));
    return set;
}

void write_emb1(const EmbeddingSet& set, const std::filesystem::path& path) {
    const auto bytes = encode_emb1(set);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw EmbError(EmbErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw EmbError(EmbErrorKind::io, "write failed for '" + path.string() + "'");
}

EmbeddingSet read_emb1(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EmbError(EmbErrorKind::io, "cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_emb1(bytes);
    } catch (const EmbError& e) {
        throw EmbError(e.kind(), path.string() + ": " + e.what());
    }
}

EmbeddingSet normalize(const EmbeddingSet& set) {
    EmbeddingSet out = set;
    for (std::size_t i = 0; i < out.size(); ++i) {
        auto r = out.row(i);
        double sq = 0.0;
        for (float v : r) sq += static_cast<double>(v) * v;
        if (!(sq > 0.0))
            throw EmbError(EmbErrorKind::zero_vector, "record " + std::to_string(i) + " is a zero vector");
        const double inv = 1.0 / std::sqrt(sq);
        for (float& v : r) v = static_cast<float>(v * inv);
    }
    return out;
}

void SplitSpec::validate() const {
    if (base.empty() || novel.empty()) throw EmbError(EmbErrorKind::invalid_set, "split lists must both be non-empty");
    std::set<std::string_view> b;
    for (const auto& n : base)
        if (!b.insert(n).second) throw EmbError(EmbErrorKind::invalid_set, "duplicate base class '" + n + "'");
    std::set<std::string_view> nv;
    for (const auto& n : novel) {
        if (!nv.insert(n).second) throw EmbError(EmbErrorKind::invalid_set, "duplicate new class '" + n + "'");
        if (b.count(n)) throw EmbError(EmbErrorKind::split_overlap, "class '" + n + "' is both base and new");
    }
}

SplitSpec parse_split(std::string_view json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
        throw EmbError(EmbErrorKind::invalid_set, std::string("split JSON: ") + e.what());
    }
    if (!j.is_object() || !j.contains("base") || !j.contains("new"))
        throw EmbError(EmbErrorKind::invalid_set, "split JSON needs \"base\" and \"new\" arrays");
    SplitSpec s;
    try {
        s.base = j.at("base").get<std::vector<std::string>>();
        s.novel = j.at("new").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw EmbError(EmbErrorKind::invalid_set, std::string("split JSON: ") + e.what());
    }
    s.validate();
    return s;
}

std::string dump_split(const SplitSpec& split) {
    nlohmann::ordered_json j;
    j["base"] = split.base;
    j["new"] = split.novel;
    return j.dump(2) + "\n";
}

SplitSpec read_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw EmbError(EmbErrorKind::io, "cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_split(ss.str());
}

void write_split(const SplitSpec& split, const std::filesystem::path& path) {
    split.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw EmbError(EmbErrorKind::io, "cannot open '" + path.string() + "' for writing");
    out << dump_split(split);
}

EmbeddingSet select_classes(const EmbeddingSet& set, std::span<const std::string> names) {
    std::vector<std::int64_t> remap(set.num_classes(), -1);
    for (std::size_t i = 0; i < names.size(); ++i) remap[set.require_class(names[i])] = static_cast<std::int64_t>(i);
    EmbeddingSet out(set.dim, std::vector<std::string>(names.begin(), names.end()));
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto m = remap[set.labels[i]];
        if (m >= 0) out.add(static_cast<std::uint32_t>(m), set.row(i));
    }
    return out;
}

SplitSets apply_split(const EmbeddingSet& set, const SplitSpec& split) {
    split.validate();
    for (const auto& n : split.base) set.require_class(n);
    for (const auto& n : split.novel) set.require_class(n);
    return {select_classes(set, split.base), select_classes(set, split.novel)};
}

EmbeddingSet merge(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.dim != b.dim) throw EmbError(EmbErrorKind::invalid_set, "cannot merge sets of different dimension");
    EmbeddingSet out = a;
    std::vector<std::uint32_t> remap(b.num_classes());
    for (std::size_t c = 0; c < b.num_classes(); ++c) {
        auto idx = out.class_index(b.class_names[c]);
        if (!idx) {
            out.class_names.push_back(b.class_names[c]);
            idx = static_cast<std::uint32_t>(out.class_names.size() - 1);
        }
        remap[c] = *idx;
    }
    for (std::size_t i = 0; i < b.size(); ++i) out.add(remap[b.labels[i]], b.row(i));
    return out;
}

}  // namespace dfzsl

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dfzsl {

enum class EmbErrorKind {
    io,
    bad_magic,
    unsupported_version,
    bad_class_index,
    truncated,
    trailing_data,
    invalid_set,
    zero_vector,
    unknown_class,
    split_overlap,
};

const char* to_string(EmbErrorKind kind);

class EmbError : public std::runtime_error {
public:
    EmbError(EmbErrorKind kind, const std::string& what);
    EmbErrorKind kind() const noexcept { return kind_; }

private:
    EmbErrorKind kind_;
};

// Labeled feature vectors stored row-major as 32-bit floats.
struct EmbeddingSet {
    std::uint32_t dim = 0;
    std::vector<std::string> class_names;
    std::vector<std::uint32_t> labels;
    std::vector<float> values;

    EmbeddingSet() = default;
    EmbeddingSet(std::uint32_t dim, std::vector<std::string> class_names);

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t num_classes() const noexcept { return class_names.size(); }
    bool empty() const noexcept { return labels.empty(); }

    std::span<const float> row(std::size_t i) const;
    std::span<float> row(std::size_t i);

    void add(std::uint32_t label, std::span<const float> vec);
    void add(std::uint32_t label, std::span<const double> vec);

    std::optional<std::uint32_t> class_index(std::string_view name) const;
    std::uint32_t require_class(std::string_view name) const;

    // Number of records per class, indexed by class.
    std::vector<std::size_t> class_counts() const;

    // Throws EmbError(invalid_set / bad_class_index) when an invariant is broken.
    void validate() const;
};

// Same class table, same labels, same float bit patterns.
bool bit_equal(const EmbeddingSet& a, const EmbeddingSet& b);

void write_emb1(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_emb1(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_emb1(const EmbeddingSet& set);
EmbeddingSet decode_emb1(std::span<const std::uint8_t> bytes);

// Exact on-disk size of an EMB1 file for the given set.
std::size_t emb1_size(const EmbeddingSet& set);

EmbeddingSet normalize(const EmbeddingSet& set);

struct SplitSpec {
    std::vector<std::string> base;
    std::vector<std::string> novel;

    void validate() const;
};

SplitSpec read_split(const std::filesystem::path& path);
void write_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec parse_split(std::string_view json_text);
std::string dump_split(const SplitSpec& split);

struct SplitSets {
    EmbeddingSet base;
    EmbeddingSet novel;
};

// Records of classes named in neither list are dropped. Output class tables
// follow the order of the split lists.
SplitSets apply_split(const EmbeddingSet& set, const SplitSpec& split);

// Keep only the named classes, re-indexed in the order given.
EmbeddingSet select_classes(const EmbeddingSet& set, std::span<const std::string> names);

// Concatenate two sets; the class table is a's names followed by b's unseen names.
EmbeddingSet merge(const EmbeddingSet& a, const EmbeddingSet& b);

}  // namespace dfzsl

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dfzsl/diffmath.hpp"
#include "dfzsl/embedding_store.hpp"

namespace dfzsl {

// One unit direction per class (classifier weights, text features or learned
// mean directions), stored as a C x d matrix.
struct ClassPrototypes {
    std::vector<std::string> class_names;
    dm::Tensor directions;

    std::size_t size() const noexcept { return class_names.size(); }
    std::size_t dim() const noexcept { return directions.cols; }
    std::span<const double> row(std::size_t c) const { return directions.row(c); }

    std::size_t index_of(std::string_view name) const;

    // Rows rescaled to unit norm; throws on a zero row.
    ClassPrototypes normalized() const;
    ClassPrototypes select(std::span<const std::string> names) const;
};

// Expects exactly one record per class, as written for weights and text
// feature files. Rows are normalized.
ClassPrototypes prototypes_from_set(const EmbeddingSet& set);

// Each class becomes one record labelled with its own index.
EmbeddingSet prototypes_to_set(const ClassPrototypes& protos);

ClassPrototypes concat(const ClassPrototypes& a, const ClassPrototypes& b);

// Records of `set` as a dense N x d matrix.
dm::Tensor to_tensor(const EmbeddingSet& set);

}  // namespace dfzsl

#include "dfzsl/prototypes.hpp"

#include <algorithm>

namespace dfzsl {

std::size_t ClassPrototypes::index_of(std::string_view name) const {
    for (std::size_t i = 0; i < class_names.size(); ++i)
        if (class_names[i] == name) return i;
    throw EmbError(EmbErrorKind::unknown_class, "no prototype for class '" + std::string(name) + "'");
}

ClassPrototypes ClassPrototypes::normalized() const {
    ClassPrototypes out = *this;
    dm::normalize_rows(out.directions);
    return out;
}

ClassPrototypes ClassPrototypes::select(std::span<const std::string> names) const {
    ClassPrototypes out;
    out.directions = dm::Tensor(names.size(), dim());
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto src = row(index_of(names[i]));
        std::copy(src.begin(), src.end(), out.directions.row(i).begin());
        out.class_names.push_back(names[i]);
    }
    return out;
}

ClassPrototypes prototypes_from_set(const EmbeddingSet& set) {
    set.validate();
    const auto counts = set.class_counts();
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] != 1)
            throw EmbError(EmbErrorKind::invalid_set, "class '" + set.class_names[c] + "' has " +
                                                          std::to_string(counts[c]) + " rows, expected exactly one");
    ClassPrototypes p;
    p.class_names = set.class_names;
    p.directions = dm::Tensor(set.num_classes(), set.dim);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const auto r = set.row(i);
        std::copy(r.begin(), r.end(), p.directions.row(set.labels[i]).begin());
    }
    try {
        dm::normalize_rows(p.directions);
    } catch (const dm::DiffError& e) {
        throw EmbError(EmbErrorKind::zero_vector, e.what());
    }
    return p;
}

EmbeddingSet prototypes_to_set(const ClassPrototypes& protos) {
    EmbeddingSet set(static_cast<std::uint32_t>(protos.dim()), protos.class_names);
    for (std::size_t c = 0; c < protos.size(); ++c) set.add(static_cast<std::uint32_t>(c), protos.row(c));
    return set;
}

ClassPrototypes concat(const ClassPrototypes& a, const ClassPrototypes& b) {
    if (a.dim() != b.dim()) throw EmbError(EmbErrorKind::invalid_set, "prototype dimensions differ");
    ClassPrototypes out;
    out.class_names = a.class_names;
    out.class_names.insert(out.class_names.end(), b.class_names.begin(), b.class_names.end());
    out.directions = dm::Tensor(out.class_names.size(), a.dim());
    std::copy(a.directions.values.begin(), a.directions.values.end(), out.directions.values.begin());
    std::copy(b.directions.values.begin(), b.directions.values.end(),
              out.directions.values.begin() + static_cast<std::ptrdiff_t>(a.directions.size()));
    return out;
}

dm::Tensor to_tensor(const EmbeddingSet& set) {
    return dm::Tensor(set.size(), set.dim, std::vector<double>(set.values.begin(), set.values.end()));
}

}  // namespace dfzsl

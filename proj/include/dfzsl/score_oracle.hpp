#pragma once

#include <cstddef>

#include "dfzsl/diffmath.hpp"

namespace dfzsl {

// Anything that scores a batch of features against the protected base
// classifier: rows of the result follow the rows of the batch, columns follow
// the server's class order.
class ScoreOracle {
public:
    virtual ~ScoreOracle() = default;
    virtual std::size_t dim() const = 0;
    virtual std::size_t num_classes() const = 0;
    virtual dm::Tensor predict(const dm::Tensor& batch) = 0;
};

}  // namespace dfzsl

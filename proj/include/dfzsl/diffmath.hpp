#pragma once

// Small dense reverse-mode differentiation toolkit. A Graph records one
// forward evaluation; backward() walks it once in reverse creation order.
// Everything is rank-2 (vectors are 1 x n) and computed in double.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfzsl::dm {

class DiffError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    bool requires_grad = false;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    Tensor(std::size_t r, std::size_t c, std::vector<double> v);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor row_vector(std::span<const double> v);

    std::size_t size() const noexcept { return values.size(); }
    std::vector<std::size_t> shape() const { return {rows, cols}; }
    bool same_shape(const Tensor& o) const noexcept { return rows == o.rows && cols == o.cols; }

    double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

    bool all_finite() const;
};

// Handle to a node of one Graph.
struct Var {
    std::size_t id = 0;
};

enum class Axis { rows, cols, all };

class Graph {
public:
    Var constant(Tensor t);
    Var parameter(Tensor t);

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
    double scalar(Var v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    // a (n x k) * b (k x m)
    Var matmul(Var a, Var b);
    // a (n x k) * b^T where b is (m x k)
    Var matmul_nt(Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    // Adds the 1 x m row to every row of the n x m operand.
    Var add_row(Var a, Var row);
    Var scale(Var a, double k);
    Var add_scalar(Var a, double k);
    Var square(Var a);
    Var exp(Var a);
    Var gelu(Var a);
    Var relu(Var a);
    Var mean(Var a, Axis axis);
    Var sum(Var a);
    Var l2_normalize_rows(Var a);
    // Pairwise cosine of rows: (n x k), (m x k) -> (n x m).
    Var cosine(Var a, Var b);
    Var concat_cols(Var a, Var b);
    Var gather_rows(Var a, std::span<const std::uint32_t> index);
    // Mean over rows of -log softmax(logits / tau)[label].
    Var softmax_cross_entropy(Var logits, std::span<const std::uint32_t> labels, double tau);
    // Mean over all elements of (a - b)^2.
    Var mse(Var a, Var b);

    // Seeds d(loss)/d(loss) = 1 and fills grad() of every node reachable from
    // a parameter. Returns the loss value.
    double backward(Var loss);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> parents;
        std::function<void(Graph&, std::size_t)> back;
        bool needs_grad = false;
    };

    Var push(Tensor value, std::vector<std::size_t> parents, std::function<void(Graph&, std::size_t)> back);
    Tensor& grad_of(std::size_t id);
    bool needs(std::size_t id) const { return nodes_[id].needs_grad; }

    std::vector<Node> nodes_;
};

using ParamMap = std::map<std::string, Tensor>;
using VarMap = std::map<std::string, Var>;
using LossBuilder = std::function<Var(Graph&, const VarMap&)>;

struct GradResult {
    double loss = 0.0;
    ParamMap grads;
};

// Builds the graph over fresh parameter leaves, checks the output is a
// scalar, and returns the loss with per-parameter gradients.
GradResult eval_with_grad(const LossBuilder& build, const ParamMap& params);

double eval_loss(const LossBuilder& build, const ParamMap& params);

// max |analytic - central| / max(1e-8, |central|) over every coordinate.
double finite_diff_check(const LossBuilder& build, const ParamMap& params, double step = 1e-5);

double gelu(double x);
double gelu_derivative(double x);

double cosine_similarity(std::span<const double> a, std::span<const double> b);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

// Rescales every row to unit norm; throws on a zero row.
void normalize_rows(Tensor& t);

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    Tensor first_moment;
    Tensor second_moment;
    std::uint64_t step_count = 0;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

AdamState make_adam_state(const Tensor& param, const AdamConfig& config = {});

// Bias-corrected Adam update applied in place.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state);

// One AdamState per named parameter, created lazily.
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    void step(ParamMap& params, const ParamMap& grads);
    const AdamConfig& config() const noexcept { return config_; }

private:
    AdamConfig config_;
    std::map<std::string, AdamState> states_;
};

}  // namespace dfzsl::dm

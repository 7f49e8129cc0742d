#include "dfzsl/diffmath.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace dfzsl::dm {

namespace {

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << t.rows << "x" << t.cols;
    return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw DiffError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <class T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw DiffError("cosine_similarity: length mismatch");
    // Scaled by the largest magnitudes so huge or tiny inputs do not overflow.
    double sa = 0.0, sb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sa = std::max(sa, std::abs(static_cast<double>(a[i])));
        sb = std::max(sb, std::abs(static_cast<double>(b[i])));
    }
    if (!(sa > 0.0) || !(sb > 0.0)) throw DiffError("cosine_similarity: zero-norm operand");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = a[i] / sa, y = b[i] / sb;
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (!(na > 0.0) || !(nb > 0.0)) throw DiffError("cosine_similarity: zero-norm operand");
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
    if (values.size() != r * c) throw DiffError("Tensor: value count does not match shape " + shape_str(*this));
}

Tensor Tensor::row_vector(std::span<const double> v) { return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end())); }

bool Tensor::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

namespace {

// 1 + tanh(u) and 1 - tanh(u)^2 without cancellation in the negative tail.
double one_plus_tanh(double u) { return 2.0 / (1.0 + std::exp(-2.0 * u)); }

double sech2(double u) {
    const double e = std::exp(-2.0 * std::abs(u));
    return 4.0 * e / ((1.0 + e) * (1.0 + e));
}

}  // namespace

double gelu(double x) {
    const double u = kGeluScale * (x + kGeluCubic * x * x * x);
    return 0.5 * x * one_plus_tanh(u);
}

double gelu_derivative(double x) {
    const double u = kGeluScale * (x + kGeluCubic * x * x * x);
    const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
    return 0.5 * one_plus_tanh(u) + 0.5 * x * sech2(u) * du;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }
double cosine_similarity(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }

void normalize_rows(Tensor& t) {
    for (std::size_t r = 0; r < t.rows; ++r) {
        auto row = t.row(r);
        double sq = 0.0;
        for (double v : row) sq += v * v;
        if (!(sq > 0.0)) throw DiffError("normalize_rows: row " + std::to_string(r) + " has zero norm");
        const double inv = 1.0 / std::sqrt(sq);
        for (double& v : row) v *= inv;
    }
}

// ---------------------------------------------------------------- Graph

Var Graph::push(Tensor value, std::vector<std::size_t> parents, std::function<void(Graph&, std::size_t)> back) {
#ifndef NDEBUG
    if (!value.all_finite()) throw DiffError("non-finite value produced in forward pass");
#endif
    Node n;
    n.value = std::move(value);
    n.needs_grad = std::any_of(parents.begin(), parents.end(), [&](std::size_t p) { return nodes_[p].needs_grad; });
    n.parents = std::move(parents);
    if (n.needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Tensor& Graph::grad_of(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() != n.value.size() || n.grad.rows != n.value.rows)
        n.grad = Tensor(n.value.rows, n.value.cols, 0.0);
    return n.grad;
}

Var Graph::constant(Tensor t) {
    t.requires_grad = false;
    return push(std::move(t), {}, nullptr);
}

Var Graph::parameter(Tensor t) {
    t.requires_grad = true;
    Node n;
    n.value = std::move(t);
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

double Graph::scalar(Var v) const {
    const auto& t = value(v);
    if (t.size() != 1) throw DiffError("expected scalar, got " + shape_str(t));
    return t.values[0];
}

Var Graph::matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols != B.rows) throw DiffError("matmul: inner dimension mismatch " + shape_str(A) + " * " + shape_str(B));
    Tensor out(A.rows, B.cols, 0.0);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = A(i, k);
            if (aik == 0.0) continue;
            for (std::size_t j = 0; j < B.cols; ++j) out(i, j) += aik * B(k, j);
        }
    const std::size_t ia = a.id, ib = b.id;
    return push(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        const Tensor& A = g.nodes_[ia].value;
        const Tensor& B = g.nodes_[ib].value;
        if (g.needs(ia)) {
            Tensor& gA = g.grad_of(ia);
            for (std::size_t i = 0; i < A.rows; ++i)
                for (std::size_t k = 0; k < A.cols; ++k) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < B.cols; ++j) s += G(i, j) * B(k, j);
                    gA(i, k) += s;
                }
        }
        if (g.needs(ib)) {
            Tensor& gB = g.grad_of(ib);
            for (std::size_t i = 0; i < A.rows; ++i)
                for (std::size_t k = 0; k < A.cols; ++k) {
                    const double aik = A(i, k);
                    for (std::size_t j = 0; j < B.cols; ++j) gB(k, j) += aik * G(i, j);
                }
        }
    });
}

Var Graph::matmul_nt(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols != B.cols) throw DiffError("matmul_nt: inner dimension mismatch " + shape_str(A) + " * " + shape_str(B) + "^T");
    Tensor out(A.rows, B.rows, 0.0);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t j = 0; j < B.rows; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < A.cols; ++k) s += A(i, k) * B(j, k);
            out(i, j) = s;
        }
    const std::size_t ia = a.id, ib = b.id;
    return push(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        const Tensor& A = g.nodes_[ia].value;
        const Tensor& B = g.nodes_[ib].value;
        if (g.needs(ia)) {
            Tensor& gA = g.grad_of(ia);
            for (std::size_t i = 0; i < A.rows; ++i)
                for (std::size_t j = 0; j < B.rows; ++j) {
                    const double gij = G(i, j);
                    if (gij == 0.0) continue;
                    for (std::size_t k = 0; k < A.cols; ++k) gA(i, k) += gij * B(j, k);
                }
        }
        if (g.needs(ib)) {
            Tensor& gB = g.grad_of(ib);
            for (std::size_t i = 0; i < A.rows; ++i)
                for (std::size_t j = 0; j < B.rows; ++j) {
                    const double gij = G(i, j);
                    if (gij == 0.0) continue;
                    for (std::size_t k = 0; k < A.cols; ++k) gB(j, k) += gij * A(i, k);
                }
        }
    });
}

Var Graph::add(Var a, Var b) {
    require_same_shape(value(a), value(b), "add");
    Tensor out = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += B.values[i];
    const std::size_t ia = a.id, ib = b.id;
    return push(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        for (auto p : {ia, ib}) {
            if (!g.needs(p)) continue;
            Tensor& gp = g.grad_of(p);
            for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += G.values[i];
        }
    });
}

Var Graph::sub(Var a, Var b) {
    require_same_shape(value(a), value(b), "sub");
    Tensor out = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= B.values[i];
    const std::size_t ia = a.id, ib = b.id;
    return push(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        if (g.needs(ia)) {
            Tensor& gp = g.grad_of(ia);
            for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += G.values[i];
        }
        if (g.needs(ib)) {
            Tensor& gp = g.grad_of(ib);
            for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] -= G.values[i];
        }
    });
}

Var Graph::mul(Var a, Var b) {
    require_same_shape(value(a), value(b), "mul");
    Tensor out = value(a);
    const Tensor& B = value(b);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= B.values[i];
    const std::size_t ia = a.id, ib = b.id;
    return push(std::move(out), {ia, ib}, [ia, ib](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        const Tensor& A = g.nodes_[ia].value;
        const Tensor& B = g.nodes_[ib].value;
        if (g.needs(ia)) {
            Tensor& gp = g.grad_of(ia);
            for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += G.values[i] * B.values[i];
        }
        if (g.needs(ib)) {
            Tensor& gp = g.grad_of(ib);
            for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += G.values[i] * A.values[i];
        }
    });
}

Var Graph::add_row(Var a, Var row) {
    const Tensor& A = value(a);
    const Tensor& R = value(row);
    if (R.rows != 1 || R.cols != A.cols)
        throw DiffError("add_row: expected 1x" + std::to_string(A.cols) + " row, got " + shape_str(R));
    Tensor out = A;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += R.values[j];
    const std::size_t ia = a.id, ir = row.id;
    return push(std::move(out), {ia, ir}, [ia, ir](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        if (g.needs(ia)) {
            Tensor& gp = g.grad_of(ia);
            for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += G.values[i];
        }
        if (g.needs(ir)) {
            Tensor& gr = g.grad_of(ir);
            for (std::size_t i = 0; i < G.rows; ++i)
                for (std::size_t j = 0; j < G.cols; ++j) gr.values[j] += G(i, j);
        }
    });
}

Var Graph::scale(Var a, double k) {
    Tensor out = value(a);
    for (double& v : out.values) v *= k;
    const std::size_t ia = a.id;
    return push(std::move(out), {ia}, [ia, k](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        Tensor& gp = g.grad_of(ia);
        for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += k * G.values[i];
    });
}

Var Graph::add_scalar(Var a, double k) {
    Tensor out = value(a);
    for (double& v : out.values) v += k;
    const std::size_t ia = a.id;
    return push(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        Tensor& gp = g.grad_of(ia);
        for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += G.values[i];
    });
}

Var Graph::square(Var a) {
    Tensor out = value(a);
    for (double& v : out.values) v *= v;
    const std::size_t ia = a.id;
    return push(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        const Tensor& A = g.nodes_[ia].value;
        Tensor& gp = g.grad_of(ia);
        for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += 2.0 * A.values[i] * G.values[i];
    });
}

Var Graph::exp(Var a) {
    Tensor out = value(a);
    for (double& v : out.values) v = std::exp(v);
    const std::size_t ia = a.id;
    return push(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        const Tensor& Y = g.nodes_[self].value;
        Tensor& gp = g.grad_of(ia);
        for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += Y.values[i] * G.values[i];
    });
}

Var Graph::gelu(Var a) {
    Tensor out = value(a);
    for (double& v : out.values) v = dm::gelu(v);
    const std::size_t ia = a.id;
    return push(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        const Tensor& A = g.nodes_[ia].value;
        Tensor& gp = g.grad_of(ia);
        for (std::size_t i = 0; i < G.size(); ++i) gp.values[i] += gelu_derivative(A.values[i]) * G.values[i];
    });
}

Var Graph::relu(Var a) {
    Tensor out = value(a);
    for (double& v : out.values) v = v > 0.0 ? v : 0.0;
    const std::size_t ia = a.id;
    return push(std::move(out), {ia}, [ia](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        const Tensor& A = g.nodes_[ia].value;
        Tensor& gp = g.grad_of(ia);
        for (std::size_t i = 0; i < G.size(); ++i)
            if (A.values[i] > 0.0) gp.values[i] += G.values[i];
    });
}

Var Graph::mean(Var a, Axis axis) {
    const Tensor& A = value(a);
    if (A.size() == 0) throw DiffError("mean: empty operand");
    Tensor out;
    switch (axis) {
        case Axis::rows:
            out = Tensor(1, A.cols, 0.0);
            for (std::size_t i = 0; i < A.rows; ++i)
                for (std::size_t j = 0; j < A.cols; ++j) out.values[j] += A(i, j);
            for (double& v : out.values) v /= static_cast<double>(A.rows);
            break;
        case Axis::cols:
            out = Tensor(A.rows, 1, 0.0);
            for (std::size_t i = 0; i < A.rows; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < A.cols; ++j) s += A(i, j);
                out.values[i] = s / static_cast<double>(A.cols);
            }
            break;
        case Axis::all: {
            double s = 0.0;
            for (double v : A.values) s += v;
            out = Tensor::scalar(s / static_cast<double>(A.size()));
            break;
        }
    }
    const std::size_t ia = a.id;
    return push(std::move(out), {ia}, [ia, axis](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        Tensor& gp = g.grad_of(ia);
        const std::size_t rows = gp.rows, cols = gp.cols;
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) {
                switch (axis) {
                    case Axis::rows: gp(i, j) += G.values[j] / static_cast<double>(rows); break;
                    case Axis::cols: gp(i, j) += G.values[i] / static_cast<double>(cols); break;
                    case Axis::all: gp(i, j) += G.values[0] / static_cast<double>(rows * cols); break;
                }
            }
    });
}

Var Graph::sum(Var a) {
    double s = 0.0;
    for (double v : value(a).values) s += v;
    const std::size_t ia = a.id;
    return push(Tensor::scalar(s), {ia}, [ia](Graph& g, std::size_t self) {
        const double G = g.nodes_[self].grad.values[0];
        Tensor& gp = g.grad_of(ia);
        for (double& v : gp.values) v += G;
    });
}

Var Graph::l2_normalize_rows(Var a) {
    const Tensor& A = value(a);
    Tensor out = A;
    std::vector<double> norms(A.rows);
    for (std::size_t i = 0; i < A.rows; ++i) {
        double sq = 0.0;
        for (double v : A.row(i)) sq += v * v;
        if (!(sq > 0.0)) throw DiffError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
        norms[i] = std::sqrt(sq);
        for (double& v : out.row(i)) v /= norms[i];
    }
    const std::size_t ia = a.id;
    return push(std::move(out), {ia}, [ia, norms = std::move(norms)](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        const Tensor& Y = g.nodes_[self].value;
        Tensor& gp = g.grad_of(ia);
        for (std::size_t i = 0; i < Y.rows; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < Y.cols; ++j) dot += Y(i, j) * G(i, j);
            for (std::size_t j = 0; j < Y.cols; ++j) gp(i, j) += (G(i, j) - Y(i, j) * dot) / norms[i];
        }
    });
}

Var Graph::cosine(Var a, Var b) { return matmul_nt(l2_normalize_rows(a), l2_normalize_rows(b)); }

Var Graph::concat_cols(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rows != B.rows) throw DiffError("concat_cols: row mismatch " + shape_str(A) + " | " + shape_str(B));
    Tensor out(A.rows, A.cols + B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        std::copy(A.row(i).begin(), A.row(i).end(), out.row(i).begin());
        std::copy(B.row(i).begin(), B.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(A.cols));
    }
    const std::size_t ia = a.id, ib = b.id;
    const std::size_t ac = A.cols;
    return push(std::move(out), {ia, ib}, [ia, ib, ac](Graph& g, std::size_t self) {
        const Tensor& G = g.nodes_[self].grad;
        if (g.needs(ia)) {
            Tensor& gp = g.grad_of(ia);
            for (std::size_t i = 0; i < G.rows; ++i)
                for (std::size_t j = 0; j < ac; ++j) gp(i, j) += G(i, j);
        }
        if (g.needs(ib)) {
            Tensor& gp = g.grad_of(ib);
            for (std::size_t i = 0; i < G.rows; ++i)
                for (std::size_t j = 0; j < gp.cols; ++j) gp(i, j) += G(i, ac + j);
        }
    });
}

Var Graph::gather_rows(Var a, std::span<const std::uint32_t> index) {
    const Tensor& A = value(a);
    Tensor out(index.size(), A.cols);
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= A.rows) throw DiffError("gather_rows: index out of range");
        std::copy(A.row(index[i]).begin(), A.row(index[i]).end(), out.row(i).begin());
    }
    const std::size_t ia = a.id;
    return push(std::move(out), {ia},
                [ia, idx = std::vector<std::uint32_t>(index.begin(), index.end())](Graph& g, std::size_t self) {
                    const Tensor& G = g.nodes_[self].grad;
                    Tensor& gp = g.grad_of(ia);
                    for (std::size_t i = 0; i < idx.size(); ++i)
                        for (std::size_t j = 0; j < G.cols; ++j) gp(idx[i], j) += G(i, j);
                });
}

Var Graph::softmax_cross_entropy(Var logits, std::span<const std::uint32_t> labels, double tau) {
    const Tensor& L = value(logits);
    if (!(tau > 0.0)) throw DiffError("softmax_cross_entropy: temperature must be positive");
    if (labels.size() != L.rows) throw DiffError("softmax_cross_entropy: label count does not match rows");
    if (L.rows == 0 || L.cols == 0) throw DiffError("softmax_cross_entropy: empty logits");
    Tensor probs(L.rows, L.cols);
    double total = 0.0;
    for (std::size_t i = 0; i < L.rows; ++i) {
        if (labels[i] >= L.cols) throw DiffError("softmax_cross_entropy: label out of range");
        std::size_t arg = 0;
        for (std::size_t j = 1; j < L.cols; ++j)
            if (L(i, j) > L(i, arg)) arg = j;
        const double top = L(i, arg) / tau;
        // log-sum-exp as top + log1p(sum of the non-max terms)
        double rest = 0.0;
        for (std::size_t j = 0; j < L.cols; ++j) {
            const double e = std::exp(L(i, j) / tau - top);
            probs(i, j) = e;
            if (j != arg) rest += e;
        }
        for (std::size_t j = 0; j < L.cols; ++j) probs(i, j) /= (1.0 + rest);
        total += (top - L(i, labels[i]) / tau) + std::log1p(rest);
    }
    const double n = static_cast<double>(L.rows);
    const std::size_t il = logits.id;
    return push(Tensor::scalar(total / n), {il},
                [il, tau, n, probs = std::move(probs),
                 lab = std::vector<std::uint32_t>(labels.begin(), labels.end())](Graph& g, std::size_t self) {
                    const double G = g.nodes_[self].grad.values[0];
                    Tensor& gp = g.grad_of(il);
                    for (std::size_t i = 0; i < probs.rows; ++i)
                        for (std::size_t j = 0; j < probs.cols; ++j) {
                            const double target = (j == lab[i]) ? 1.0 : 0.0;
                            gp(i, j) += G * (probs(i, j) - target) / (tau * n);
                        }
                });
}

Var Graph::mse(Var a, Var b) {
    require_same_shape(value(a), value(b), "mse");
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.size() == 0) throw DiffError("mse: empty operands");
    double s = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
        const double d = A.values[i] - B.values[i];
        s += d * d;
    }
    const double n = static_cast<double>(A.size());
    const std::size_t ia = a.id, ib = b.id;
    return push(Tensor::scalar(s / n), {ia, ib}, [ia, ib, n](Graph& g, std::size_t self) {
        const double G = g.nodes_[self].grad.values[0];
        const Tensor& A = g.nodes_[ia].value;
        const Tensor& B = g.nodes_[ib].value;
        if (g.needs(ia)) {
            Tensor& gp = g.grad_of(ia);
            for (std::size_t i = 0; i < A.size(); ++i) gp.values[i] += G * 2.0 * (A.values[i] - B.values[i]) / n;
        }
        if (g.needs(ib)) {
            Tensor& gp = g.grad_of(ib);
            for (std::size_t i = 0; i < A.size(); ++i) gp.values[i] -= G * 2.0 * (A.values[i] - B.values[i]) / n;
        }
    });
}

double Graph::backward(Var loss) {
    const double value = scalar(loss);
    for (auto& n : nodes_) n.grad = Tensor();
    grad_of(loss.id).values[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        auto& n = nodes_[id];
        if (!n.needs_grad || !n.back || n.grad.size() == 0) continue;
        n.back(*this, id);
    }
    // Parameters that did not influence the loss still get a zero gradient.
    for (std::size_t id = 0; id < nodes_.size(); ++id)
        if (nodes_[id].needs_grad) grad_of(id);
    return value;
}

// ---------------------------------------------------------------- drivers

GradResult eval_with_grad(const LossBuilder& build, const ParamMap& params) {
    for (const auto& [name, t] : params)
        if (!t.all_finite()) throw DiffError("parameter '" + name + "' has non-finite values");
    Graph g;
    VarMap vars;
    for (const auto& [name, t] : params) vars.emplace(name, g.parameter(t));
    const Var out = build(g, vars);
    if (g.value(out).size() != 1) throw DiffError("loss graph output is not a scalar");
    GradResult r;
    r.loss = g.backward(out);
    for (const auto& [name, v] : vars) r.grads.emplace(name, g.grad(v));
    return r;
}

double eval_loss(const LossBuilder& build, const ParamMap& params) {
    Graph g;
    VarMap vars;
    for (const auto& [name, t] : params) vars.emplace(name, g.constant(t));
    const Var out = build(g, vars);
    return g.scalar(out);
}

double finite_diff_check(const LossBuilder& build, const ParamMap& params, double step) {
    const GradResult analytic = eval_with_grad(build, params);
    ParamMap probe = params;
    double worst = 0.0;
    for (auto& [name, t] : probe) {
        const Tensor& ga = analytic.grads.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t.values[i];
            t.values[i] = orig + step;
            const double up = eval_loss(build, probe);
            t.values[i] = orig - step;
            const double down = eval_loss(build, probe);
            t.values[i] = orig;
            const double central = (up - down) / (2.0 * step);
            const double err = std::abs(ga.values[i] - central) / std::max(1e-8, std::abs(central));
            worst = std::max(worst, err);
        }
    }
    return worst;
}

// ---------------------------------------------------------------- Adam

AdamState make_adam_state(const Tensor& param, const AdamConfig& config) {
    AdamState s;
    s.first_moment = Tensor(param.rows, param.cols, 0.0);
    s.second_moment = Tensor(param.rows, param.cols, 0.0);
    s.learning_rate = config.learning_rate;
    s.beta1 = config.beta1;
    s.beta2 = config.beta2;
    s.epsilon = config.epsilon;
    return s;
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state) {
    if (!param.same_shape(grad)) throw DiffError("adam_step: gradient shape " + shape_str(grad) + " != parameter shape " + shape_str(param));
    if (!param.same_shape(state.first_moment) || !param.same_shape(state.second_moment))
        throw DiffError("adam_step: moment shape does not match parameter");
    state.step_count += 1;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad.values[i];
        double& m = state.first_moment.values[i];
        double& v = state.second_moment.values[i];
        m = state.beta1 * m + (1.0 - state.beta1) * g;
        v = state.beta2 * v + (1.0 - state.beta2) * g * g;
        const double mhat = m / c1;
        const double vhat = v / c2;
        param.values[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
}

void Adam::step(ParamMap& params, const ParamMap& grads) {
    for (auto& [name, p] : params) {
        auto g = grads.find(name);
        if (g == grads.end()) continue;
        auto [it, inserted] = states_.try_emplace(name);
        if (inserted) it->second = make_adam_state(p, config_);
        adam_step(p, g->second, it->second);
    }
}

}  // namespace dfzsl::dm

#pragma once

// Reference values computed independently of the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

namespace oracle {

// log I_nu(x) from the power series, summed in log space.
inline long double log_bessel_i(long double nu, long double x) {
    const long double lx = std::log(x / 2.0L);
    std::vector<long double> terms;
    long double peak = -INFINITY;
    for (int k = 0; k < 200000; ++k) {
        const long double t = (2.0L * k + nu) * lx - std::lgamma(k + 1.0L) - std::lgamma(k + nu + 1.0L);
        terms.push_back(t);
        peak = std::max(peak, t);
        if (k > x && t < peak - 60.0L) break;
    }
    long double s = 0.0L;
    for (long double t : terms) s += std::exp(t - peak);
    return peak + std::log(s);
}

// Mean resultant length A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa).
inline double bessel_ratio_series(int d, double kappa) {
    const long double nu = d / 2.0L;
    return static_cast<double>(std::exp(log_bessel_i(nu, kappa) - log_bessel_i(nu - 1.0L, kappa)));
}

// E[w] under the marginal density of w = mu.x, proportional to
// exp(kappa w) (1 - w^2)^((d-3)/2) on [-1, 1]; composite Simpson.
inline double bessel_ratio_quadrature(int d, double kappa, int intervals = 400000) {
    const long double e = (d - 3) / 2.0L;
    const auto logf = [&](long double w) -> long double {
        const long double s = 1.0L - w * w;
        if (s <= 0.0L) return e == 0.0L ? kappa * (w - 1.0L) : -INFINITY;
        return kappa * (w - 1.0L) + e * std::log(s);
    };
    const long double h = 2.0L / intervals;
    long double num = 0.0L, den = 0.0L;
    for (int i = 0; i <= intervals; ++i) {
        const long double w = -1.0L + i * h;
        const long double c = (i == 0 || i == intervals) ? 1.0L : (i % 2 ? 4.0L : 2.0L);
        const long double f = std::exp(logf(w));
        num += c * w * f;
        den += c * f;
    }
    return static_cast<double>(num / den);
}

inline double coth_ratio(double kappa) { return 1.0 / std::tanh(kappa) - 1.0 / kappa; }

// (arccos(c) / 6)^-2 for the closest pair given its cosine.
inline double kappa_from_cos(double c) {
    const double a = std::acos(std::clamp(c, -1.0, 1.0));
    return 36.0 / (a * a);
}

// Tanh-form GELU evaluated in extended precision.
inline double gelu_tanh(double x) {
    const long double l = x;
    const long double u = std::sqrt(2.0L / std::numbers::pi_v<long double>) * (l + 0.044715L * l * l * l);
    return static_cast<double>(0.5L * l * (1.0L + std::tanh(u)));
}

inline double harmonic(double a, double b) { return a + b == 0.0 ? 0.0 : 2.0 * a * b / (a + b); }

// Central differences of f over every coordinate of x.
inline std::vector<double> central_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double h = 1e-5) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double o = x[i];
        x[i] = o + h;
        const double up = f(x);
        x[i] = o - h;
        const double down = f(x);
        x[i] = o;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
        worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(1e-8, std::abs(numeric[i])));
    return worst;
}

}  // namespace oracle

namespace oracle {

using Mat = std::vector<std::vector<long double>>;

inline Mat to_mat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
    Mat m(rows, std::vector<long double>(cols));
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) m[r][c] = v[r * cols + c];
    return m;
}

inline long double gelu_l(long double x) {
    const long double u = std::sqrt(2.0L / std::numbers::pi_v<long double>) * (x + 0.044715L * x * x * x);
    return 0.5L * x * (1.0L + std::tanh(u));
}

// y = W x (+ b), W given row-major as out x in.
inline std::vector<long double> affine(const Mat& w, const std::vector<long double>& x, const std::vector<long double>* b) {
    std::vector<long double> y(w.size());
    for (std::size_t o = 0; o < w.size(); ++o) {
        long double s = b ? (*b)[o] : 0.0L;
        for (std::size_t i = 0; i < x.size(); ++i) s += w[o][i] * x[i];
        y[o] = s;
    }
    return y;
}

// Prompt-tuning loss in extended precision: frozen encoder over the mean of
// {p1..p4, cls}, class-agnostic shift = mean_i F(p_i), cosine logits / tau,
// mean cross-entropy.
struct PromptLoss {
    Mat tokens, w_hidden, w_out, x;
    std::vector<std::uint32_t> labels;
    long double tau = 0.01L;

    long double operator()(const Mat& prompts, const Mat& w1, const std::vector<long double>& b1, const Mat& w2,
                           const std::vector<long double>& b2) const {
        const std::size_t e = prompts[0].size(), d = w_out.size();
        std::vector<std::vector<long double>> text;
        for (const auto& cls : tokens) {
            std::vector<long double> pooled(e);
            for (std::size_t k = 0; k < e; ++k) {
                long double s = cls[k];
                for (const auto& p : prompts) s += p[k];
                pooled[k] = s / 5.0L;
            }
            auto h = affine(w_hidden, pooled, nullptr);
            for (auto& v : h) v = gelu_l(v);
            auto t = affine(w_out, h, nullptr);
            long double n = 0.0L;
            for (auto v : t) n += v * v;
            for (auto& v : t) v /= std::sqrt(n);
            text.push_back(t);
        }
        std::vector<long double> shift(d, 0.0L);
        for (const auto& p : prompts) {
            auto h = affine(w1, p, &b1);
            for (auto& v : h) v = gelu_l(v);
            const auto m = affine(w2, h, &b2);
            for (std::size_t k = 0; k < d; ++k) shift[k] += m[k] / prompts.size();
        }
        long double total = 0.0L;
        for (std::size_t i = 0; i < x.size(); ++i) {
            std::vector<long double> xh(d);
            long double nx = 0.0L;
            for (std::size_t k = 0; k < d; ++k) {
                xh[k] = x[i][k] + shift[k];
                nx += xh[k] * xh[k];
            }
            std::vector<long double> logits;
            long double peak = -INFINITY;
            for (const auto& t : text) {
                long double dot = 0.0L;
                for (std::size_t k = 0; k < d; ++k) dot += xh[k] * t[k];
                logits.push_back(dot / std::sqrt(nx) / tau);
                peak = std::max(peak, logits.back());
            }
            long double z = 0.0L;
            for (auto l : logits) z += std::exp(l - peak);
            total += peak + std::log(z) - logits[labels[i]];
        }
        return total / x.size();
    }
};

}  // namespace oracle

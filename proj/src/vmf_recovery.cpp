#include "dfzsl/vmf_recovery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace dfzsl {

namespace {

// Angle between two unit vectors, accurate for nearly equal and nearly
// opposite pairs.
double unit_angle(std::span<const double> a, std::span<const double> b) {
    double diff = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        sum += (a[i] + b[i]) * (a[i] + b[i]);
    }
    return 2.0 * std::atan2(std::sqrt(diff), std::sqrt(sum));
}

dm::Tensor rows_of(const EmbeddingSet& pool, std::span<const std::size_t> order, std::size_t begin, std::size_t end) {
    dm::Tensor t(end - begin, pool.dim);
    for (std::size_t i = begin; i < end; ++i) {
        const auto r = pool.row(order[i]);
        std::copy(r.begin(), r.end(), t.row(i - begin).begin());
    }
    return t;
}

}  // namespace

void RecoveryConfig::validate() const {
    if (epochs == 0 && mode == RecoveryMode::black_box) throw RecoveryError("recovery epochs must be positive");
    if (!(learning_rate > 0.0)) throw RecoveryError("recovery learning rate must be positive");
    if (batch_size == 0) throw RecoveryError("recovery batch size must be positive");
    if (!(lambda > 0.0)) throw RecoveryError("lambda must be positive");
    if (mode == RecoveryMode::black_box && samples_per_class == 0)
        throw RecoveryError("black-box recovery needs samples_per_class > 0");
}

double derive_kappa(const ClassPrototypes& prototypes) {
    if (prototypes.size() < 2) throw RecoveryError("concentration needs at least two prototypes");
    ClassPrototypes unit;
    try {
        unit = prototypes.normalized();
    } catch (const dm::DiffError& e) {
        throw RecoveryError(std::string("degenerate prototype: ") + e.what());
    }
    double kappa = 0.0;
    for (std::size_t a = 0; a < unit.size(); ++a)
        for (std::size_t b = a + 1; b < unit.size(); ++b) {
            const double angle = unit_angle(unit.row(a), unit.row(b));
            if (angle < kCoincidentAngle) {
                std::ostringstream os;
                os << "degenerate geometry: prototypes '" << unit.class_names[a] << "' and '" << unit.class_names[b]
                   << "' coincide (angle " << angle << " rad)";
                throw RecoveryError(os.str());
            }
            const double sigma = angle / 6.0;
            kappa = std::max(kappa, 1.0 / (sigma * sigma));
        }
    return kappa;
}

void sample_vmf_unit(std::span<const double> mu, double kappa, Rng& rng, std::span<double> out) {
    const std::size_t d = mu.size();
    if (d < 2) throw RecoveryError("vMF sampling needs dimension >= 2");
    if (!(kappa >= 0.0) || !std::isfinite(kappa)) throw RecoveryError("vMF concentration must be finite and >= 0");
    const double m = static_cast<double>(d - 1);

    // Wood (1994): rejection sampling of w = mu . x.
    const double b = m / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m * m));
    const double x0 = (1.0 - b) / (1.0 + b);
    const double one_minus_x0 = 2.0 * b / (1.0 + b);
    const double c = kappa * x0 + m * std::log(4.0 * b / ((1.0 + b) * (1.0 + b)));

    std::gamma_distribution<double> gamma(m / 2.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    double w = 0.0, one_minus_w = 0.0;
    for (;;) {
        const double g1 = gamma(rng);
        const double g2 = gamma(rng);
        const double z = g1 / (g1 + g2);
        const double denom = 1.0 - (1.0 - b) * z;
        w = (1.0 - (1.0 + b) * z) / denom;
        one_minus_w = 2.0 * b * z / denom;
        const double u = uniform(rng);
        const double one_minus_x0w = one_minus_x0 + x0 * one_minus_w;
        if (kappa * w + m * std::log(one_minus_x0w) - c >= std::log(u)) break;
    }

    // Uniform tangent direction around the north pole e1.
    std::normal_distribution<double> normal(0.0, 1.0);
    double sq = 0.0;
    do {
        sq = 0.0;
        for (std::size_t i = 1; i < d; ++i) {
            out[i] = normal(rng);
            sq += out[i] * out[i];
        }
    } while (!(sq > 0.0));
    const double radial = std::sqrt(std::max(0.0, one_minus_w * (2.0 - one_minus_w))) / std::sqrt(sq);
    out[0] = w;
    for (std::size_t i = 1; i < d; ++i) out[i] *= radial;

    // Householder reflection taking e1 to mu: u = e1 - mu.
    double tail = 0.0;
    for (std::size_t i = 1; i < d; ++i) tail += mu[i] * mu[i];
    const double u0 = mu[0] > 0.0 ? tail / (1.0 + mu[0]) : 1.0 - mu[0];
    const double unorm2 = u0 * u0 + tail;
    if (unorm2 > 0.0) {
        double dot = u0 * out[0];
        for (std::size_t i = 1; i < d; ++i) dot -= mu[i] * out[i];
        const double f = 2.0 * dot / unorm2;
        out[0] -= f * u0;
        for (std::size_t i = 1; i < d; ++i) out[i] += f * mu[i];
    }
    double n2 = 0.0;
    for (double v : out) n2 += v * v;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& v : out) v *= inv;
}

EmbeddingSet sample_vmf(const VmfParams& params, std::size_t class_index, std::size_t n, std::uint64_t seed) {
    const auto& protos = params.prototypes;
    if (class_index >= protos.size())
        throw RecoveryError("class index " + std::to_string(class_index) + " out of range");
    if (protos.dim() < 2) throw RecoveryError("vMF sampling needs dimension >= 2");
    EmbeddingSet set(static_cast<std::uint32_t>(protos.dim()), protos.class_names);
    set.labels.reserve(n);
    set.values.reserve(n * protos.dim());
    Rng rng = make_stream(seed, {class_index});
    std::vector<double> mu(protos.row(class_index).begin(), protos.row(class_index).end());
    double norm = 0.0;
    for (double v : mu) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) throw RecoveryError("zero prototype");
    for (double& v : mu) v /= norm;
    std::vector<double> x(protos.dim());
    for (std::size_t i = 0; i < n; ++i) {
        sample_vmf_unit(mu, params.effective_kappa(), rng, x);
        set.add(static_cast<std::uint32_t>(class_index), std::span<const double>(x));
    }
    return set;
}

EmbeddingSet sample_vmf_all(const VmfParams& params, std::size_t per_class, std::uint64_t seed) {
    EmbeddingSet all(static_cast<std::uint32_t>(params.prototypes.dim()), params.prototypes.class_names);
    for (std::size_t c = 0; c < params.prototypes.size(); ++c) {
        const auto part = sample_vmf(params, c, per_class, seed);
        all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
        all.values.insert(all.values.end(), part.values.begin(), part.values.end());
    }
    return all;
}

WhiteBoxRecovery recover_whitebox(const ClassPrototypes& weights, const RecoveryConfig& config) {
    config.validate();
    WhiteBoxRecovery r;
    try {
        r.params.prototypes = weights.normalized();
    } catch (const dm::DiffError& e) {
        throw RecoveryError(e.what());
    }
    r.params.kappa_text = derive_kappa(r.params.prototypes);
    r.params.lambda = config.lambda;
    r.virtual_base = sample_vmf_all(r.params, config.samples_per_class, derive_seed(config.seed, {0x5EED0001}));
    return r;
}

double prototype_loss(const dm::Tensor& features, const dm::Tensor& scores, const dm::Tensor& prototypes) {
    dm::Graph g;
    const auto cos = g.cosine(g.constant(features), g.constant(prototypes));
    return g.scalar(g.mse(g.constant(scores), cos));
}

BlackBoxRecovery recover_blackbox(const ClassPrototypes& text_protos, ScoreOracle& server,
                                  const RecoveryConfig& config) {
    config.validate();
    if (server.dim() != text_protos.dim()) {
        std::ostringstream os;
        os << "server dimension " << server.dim() << " does not match prototype dimension " << text_protos.dim();
        throw RecoveryError(os.str());
    }
    if (server.num_classes() != text_protos.size()) {
        std::ostringstream os;
        os << "server reports " << server.num_classes() << " classes, prototypes have " << text_protos.size();
        throw RecoveryError(os.str());
    }

    BlackBoxRecovery out;
    VmfParams params;
    params.prototypes = text_protos.normalized();
    params.kappa_text = derive_kappa(params.prototypes);
    params.lambda = config.lambda;
    out.kappa_text = params.kappa_text;

    dm::ParamMap state{{"M", params.prototypes.directions}};
    dm::Adam adam(dm::AdamConfig{.learning_rate = config.learning_rate});

    EmbeddingSet pool;
    bool have_initial = false;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        params.prototypes.directions = state.at("M");
        if (epoch == 0 || config.resample_each_epoch)
            pool = sample_vmf_all(params, config.samples_per_class, derive_seed(config.seed, {0xB10C, epoch}));

        std::vector<std::size_t> order(pool.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffler = make_stream(config.seed, {0x5F1E, epoch});
        std::shuffle(order.begin(), order.end(), shuffler);

        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            dm::Tensor x = rows_of(pool, order, begin, end);
            dm::Tensor scores = server.predict(x);
            ++out.server_queries;
            if (scores.rows != x.rows || scores.cols != text_protos.size())
                throw RecoveryError("server returned scores of unexpected shape");
            const auto grads = dm::eval_with_grad(
                [&](dm::Graph& g, const dm::VarMap& v) {
                    const auto cos = g.cosine(g.constant(x), v.at("M"));
                    return g.mse(g.constant(scores), cos);
                },
                state);
            if (!std::isfinite(grads.loss)) throw RecoveryError("non-finite prototype loss at epoch " + std::to_string(epoch));
            if (!have_initial) {
                out.initial_loss = grads.loss;
                have_initial = true;
            }
            total += grads.loss;
            ++batches;
            adam.step(state, grads.grads);
            dm::normalize_rows(state.at("M"));
        }
        out.epoch_losses.push_back(total / static_cast<double>(std::max<std::size_t>(batches, 1)));
    }

    out.final_loss = out.epoch_losses.empty() ? out.initial_loss : out.epoch_losses.back();
    out.converged = out.final_loss <= 1e-10 || out.final_loss <= 0.1 * out.initial_loss;
    out.learned.class_names = text_protos.class_names;
    out.learned.directions = state.at("M");
    params.prototypes = out.learned;
    out.virtual_base =
        sample_vmf_all(params, config.samples_per_class, derive_seed(config.seed, {0xB10C, config.epochs}));
    return out;
}

}  // namespace dfzsl

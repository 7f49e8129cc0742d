#include "dfzsl/zsl_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dfzsl/rng.hpp"
#include "json.hpp"

namespace dfzsl {

namespace {

using json = nlohmann::ordered_json;

// Rows of `set` mapped onto the classifier's label space by name.
std::vector<std::uint32_t> join_labels(const LinearClassifier& clf, const EmbeddingSet& set) {
    std::vector<std::uint32_t> map(set.num_classes());
    for (std::size_t c = 0; c < set.num_classes(); ++c) {
        const auto it = std::find(clf.class_names.begin(), clf.class_names.end(), set.class_names[c]);
        if (it == clf.class_names.end())
            throw ClassifierError("class '" + set.class_names[c] + "' is not in the classifier label space");
        map[c] = static_cast<std::uint32_t>(it - clf.class_names.begin());
    }
    return map;
}

double mean_of(const std::map<std::string, double>& acc) {
    if (acc.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [name, a] : acc) s += a;
    return s / static_cast<double>(acc.size());
}

}  // namespace

void ClassifierConfig::validate() const {
    if (batch_size == 0) throw ClassifierError("classifier batch size must be positive");
    if (!(learning_rate > 0.0)) throw ClassifierError("classifier learning rate must be positive");
    if (!(tau > 0.0)) throw ClassifierError("classifier temperature must be positive");
}

std::uint32_t LinearClassifier::predict(std::span<const float> x) const {
    if (x.size() != dim()) throw ClassifierError("feature dimension does not match classifier");
    std::uint32_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < num_classes(); ++c) {
        const auto w = weights.row(c);
        double dot = 0.0, norm = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            dot += static_cast<double>(x[k]) * w[k];
            norm += w[k] * w[k];
        }
        const double score = norm > 0.0 ? dot / std::sqrt(norm) : 0.0;
        if (score > best_score) {
            best_score = score;
            best = static_cast<std::uint32_t>(c);
        }
    }
    return best;
}

std::vector<std::uint32_t> LinearClassifier::predict_all(const EmbeddingSet& set) const {
    std::vector<std::uint32_t> out(set.size());
    for (std::size_t i = 0; i < set.size(); ++i) out[i] = predict(set.row(i));
    return out;
}

LinearClassifier text_classifier(const ClassPrototypes& text, double tau) {
    if (text.size() == 0) throw ClassifierError("no text features");
    const auto n = text.normalized();
    return LinearClassifier{n.class_names, n.directions, tau};
}

LinearClassifier train_classifier(const EmbeddingSet& train, const ClassPrototypes& text, const ClassifierConfig& config,
                                  std::vector<double>* epoch_losses) {
    config.validate();
    LinearClassifier clf = text_classifier(text, config.tau);
    if (train.dim != clf.dim()) throw ClassifierError("training features and text features differ in dimension");
    const auto map = join_labels(clf, train);
    std::vector<std::size_t> counts(clf.num_classes(), 0);
    for (auto l : train.labels) ++counts[map[l]];
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] == 0) throw ClassifierError("class '" + clf.class_names[c] + "' has no training samples");
    if (epoch_losses) epoch_losses->clear();

    dm::ParamMap params{{"w", clf.weights}};
    dm::Adam opt(dm::AdamConfig{.learning_rate = config.learning_rate});
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffler = make_stream(config.seed, {0xC1A5, epoch});
        std::shuffle(order.begin(), order.end(), shuffler);
        double total = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(order.size(), begin + config.batch_size);
            dm::Tensor x(end - begin, train.dim);
            std::vector<std::uint32_t> labels(end - begin);
            for (std::size_t i = begin; i < end; ++i) {
                const auto r = train.row(order[i]);
                std::copy(r.begin(), r.end(), x.row(i - begin).begin());
                labels[i - begin] = map[train.labels[order[i]]];
            }
            const auto res = dm::eval_with_grad(
                [&](dm::Graph& g, const dm::VarMap& v) {
                    return g.softmax_cross_entropy(g.cosine(g.constant(x), v.at("w")), labels, config.tau);
                },
                params);
            if (!std::isfinite(res.loss)) throw ClassifierError("non-finite classifier loss");
            opt.step(params, res.grads);
            total += res.loss;
            ++batches;
        }
        if (epoch_losses) epoch_losses->push_back(batches ? total / static_cast<double>(batches) : 0.0);
    }
    clf.weights = params.at("w");
    return clf;
}

double harmonic_mean(double base_acc, double new_acc) {
    const double s = base_acc + new_acc;
    return s > 0.0 ? 2.0 * base_acc * new_acc / s : 0.0;
}

const char* to_string(Protocol p) { return p == Protocol::gzsl ? "gzsl" : "base-to-new"; }

Protocol parse_protocol(const std::string& s) {
    if (s == "gzsl") return Protocol::gzsl;
    if (s == "base-to-new" || s == "base-new") return Protocol::base_to_new;
    throw std::invalid_argument("unknown protocol '" + s + "' (expected gzsl|base-new)");
}

std::map<std::string, double> per_class_accuracy(const LinearClassifier& clf, const EmbeddingSet& test) {
    const auto map = join_labels(clf, test);
    std::vector<std::size_t> correct(test.num_classes(), 0), total(test.num_classes(), 0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto l = test.labels[i];
        ++total[l];
        if (clf.predict(test.row(i)) == map[l]) ++correct[l];
    }
    std::map<std::string, double> acc;
    for (std::size_t c = 0; c < test.num_classes(); ++c)
        if (total[c] > 0)
            acc[test.class_names[c]] = 100.0 * static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    return acc;
}

namespace {

EvalReport combine(Protocol p, std::map<std::string, double> base, const std::map<std::string, double>& novel) {
    EvalReport r;
    r.protocol = p;
    r.base_acc = mean_of(base);
    r.new_acc = mean_of(novel);
    r.harmonic_mean = harmonic_mean(r.base_acc, r.new_acc);
    r.per_class = std::move(base);
    r.per_class.insert(novel.begin(), novel.end());
    return r;
}

}  // namespace

EvalReport evaluate_gzsl(const LinearClassifier& clf, const EmbeddingSet& test_base, const EmbeddingSet& test_new) {
    return combine(Protocol::gzsl, per_class_accuracy(clf, test_base), per_class_accuracy(clf, test_new));
}

EvalReport evaluate_base_to_new(const LinearClassifier& clf_base_space, const LinearClassifier& clf_new_space,
                                const EmbeddingSet& test_base, const EmbeddingSet& test_new) {
    return combine(Protocol::base_to_new, per_class_accuracy(clf_base_space, test_base),
                   per_class_accuracy(clf_new_space, test_new));
}

std::string report_json(const EvalReport& r) {
    json j;
    j["protocol"] = to_string(r.protocol);
    j["base_acc"] = r.base_acc;
    j["new_acc"] = r.new_acc;
    j["harmonic_mean"] = r.harmonic_mean;
    json per = json::object();
    for (const auto& [name, a] : r.per_class) per[name] = a;
    j["per_class"] = per;
    return j.dump(2) + "\n";
}

EvalReport parse_report_json(const std::string& text) {
    const auto j = json::parse(text);
    EvalReport r;
    r.protocol = parse_protocol(j.at("protocol").get<std::string>());
    r.base_acc = j.at("base_acc").get<double>();
    r.new_acc = j.at("new_acc").get<double>();
    r.harmonic_mean = j.at("harmonic_mean").get<double>();
    for (const auto& [name, a] : j.at("per_class").items()) r.per_class[name] = a.get<double>();
    return r;
}

void write_report_json(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ClassifierError("cannot write '" + path.string() + "'");
    f << report_json(report);
}

void write_report_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw ClassifierError("cannot write '" + path.string() + "'");
    char buf[64];
    f << "class,accuracy\n";
    for (const auto& [name, a] : report.per_class) {
        std::snprintf(buf, sizeof buf, "%.2f", a);
        f << name << ',' << buf << '\n';
    }
}

}  // namespace dfzsl

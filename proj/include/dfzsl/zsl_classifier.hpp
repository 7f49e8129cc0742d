#pragma once

// Stage 3b: cosine-logit softmax classifier initialized from text features,
// plus GZSL and base-to-new evaluation.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfzsl/diffmath.hpp"
#include "dfzsl/embedding_store.hpp"
#include "dfzsl/prototypes.hpp"

namespace dfzsl {

class ClassifierError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ClassifierConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    double tau = 0.01;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LinearClassifier {
    std::vector<std::string> class_names;
    dm::Tensor weights;  // C x d
    double tau = 0.01;

    std::size_t num_classes() const noexcept { return class_names.size(); }
    std::size_t dim() const noexcept { return weights.cols; }

    // Index of the largest cosine logit; ties go to the lowest index.
    std::uint32_t predict(std::span<const float> x) const;
    std::vector<std::uint32_t> predict_all(const EmbeddingSet& set) const;
};

// Zero-shot classifier with weights = text features.
LinearClassifier text_classifier(const ClassPrototypes& text, double tau = 0.01);

// Label space is text.class_names; training records are joined by name.
LinearClassifier train_classifier(const EmbeddingSet& train, const ClassPrototypes& text, const ClassifierConfig& config,
                                  std::vector<double>* epoch_losses = nullptr);

double harmonic_mean(double base_acc, double new_acc);

enum class Protocol { gzsl, base_to_new };

const char* to_string(Protocol p);
Protocol parse_protocol(const std::string& s);

struct EvalReport {
    Protocol protocol = Protocol::gzsl;
    double base_acc = 0.0;
    double new_acc = 0.0;
    double harmonic_mean = 0.0;
    std::map<std::string, double> per_class;
};

// Per-class top-1 accuracy (percent) of `clf` on every class of `test` that has samples.
std::map<std::string, double> per_class_accuracy(const LinearClassifier& clf, const EmbeddingSet& test);

EvalReport evaluate_gzsl(const LinearClassifier& clf, const EmbeddingSet& test_base, const EmbeddingSet& test_new);

EvalReport evaluate_base_to_new(const LinearClassifier& clf_base_space, const LinearClassifier& clf_new_space,
                                const EmbeddingSet& test_base, const EmbeddingSet& test_new);

std::string report_json(const EvalReport& report);
EvalReport parse_report_json(const std::string& text);
void write_report_json(const EvalReport& report, const std::filesystem::path& path);
void write_report_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace dfzsl

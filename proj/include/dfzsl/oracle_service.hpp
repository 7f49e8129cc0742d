#pragma once

// The protected base classifier behind a prediction-only HTTP/JSON API, and
// the client used by black-box recovery.
//
//   POST /v1/predict  {"features": [[...], ...]}  ->  {"scores": [[...], ...]}
//   GET  /v1/info     -> {"dim": d, "num_classes": C, "score_mode": "cosine"|"softmax"}
//   errors            -> 400 {"error": "dim_mismatch"|"empty_batch"|"batch_too_large"|"bad_request"}
//                        500 {"error": "internal"}

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>

#include "dfzsl/prototypes.hpp"
#include "dfzsl/score_oracle.hpp"

namespace httplib {
class Server;
}

namespace dfzsl {

enum class ScoreMode { cosine, softmax };

const char* to_string(ScoreMode mode);
ScoreMode parse_score_mode(const std::string& s);

inline constexpr std::size_t kServerBatchLimit = 128;
inline constexpr double kSoftmaxTemperature = 0.01;

class OracleError : public std::runtime_error {
public:
    OracleError(std::string code, const std::string& what) : std::runtime_error(what), code_(std::move(code)) {}
    // "dim_mismatch", "empty_batch", "batch_too_large", "transport", "internal", "protocol"
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

// In-process classifier: cosine between the L2-normalized input and each
// weight row, optionally turned into softmax probabilities at temperature 0.01.
class ServerClassifier final : public ScoreOracle {
public:
    explicit ServerClassifier(ClassPrototypes weights, ScoreMode mode = ScoreMode::cosine);

    std::size_t dim() const override { return weights_.dim(); }
    std::size_t num_classes() const override { return weights_.size(); }
    ScoreMode mode() const noexcept { return mode_; }
    dm::Tensor predict(const dm::Tensor& batch) override;

private:
    ClassPrototypes weights_;
    ScoreMode mode_;
};

// Weight file rows are normalized on load.
ServerClassifier load_server_classifier(const std::string& weights_path, ScoreMode mode = ScoreMode::cosine);

class PredictionService {
public:
    explicit PredictionService(ServerClassifier classifier, std::size_t batch_limit = kServerBatchLimit);
    ~PredictionService();
    PredictionService(const PredictionService&) = delete;
    PredictionService& operator=(const PredictionService&) = delete;

    // Binds (port 0 picks a free port) and serves on a background thread.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    // Binds and serves on the calling thread until stop().
    void run(const std::string& host, int port, const std::function<void(int)>& on_bound = {});
    void stop();
    int port() const noexcept { return port_; }

private:
    void install_routes();

    ServerClassifier classifier_;
    std::size_t batch_limit_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = -1;
};

struct ClientConfig {
    std::string url = "http://127.0.0.1:8080";
    std::size_t chunk_size = kServerBatchLimit;
    int max_attempts = 3;
    std::chrono::milliseconds backoff{50};
    std::chrono::seconds timeout{10};
    // Called with the body of every successful response.
    std::function<void(const std::string&)> on_response;
};

// Client side of the prediction API. Construction fetches /v1/info.
class RemoteOracle final : public ScoreOracle {
public:
    explicit RemoteOracle(ClientConfig config);
    ~RemoteOracle() override;

    std::size_t dim() const override { return dim_; }
    std::size_t num_classes() const override { return num_classes_; }
    const std::string& score_mode() const noexcept { return score_mode_; }
    // Splits batches larger than chunk_size and reassembles the scores in order.
    dm::Tensor predict(const dm::Tensor& batch) override;
    std::size_t requests_sent() const noexcept { return requests_; }

private:
    struct Impl;
    std::string request(const std::string& method, const std::string& path, const std::string& body);

    ClientConfig config_;
    std::unique_ptr<Impl> impl_;
    std::size_t dim_ = 0;
    std::size_t num_classes_ = 0;
    std::string score_mode_;
    std::size_t requests_ = 0;
};

}  // namespace dfzsl

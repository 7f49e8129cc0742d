#include "dfzsl/oracle_service.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "httplib.h"
#include "json.hpp"

namespace dfzsl {

namespace {

void append_float(std::string& out, float v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

std::string matrix_json(const char* key, const dm::Tensor& t) {
    std::string out;
    out.reserve(16 + t.size() * 12);
    out += "{\"";
    out += key;
    out += "\":[";
    for (std::size_t i = 0; i < t.rows; ++i) {
        if (i) out += ',';
        out += '[';
        for (std::size_t j = 0; j < t.cols; ++j) {
            if (j) out += ',';
            append_float(out, static_cast<float>(t(i, j)));
        }
        out += ']';
    }
    out += "]}";
    return out;
}

std::string error_json(const std::string& code) { return "{\"error\":\"" + code + "\"}"; }

}  // namespace

const char* to_string(ScoreMode mode) { return mode == ScoreMode::cosine ? "cosine" : "softmax"; }

ScoreMode parse_score_mode(const std::string& s) {
    if (s == "cosine") return ScoreMode::cosine;
    if (s == "softmax") return ScoreMode::softmax;
    throw std::invalid_argument("unknown score mode '" + s + "' (expected cosine|softmax)");
}

// ---------------------------------------------------------------- classifier

ServerClassifier::ServerClassifier(ClassPrototypes weights, ScoreMode mode) : mode_(mode) {
    if (weights.size() == 0 || weights.dim() == 0) throw OracleError("internal", "empty classifier weights");
    weights_ = weights.normalized();
}

dm::Tensor ServerClassifier::predict(const dm::Tensor& batch) {
    if (batch.rows == 0) throw OracleError("empty_batch", "empty batch");
    if (batch.cols != dim()) throw OracleError("dim_mismatch", "feature dimension does not match classifier");
    dm::Tensor scores(batch.rows, num_classes());
    for (std::size_t i = 0; i < batch.rows; ++i) {
        const auto x = batch.row(i);
        double norm = 0.0;
        for (double v : x) norm += v * v;
        if (!(norm > 0.0)) throw OracleError("bad_request", "zero feature vector in row " + std::to_string(i));
        norm = std::sqrt(norm);
        for (std::size_t c = 0; c < num_classes(); ++c) {
            double dot = 0.0;
            const auto w = weights_.row(c);
            for (std::size_t k = 0; k < x.size(); ++k) dot += x[k] * w[k];
            scores(i, c) = std::clamp(dot / norm, -1.0, 1.0);
        }
        if (mode_ == ScoreMode::softmax) {
            auto row = scores.row(i);
            const double top = *std::max_element(row.begin(), row.end());
            double z = 0.0;
            for (double& v : row) {
                v = std::exp((v - top) / kSoftmaxTemperature);
                z += v;
            }
            for (double& v : row) v /= z;
        }
    }
    return scores;
}

ServerClassifier load_server_classifier(const std::string& weights_path, ScoreMode mode) {
    return ServerClassifier(prototypes_from_set(read_emb1(weights_path)), mode);
}

// ---------------------------------------------------------------- service

PredictionService::PredictionService(ServerClassifier classifier, std::size_t batch_limit)
    : classifier_(std::move(classifier)), batch_limit_(batch_limit), server_(std::make_unique<httplib::Server>()) {
    server_->set_tcp_nodelay(true);
    install_routes();
}

PredictionService::~PredictionService() { stop(); }

void PredictionService::install_routes() {
    server_->Get("/v1/info", [this](const httplib::Request&, httplib::Response& res) {
        nlohmann::ordered_json j;
        j["dim"] = classifier_.dim();
        j["num_classes"] = classifier_.num_classes();
        j["score_mode"] = to_string(classifier_.mode());
        res.set_content(j.dump(), "application/json");
    });

    server_->Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
        auto fail = [&res](int status, const std::string& code) {
            res.status = status;
            res.set_content(error_json(code), "application/json");
        };
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::exception&) {
            return fail(400, "bad_request");
        }
        if (!body.is_object() || !body.contains("features") || !body["features"].is_array())
            return fail(400, "bad_request");
        const auto& rows = body["features"];
        if (rows.empty()) return fail(400, "empty_batch");
        if (rows.size() > batch_limit_) return fail(400, "batch_too_large");
        const std::size_t d = classifier_.dim();
        dm::Tensor batch(rows.size(), d);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            if (!r.is_array()) return fail(400, "bad_request");
            if (r.size() != d) return fail(400, "dim_mismatch");
            for (std::size_t k = 0; k < d; ++k) {
                if (!r[k].is_number()) return fail(400, "bad_request");
                batch(i, k) = r[k].get<double>();
            }
        }
        try {
            res.set_content(matrix_json("scores", classifier_.predict(batch)), "application/json");
        } catch (const OracleError& e) {
            return fail(400, e.code());
        } catch (const std::exception&) {
            return fail(500, "internal");
        }
    });

    server_->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
        res.status = 500;
        res.set_content(error_json("internal"), "application/json");
    });
}

int PredictionService::start(const std::string& host, int port) {
    if (port == 0) {
        port_ = server_->bind_to_any_port(host);
    } else {
        port_ = server_->bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw OracleError("transport", "cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port_;
}

void PredictionService::run(const std::string& host, int port, const std::function<void(int)>& on_bound) {
    if (port == 0) {
        port_ = server_->bind_to_any_port(host);
    } else {
        port_ = server_->bind_to_port(host, port) ? port : -1;
    }
    if (port_ < 0) throw OracleError("transport", "cannot bind " + host + ":" + std::to_string(port));
    if (on_bound) on_bound(port_);
    server_->listen_after_bind();
}

void PredictionService::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

// ---------------------------------------------------------------- client

struct RemoteOracle::Impl {
    explicit Impl(const std::string& url) : client(url) {}
    httplib::Client client;
};

RemoteOracle::RemoteOracle(ClientConfig config) : config_(std::move(config)) {
    if (config_.chunk_size == 0) throw OracleError("protocol", "client chunk size must be positive");
    if (config_.max_attempts < 1) throw OracleError("protocol", "client needs at least one attempt");
    impl_ = std::make_unique<Impl>(config_.url);
    if (!impl_->client.is_valid()) throw OracleError("transport", "invalid server url '" + config_.url + "'");
    impl_->client.set_keep_alive(true);
    impl_->client.set_tcp_nodelay(true);
    impl_->client.set_connection_timeout(config_.timeout);
    impl_->client.set_read_timeout(config_.timeout);
    impl_->client.set_write_timeout(config_.timeout);

    const auto body = request("GET", "/v1/info", "");
    try {
        const auto j = nlohmann::json::parse(body);
        dim_ = j.at("dim").get<std::size_t>();
        num_classes_ = j.at("num_classes").get<std::size_t>();
        score_mode_ = j.at("score_mode").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw OracleError("protocol", std::string("malformed /v1/info response: ") + e.what());
    }
}

RemoteOracle::~RemoteOracle() = default;

std::string RemoteOracle::request(const std::string& method, const std::string& path, const std::string& body) {
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
        if (attempt > 0) std::this_thread::sleep_for(config_.backoff * (1 << (attempt - 1)));
        ++requests_;
        auto res = method == "GET" ? impl_->client.Get(path)
                                   : impl_->client.Post(path, body, "application/json");
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200) {
            if (config_.on_response) config_.on_response(res->body);
            return res->body;
        }
        std::string code = "internal";
        try {
            code = nlohmann::json::parse(res->body).at("error").get<std::string>();
        } catch (const nlohmann::json::exception&) {
        }
        if (res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status) + " " + code;
            continue;
        }
        throw OracleError(code, "server rejected request: HTTP " + std::to_string(res->status) + " " + code);
    }
    throw OracleError("transport", config_.url + path + " failed after " + std::to_string(config_.max_attempts) +
                                       " attempts: " + last_error);
}

dm::Tensor RemoteOracle::predict(const dm::Tensor& batch) {
    if (batch.rows == 0) throw OracleError("empty_batch", "empty batch");
    if (batch.cols != dim_) throw OracleError("dim_mismatch", "feature dimension does not match server");
    dm::Tensor scores(batch.rows, num_classes_);
    for (std::size_t begin = 0; begin < batch.rows; begin += config_.chunk_size) {
        const std::size_t end = std::min(batch.rows, begin + config_.chunk_size);
        dm::Tensor chunk(end - begin, batch.cols);
        std::copy(batch.values.begin() + static_cast<std::ptrdiff_t>(begin * batch.cols),
                  batch.values.begin() + static_cast<std::ptrdiff_t>(end * batch.cols), chunk.values.begin());
        const auto body = request("POST", "/v1/predict", matrix_json("features", chunk));
        try {
            const auto j = nlohmann::json::parse(body);
            const auto& rows = j.at("scores");
            if (rows.size() != chunk.rows) throw OracleError("protocol", "server returned wrong number of rows");
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i].size() != num_classes_) throw OracleError("protocol", "server returned wrong number of classes");
                for (std::size_t c = 0; c < num_classes_; ++c) scores(begin + i, c) = rows[i][c].get<double>();
            }
        } catch (const nlohmann::json::exception& e) {
            throw OracleError("protocol", std::string("malformed /v1/predict response: ") + e.what());
        }
    }
    return scores;
}

}  // namespace dfzsl

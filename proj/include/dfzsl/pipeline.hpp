#pragma once

// Three-stage orchestration (recover -> flpt -> generate -> train-eval) with
// a manifest recording seeds, config hash, timings and every file touched.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dfzsl/feature_generator.hpp"
#include "dfzsl/flpt.hpp"
#include "dfzsl/oracle_service.hpp"
#include "dfzsl/vmf_recovery.hpp"
#include "dfzsl/zsl_classifier.hpp"

namespace dfzsl {

// Exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Exit code 2.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what)
        : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

enum class Stage { recover, flpt, generate, train_eval };

const char* to_string(Stage s);
inline constexpr Stage kAllStages[] = {Stage::recover, Stage::flpt, Stage::generate, Stage::train_eval};

struct PipelinePaths {
    std::filesystem::path weights;        // white-box classifier weights (EMB1, one row per base class)
    std::filesystem::path token_table;    // prompted text mode
    std::filesystem::path text_features;  // frozen text mode, used when no token table is given
    std::filesystem::path split;
    std::filesystem::path test_features;
    std::filesystem::path out_dir = "out";
};

struct PipelineConfig {
    RecoveryMode mode = RecoveryMode::white_box;
    std::uint64_t seed = 0;
    std::string server_url;
    PipelinePaths paths;
    // Artifact path overrides by key (see artifact_keys()); relative to out_dir when not absolute.
    std::map<std::string, std::filesystem::path> outputs;

    RecoveryConfig recovery;
    FlptConfig flpt;
    GenTrainConfig generator;
    std::size_t per_class = 300;
    // false: the final classifier is the untrained enhanced-text classifier.
    bool use_generator = true;
    ClassifierConfig classifier;
    Protocol protocol = Protocol::gzsl;

    int client_attempts = 3;
    int client_backoff_ms = 50;
    int client_timeout_s = 10;

    std::filesystem::path artifact(const std::string& key) const;
    bool prompted_text() const { return !paths.token_table.empty(); }
};

const std::vector<std::string>& artifact_keys();

RecoveryMode parse_mode(const std::string& s);
const char* to_string(RecoveryMode m);

// Parse a JSON config; relative paths are resolved against base_dir.
PipelineConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});

// Reads the file (if any), applies "key.path=value" overrides in order, and
// parses. Override values are JSON when they parse as JSON, else strings;
// relative paths given by overrides resolve against the working directory.
PipelineConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides);

// Canonical JSON of every field, and its FNV-1a 64 hash in hex.
std::string config_json(const PipelineConfig& config);
std::string config_hash(const PipelineConfig& config);

// Checks field invariants and that every input the listed stages need and
// do not produce themselves exists. Throws ValidationError.
void validate(const PipelineConfig& config, std::span<const Stage> stages);

struct FileAccess {
    std::string stage;
    std::string op;  // "read" | "write"
    std::string path;
};

struct StageRecord {
    std::string name;
    std::string status;  // "ok" | "failed"
    double seconds = 0.0;
    std::vector<std::string> reads;
    std::vector<std::string> writes;
    std::string error;
};

struct RunHooks {
    // Every successful server response body (black-box recovery only).
    std::function<void(const std::string&)> on_server_response;
};

struct RunResult {
    std::vector<StageRecord> stages;
    std::vector<FileAccess> file_access;
    std::optional<EvalReport> report;
    std::filesystem::path manifest;
};

// Runs the listed stages in order and writes out_dir/manifest.json after each
// one. A failing stage is recorded, the manifest marked failed, and
// StageError rethrown.
RunResult run_stages(const PipelineConfig& config, std::span<const Stage> stages, const RunHooks& hooks = {});

RunResult run_pipeline(const PipelineConfig& config, const RunHooks& hooks = {});

}  // namespace dfzsl

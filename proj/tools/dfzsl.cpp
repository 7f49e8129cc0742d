// dfzsl command-line front end: the prediction service, the individual
// pipeline stages, the full pipeline, and the synthetic benchmark.

#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <pthread.h>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dfzsl/benchmark.hpp"
#include "dfzsl/oracle_service.hpp"
#include "dfzsl/pipeline.hpp"
#include "json.hpp"

namespace {

using namespace dfzsl;

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct StageFlags {
    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string mode;
    std::string server_url;
    std::optional<double> lambda;
    std::optional<double> alpha;
    std::optional<std::size_t> samples_per_class;
    std::optional<std::size_t> per_class;
    std::string protocol;
    std::string backend;
    std::string weights, token_table, text_features, split, test_features, out;
    std::vector<std::string> sets;
};

void add_stage_flags(CLI::App* cmd, StageFlags& f) {
    cmd->add_option("--config", f.config, "pipeline config JSON");
    cmd->add_option("--out-dir", f.out_dir, "output directory for stage artifacts");
    cmd->add_option("--seed", f.seed, "top-level seed");
    cmd->add_option("--mode", f.mode, "white|black (white-box or black-box server)");
    cmd->add_option("--server-url", f.server_url, "prediction service URL (black-box)");
    cmd->add_option("--lambda", f.lambda, "concentration refinement factor");
    cmd->add_option("--alpha", f.alpha, "visual shift weight");
    cmd->add_option("--samples-per-class", f.samples_per_class, "virtual features per base class");
    cmd->add_option("--per-class", f.per_class, "synthesized features per new class");
    cmd->add_option("--protocol", f.protocol, "gzsl|base-new");
    cmd->add_option("--backend", f.backend, "cvae|cgan");
    cmd->add_option("--weights", f.weights, "classifier weights EMB1 (white-box)");
    cmd->add_option("--token-table", f.token_table, "class token table JSON");
    cmd->add_option("--text-features", f.text_features, "text features EMB1 (frozen text mode)");
    cmd->add_option("--split", f.split, "split JSON {\"base\": [...], \"new\": [...]}");
    cmd->add_option("--test-features", f.test_features, "labelled test features EMB1");
    cmd->add_option("--out", f.out, "path of the stage's main output");
    cmd->add_option("--set", f.sets, "config override key.path=value (repeatable)");
}

std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

PipelineConfig build_config(const StageFlags& f, const char* out_key) {
    std::vector<std::string> o;
    if (!f.out_dir.empty()) o.push_back("paths.out_dir=" + quoted(f.out_dir));
    if (f.seed) o.push_back("seed=" + std::to_string(*f.seed));
    if (!f.mode.empty()) o.push_back("mode=" + quoted(f.mode));
    if (!f.server_url.empty()) o.push_back("server_url=" + quoted(f.server_url));
    if (f.lambda) o.push_back("recovery.lambda=" + nlohmann::json(*f.lambda).dump());
    if (f.alpha) o.push_back("flpt.alpha=" + nlohmann::json(*f.alpha).dump());
    if (f.samples_per_class) o.push_back("recovery.samples_per_class=" + std::to_string(*f.samples_per_class));
    if (f.per_class) o.push_back("generator.per_class=" + std::to_string(*f.per_class));
    if (!f.protocol.empty()) o.push_back("protocol=" + quoted(f.protocol));
    if (!f.backend.empty()) o.push_back("generator.backend=" + quoted(f.backend));
    if (!f.weights.empty()) o.push_back("paths.weights=" + quoted(f.weights));
    if (!f.token_table.empty()) o.push_back("paths.token_table=" + quoted(f.token_table));
    if (!f.text_features.empty()) o.push_back("paths.text_features=" + quoted(f.text_features));
    if (!f.split.empty()) o.push_back("paths.split=" + quoted(f.split));
    if (!f.test_features.empty()) o.push_back("paths.test_features=" + quoted(f.test_features));
    if (!f.out.empty() && out_key) {
        const auto abs = std::filesystem::absolute(f.out).string();
        o.push_back(std::string("outputs.") + out_key + "=" + quoted(abs));
        if (f.out_dir.empty() && f.config.empty())
            o.push_back("paths.out_dir=" + quoted(std::filesystem::path(abs).parent_path().string()));
    }
    o.insert(o.end(), f.sets.begin(), f.sets.end());
    std::optional<std::filesystem::path> file;
    if (!f.config.empty()) file = f.config;
    return load_config(file, o);
}

void print_report(const EvalReport& r) {
    std::printf("protocol=%s base=%.2f new=%.2f H=%.2f\n", to_string(r.protocol), r.base_acc, r.new_acc,
                r.harmonic_mean);
}

int run_stage_command(const StageFlags& f, std::span<const Stage> stages, const char* out_key) {
    const auto config = build_config(f, out_key);
    const auto result = run_stages(config, stages);
    for (const auto& s : result.stages) {
        std::printf("%-10s %-7s %.2fs\n", s.name.c_str(), s.status.c_str(), s.seconds);
        for (const auto& w : s.writes) std::printf("  wrote %s\n", w.c_str());
    }
    if (result.report) print_report(*result.report);
    std::printf("manifest %s\n", result.manifest.string().c_str());
    return 0;
}

int serve(const std::string& weights, const std::string& host, int port, const std::string& mode, std::size_t limit) {
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    PredictionService service(load_server_classifier(weights, parse_score_mode(mode)), limit);
    const int bound = service.start(host, port);
    std::printf("listening on http://%s:%d\n", host.c_str(), bound);
    std::fflush(stdout);
    int sig = 0;
    sigwait(&signals, &sig);
    service.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Data-free zero-shot learning toolkit"};
    app.require_subcommand(1);

    std::string serve_weights, serve_host = "127.0.0.1", score_mode = "cosine";
    int serve_port = 8080;
    std::size_t batch_limit = kServerBatchLimit;
    auto* serve_cmd = app.add_subcommand("serve", "serve a classifier behind the prediction API");
    serve_cmd->add_option("--weights", serve_weights, "classifier weights EMB1")->required();
    serve_cmd->add_option("--host", serve_host, "bind address");
    serve_cmd->add_option("--port", serve_port, "port (0 picks a free one)");
    serve_cmd->add_option("--score-mode", score_mode, "cosine|softmax");
    serve_cmd->add_option("--batch-limit", batch_limit, "maximum rows per request");

    StageFlags recover_f, flpt_f, generate_f, train_f, run_f;
    auto* recover_cmd = app.add_subcommand("recover", "stage 1: recover virtual base features");
    add_stage_flags(recover_cmd, recover_f);
    auto* flpt_cmd = app.add_subcommand("flpt", "stage 2: feature-language prompt tuning");
    add_stage_flags(flpt_cmd, flpt_f);
    auto* generate_cmd = app.add_subcommand("generate", "stage 3a: train the generator and synthesize new classes");
    add_stage_flags(generate_cmd, generate_f);
    auto* train_cmd = app.add_subcommand("train-eval", "stage 3b: train the final classifier and evaluate");
    add_stage_flags(train_cmd, train_f);
    auto* run_cmd = app.add_subcommand("run", "run every stage");
    add_stage_flags(run_cmd, run_f);

    BenchmarkSpec spec;
    std::string bench_dir;
    auto* bench_cmd = app.add_subcommand("make-benchmark", "write the synthetic benchmark dataset");
    bench_cmd->add_option("--out-dir", bench_dir, "output directory")->required();
    bench_cmd->add_option("--dim", spec.dim, "feature dimension");
    bench_cmd->add_option("--base", spec.base_classes, "number of base classes");
    bench_cmd->add_option("--new", spec.new_classes, "number of new classes");
    bench_cmd->add_option("--kappa", spec.kappa, "vMF concentration of the features");
    bench_cmd->add_option("--samples-per-class", spec.samples_per_class, "train and test samples per class");
    bench_cmd->add_option("--noise-deg", spec.noise_deg, "angle between text feature and class mean");
    bench_cmd->add_option("--min-angle", spec.min_angle_deg, "minimum angle between class means");
    bench_cmd->add_option("--seed", spec.seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*serve_cmd) return serve(serve_weights, serve_host, serve_port, score_mode, batch_limit);
        if (*recover_cmd) {
            const Stage s[] = {Stage::recover};
            return run_stage_command(recover_f, s, "virtual_base");
        }
        if (*flpt_cmd) {
            const Stage s[] = {Stage::flpt};
            return run_stage_command(flpt_f, s, "enhanced_base");
        }
        if (*generate_cmd) {
            const Stage s[] = {Stage::generate};
            return run_stage_command(generate_f, s, "synthetic_new");
        }
        if (*train_cmd) {
            const Stage s[] = {Stage::train_eval};
            return run_stage_command(train_f, s, "report");
        }
        if (*run_cmd) return run_stage_command(run_f, kAllStages, "report");
        if (*bench_cmd) {
            const auto b = generate_benchmark(spec);
            const auto files = write_benchmark(b, bench_dir);
            std::printf("benchmark in %s: %zu base, %zu new, d=%zu, min angle %.2f deg, token fit %.9f\n",
                        bench_dir.c_str(), spec.base_classes, spec.new_classes, spec.dim, b.min_pairwise_deg, b.token_fit);
            std::printf("config %s\n", files.pipeline_config.string().c_str());
            return 0;
        }
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const BenchmarkError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const StageError& e) {
        std::fprintf(stderr, "error: stage %s\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitRuntime;
    }
    return 0;
}

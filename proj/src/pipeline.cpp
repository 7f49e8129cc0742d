#include "dfzsl/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dfzsl/rng.hpp"
#include "json.hpp"

namespace dfzsl {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::map<std::string, std::string>& artifact_files() {
    static const std::map<std::string, std::string> files{
        {"virtual_base", "virtual_base.emb1"},
        {"recovered_prototypes", "recovered_prototypes.emb1"},
        {"recovery_log", "recovery.json"},
        {"prompt_state", "prompt_state.json"},
        {"enhanced_base", "enhanced_base.emb1"},
        {"enhanced_text", "enhanced_text.emb1"},
        {"flpt_log", "flpt.json"},
        {"generator", "generator.gen1"},
        {"synthetic_new", "synthetic_new.emb1"},
        {"generator_log", "generator.json"},
        {"classifier_log", "classifier.json"},
        {"report", "report.json"},
        {"report_csv", "report.csv"},
    };
    return files;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ValidationError("config: '" + where + "' must be an object");
    for (const auto& [key, v] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ValidationError("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
    }
}

template <class T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void take_path(const json& j, const char* key, fs::path& out, const fs::path& base) {
    if (!j.contains(key)) return;
    fs::path p = j.at(key).get<std::string>();
    out = (!p.empty() && p.is_relative() && !base.empty()) ? base / p : p;
}

// Seeds of the individual stages, all derived from the top-level seed.
struct StageSeeds {
    std::uint64_t recover, flpt, generate, synthesize, classifier;
};

StageSeeds stage_seeds(std::uint64_t seed) {
    return {derive_seed(seed, {1}), derive_seed(seed, {2}), derive_seed(seed, {3}), derive_seed(seed, {4}),
            derive_seed(seed, {5})};
}

bool contains(std::span<const Stage> stages, Stage s) { return std::find(stages.begin(), stages.end(), s) != stages.end(); }

}  // namespace

const char* to_string(Stage s) {
    switch (s) {
        case Stage::recover: return "recover";
        case Stage::flpt: return "flpt";
        case Stage::generate: return "generate";
        case Stage::train_eval: return "train-eval";
    }
    return "?";
}

const std::vector<std::string>& artifact_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [key, file] : artifact_files()) k.push_back(key);
        return k;
    }();
    return keys;
}

fs::path PipelineConfig::artifact(const std::string& key) const {
    const auto it = outputs.find(key);
    if (it != outputs.end()) return it->second.is_absolute() ? it->second : paths.out_dir / it->second;
    const auto f = artifact_files().find(key);
    if (f == artifact_files().end()) throw std::invalid_argument("unknown artifact '" + key + "'");
    return paths.out_dir / f->second;
}

RecoveryMode parse_mode(const std::string& s) {
    if (s == "white-box" || s == "white") return RecoveryMode::white_box;
    if (s == "black-box" || s == "black") return RecoveryMode::black_box;
    throw ValidationError("unknown mode '" + s + "' (expected white-box|black-box)");
}

const char* to_string(RecoveryMode m) { return m == RecoveryMode::white_box ? "white-box" : "black-box"; }

PipelineConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    PipelineConfig c;
    try {
        check_keys(j, "", {"mode", "seed", "server_url", "paths", "outputs", "recovery", "flpt", "generator",
                           "classifier", "protocol", "client"});
        if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
        take(j, "seed", c.seed);
        take(j, "server_url", c.server_url);
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            check_keys(p, "paths", {"weights", "token_table", "text_features", "split", "test_features", "out_dir"});
            take_path(p, "weights", c.paths.weights, base_dir);
            take_path(p, "token_table", c.paths.token_table, base_dir);
            take_path(p, "text_features", c.paths.text_features, base_dir);
            take_path(p, "split", c.paths.split, base_dir);
            take_path(p, "test_features", c.paths.test_features, base_dir);
            take_path(p, "out_dir", c.paths.out_dir, base_dir);
        }
        if (j.contains("outputs")) {
            const auto& o = j.at("outputs");
            if (!o.is_object()) throw ValidationError("config: 'outputs' must be an object");
            for (const auto& [key, v] : o.items()) {
                if (!artifact_files().count(key)) throw ValidationError("config: unknown key 'outputs." + key + "'");
                c.outputs[key] = v.get<std::string>();
            }
        }
        if (j.contains("recovery")) {
            const auto& r = j.at("recovery");
            check_keys(r, "recovery",
                       {"samples_per_class", "epochs", "learning_rate", "batch_size", "lambda", "resample_each_epoch"});
            take(r, "samples_per_class", c.recovery.samples_per_class);
            take(r, "epochs", c.recovery.epochs);
            take(r, "learning_rate", c.recovery.learning_rate);
            take(r, "batch_size", c.recovery.batch_size);
            take(r, "lambda", c.recovery.lambda);
            take(r, "resample_each_epoch", c.recovery.resample_each_epoch);
        }
        if (j.contains("flpt")) {
            const auto& f = j.at("flpt");
            check_keys(f, "flpt", {"epochs", "batch_size", "learning_rate", "alpha"});
            take(f, "epochs", c.flpt.epochs);
            take(f, "batch_size", c.flpt.batch_size);
            take(f, "learning_rate", c.flpt.learning_rate);
            take(f, "alpha", c.flpt.alpha);
        }
        if (j.contains("generator")) {
            const auto& g = j.at("generator");
            check_keys(g, "generator", {"backend", "epochs", "batch_size", "learning_rate", "kl_weight", "latent_dim",
                                        "per_class", "enabled"});
            if (g.contains("backend")) c.generator.backend = parse_backend(g.at("backend").get<std::string>());
            take(g, "epochs", c.generator.epochs);
            take(g, "batch_size", c.generator.batch_size);
            take(g, "learning_rate", c.generator.learning_rate);
            take(g, "kl_weight", c.generator.kl_weight);
            take(g, "latent_dim", c.generator.latent_dim);
            take(g, "per_class", c.per_class);
            take(g, "enabled", c.use_generator);
        }
        if (j.contains("classifier")) {
            const auto& k = j.at("classifier");
            check_keys(k, "classifier", {"epochs", "batch_size", "learning_rate", "tau"});
            take(k, "epochs", c.classifier.epochs);
            take(k, "batch_size", c.classifier.batch_size);
            take(k, "learning_rate", c.classifier.learning_rate);
            take(k, "tau", c.classifier.tau);
        }
        if (j.contains("protocol")) c.protocol = parse_protocol(j.at("protocol").get<std::string>());
        if (j.contains("client")) {
            const auto& k = j.at("client");
            check_keys(k, "client", {"max_attempts", "backoff_ms", "timeout_s"});
            take(k, "max_attempts", c.client_attempts);
            take(k, "backoff_ms", c.client_backoff_ms);
            take(k, "timeout_s", c.client_timeout_s);
        }
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    c.recovery.mode = c.mode;
    const auto seeds = stage_seeds(c.seed);
    c.recovery.seed = seeds.recover;
    c.flpt.seed = seeds.flpt;
    c.generator.seed = seeds.generate;
    c.classifier.seed = seeds.classifier;
    return c;
}

PipelineConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
    json j = json::object();
    if (file) {
        std::ifstream in(*file);
        if (!in) throw ValidationError("cannot open config '" + file->string() + "'");
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw ValidationError("config '" + file->string() + "' is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw ValidationError("config must be a JSON object");
        const fs::path base = file->parent_path();
        if (j.contains("paths") && j["paths"].is_object())
            for (auto& [key, v] : j["paths"].items())
                if (v.is_string()) {
                    const fs::path p = v.get<std::string>();
                    if (!p.empty() && p.is_relative() && !base.empty()) v = (base / p).string();
                }
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + o + "' is not key=value");
        const std::string key = o.substr(0, eq), value = o.substr(eq + 1);
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            parsed = value;
        }
        json* node = &j;
        std::stringstream ks(key);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(ks, part, '.')) parts.push_back(part);
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
            node = &(*node)[parts[i]];
            if (!node->is_object()) throw ValidationError("override '" + key + "' descends into a non-object");
        }
        (*node)[parts.back()] = parsed;
    }
    return parse_config(j.dump(), {});
}

std::string config_json(const PipelineConfig& c) {
    json j;
    j["mode"] = to_string(c.mode);
    j["seed"] = c.seed;
    j["server_url"] = c.server_url;
    j["paths"] = {{"weights", c.paths.weights.string()},         {"token_table", c.paths.token_table.string()},
                  {"text_features", c.paths.text_features.string()}, {"split", c.paths.split.string()},
                  {"test_features", c.paths.test_features.string()}, {"out_dir", c.paths.out_dir.string()}};
    json outputs = json::object();
    for (const auto& [k, v] : c.outputs) outputs[k] = v.string();
    j["outputs"] = outputs;
    j["recovery"] = {{"samples_per_class", c.recovery.samples_per_class},
                     {"epochs", c.recovery.epochs},
                     {"learning_rate", c.recovery.learning_rate},
                     {"batch_size", c.recovery.batch_size},
                     {"lambda", c.recovery.lambda},
                     {"resample_each_epoch", c.recovery.resample_each_epoch}};
    j["flpt"] = {{"epochs", c.flpt.epochs},
                 {"batch_size", c.flpt.batch_size},
                 {"learning_rate", c.flpt.learning_rate},
                 {"alpha", c.flpt.alpha}};
    j["generator"] = {{"backend", to_string(c.generator.backend)},
                      {"epochs", c.generator.epochs},
                      {"batch_size", c.generator.batch_size},
                      {"learning_rate", c.generator.learning_rate},
                      {"kl_weight", c.generator.kl_weight},
                      {"latent_dim", c.generator.latent_dim},
                      {"per_class", c.per_class},
                      {"enabled", c.use_generator}};
    j["classifier"] = {{"epochs", c.classifier.epochs},
                       {"batch_size", c.classifier.batch_size},
                       {"learning_rate", c.classifier.learning_rate},
                       {"tau", c.classifier.tau}};
    j["protocol"] = to_string(c.protocol);
    j["client"] = {{"max_attempts", c.client_attempts},
                   {"backoff_ms", c.client_backoff_ms},
                   {"timeout_s", c.client_timeout_s}};
    return j.dump(2);
}

std::string config_hash(const PipelineConfig& c) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(config_json(c))));
    return buf;
}

void validate(const PipelineConfig& c, std::span<const Stage> stages) {
    const auto require_file = [](const fs::path& p, const std::string& what) {
        if (p.empty()) throw ValidationError(what + " path is required");
        if (!fs::is_regular_file(p)) throw ValidationError(what + " '" + p.string() + "' does not exist");
    };
    const bool rec = contains(stages, Stage::recover), fl = contains(stages, Stage::flpt),
               gen = contains(stages, Stage::generate), te = contains(stages, Stage::train_eval);
    try {
        c.recovery.validate();
        if (c.use_generator) c.generator.validate();
        c.classifier.validate();
    } catch (const std::exception& e) {
        throw ValidationError(e.what());
    }
    if (c.flpt.batch_size == 0) throw ValidationError("flpt batch size must be positive");
    if (!(c.flpt.learning_rate > 0.0)) throw ValidationError("flpt learning rate must be positive");
    if (!(c.flpt.alpha >= 0.0)) throw ValidationError("flpt alpha must be >= 0");
    if (c.client_attempts < 1) throw ValidationError("client max_attempts must be >= 1");
    if (c.paths.out_dir.empty()) throw ValidationError("output directory is required");

    const auto require_text = [&] {
        if (c.prompted_text()) require_file(c.paths.token_table, "token table");
        else require_file(c.paths.text_features, "text features (or a token table)");
    };
    if (rec) {
        if (c.mode == RecoveryMode::black_box) {
            if (c.server_url.empty()) throw ValidationError("black-box mode requires server_url");
            require_file(c.paths.split, "split");
            require_text();
        } else {
            require_file(c.paths.weights, "weights");
            if (!c.paths.split.empty()) require_file(c.paths.split, "split");
        }
    }
    if (fl || gen || te) require_file(c.paths.split, "split");
    if (fl) {
        require_text();
        if (!rec) require_file(c.artifact("virtual_base"), "virtual base features");
    }
    if (gen && c.use_generator && !fl) {
        require_file(c.artifact("enhanced_base"), "enhanced base features");
        require_file(c.artifact("enhanced_text"), "enhanced text features");
    }
    if (te) {
        require_file(c.paths.test_features, "test features");
        if (!fl) {
            require_file(c.artifact("enhanced_text"), "enhanced text features");
            require_file(c.artifact("prompt_state"), "prompt state");
            if (c.use_generator) require_file(c.artifact("enhanced_base"), "enhanced base features");
        }
        if (c.use_generator && !gen) require_file(c.artifact("synthetic_new"), "synthesized new-class features");
    }
}

// ---------------------------------------------------------------- stages

namespace {

class Runner {
public:
    Runner(const PipelineConfig& c, const RunHooks& hooks) : c_(c), hooks_(hooks) {}

    RunResult result;

    void run(Stage s) {
        StageRecord rec;
        rec.name = to_string(s);
        current_ = &rec;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            switch (s) {
                case Stage::recover: recover(); break;
                case Stage::flpt: flpt(); break;
                case Stage::generate: generate(); break;
                case Stage::train_eval: train_eval(); break;
            }
            rec.status = skipped_ ? "skipped" : "ok";
        } catch (const std::exception& e) {
            rec.status = "failed";
            rec.error = e.what();
        }
        skipped_ = false;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        current_ = nullptr;
        result.stages.push_back(rec);
        write_manifest();
        if (rec.status == "failed") throw StageError(rec.name, rec.error);
    }

    void write_manifest() {
        fs::create_directories(c_.paths.out_dir);
        const auto seeds = stage_seeds(c_.seed);
        json m;
        m["config_hash"] = config_hash(c_);
        m["config"] = json::parse(config_json(c_));
        m["mode"] = to_string(c_.mode);
        m["seed"] = c_.seed;
        m["seeds"] = {{"recover", seeds.recover},
                      {"flpt", seeds.flpt},
                      {"generate", seeds.generate},
                      {"synthesize", seeds.synthesize},
                      {"classifier", seeds.classifier}};
        bool failed = false;
        json stages = json::array();
        for (const auto& s : result.stages) {
            json js{{"name", s.name}, {"status", s.status}, {"seconds", s.seconds}, {"reads", s.reads}, {"writes", s.writes}};
            if (!s.error.empty()) js["error"] = s.error;
            if (s.status == "failed") {
                failed = true;
                m["failed_stage"] = s.name;
            }
            stages.push_back(js);
        }
        m["status"] = failed ? "failed" : "ok";
        m["stages"] = stages;
        json access = json::array();
        for (const auto& a : result.file_access) access.push_back({{"stage", a.stage}, {"op", a.op}, {"path", a.path}});
        m["file_access"] = access;
        result.manifest = c_.paths.out_dir / "manifest.json";
        std::ofstream(result.manifest, std::ios::trunc) << m.dump(2) << "\n";
    }

private:
    void note(const char* op, const fs::path& p) {
        const std::string path = p.lexically_normal().string();
        result.file_access.push_back({current_->name, op, path});
        (std::string(op) == "read" ? current_->reads : current_->writes).push_back(path);
    }
    EmbeddingSet read_set(const fs::path& p) {
        note("read", p);
        return read_emb1(p);
    }
    void write_set(const EmbeddingSet& s, const fs::path& p) {
        note("write", p);
        write_emb1(s, p);
    }
    SplitSpec read_split_file() {
        note("read", c_.paths.split);
        return read_split(c_.paths.split);
    }
    void write_json(const json& j, const fs::path& p) {
        note("write", p);
        std::ofstream out(p, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
        out << j.dump(2) << "\n";
    }

    TextModel text_model(std::size_t feature_dim) {
        if (c_.prompted_text()) {
            note("read", c_.paths.token_table);
            return TextModel::prompted(read_token_table(c_.paths.token_table), feature_dim);
        }
        const auto protos = prototypes_from_set(read_set(c_.paths.text_features));
        if (protos.dim() != feature_dim) throw std::runtime_error("text features do not match the feature dimension");
        return TextModel::frozen(protos);
    }

    void recover() {
        fs::create_directories(c_.paths.out_dir);
        if (c_.mode == RecoveryMode::white_box) {
            auto weights = prototypes_from_set(read_set(c_.paths.weights));
            if (!c_.paths.split.empty()) weights = weights.select(read_split_file().base);
            const auto r = recover_whitebox(weights, c_.recovery);
            write_set(r.virtual_base, c_.artifact("virtual_base"));
            write_set(prototypes_to_set(r.params.prototypes), c_.artifact("recovered_prototypes"));
            write_json({{"mode", "white-box"},
                        {"kappa_text", r.params.kappa_text},
                        {"lambda", r.params.lambda},
                        {"samples_per_class", c_.recovery.samples_per_class}},
                       c_.artifact("recovery_log"));
            return;
        }
        const auto split = read_split_file();
        ClientConfig cc;
        cc.url = c_.server_url;
        cc.max_attempts = c_.client_attempts;
        cc.backoff = std::chrono::milliseconds(c_.client_backoff_ms);
        cc.timeout = std::chrono::seconds(c_.client_timeout_s);
        cc.on_response = hooks_.on_server_response;
        RemoteOracle server(cc);
        const auto text = text_model(server.dim());
        const auto state = init_prompt_state(text, c_.flpt.alpha, c_.flpt.seed);
        const auto protos = text.features(state, split.base);
        const auto r = recover_blackbox(protos, server, c_.recovery);
        write_set(r.virtual_base, c_.artifact("virtual_base"));
        write_set(prototypes_to_set(r.learned), c_.artifact("recovered_prototypes"));
        write_json({{"mode", "black-box"},
                    {"kappa_text", r.kappa_text},
                    {"lambda", c_.recovery.lambda},
                    {"samples_per_class", c_.recovery.samples_per_class},
                    {"initial_loss", r.initial_loss},
                    {"final_loss", r.final_loss},
                    {"converged", r.converged},
                    {"server_queries", r.server_queries},
                    {"http_requests", server.requests_sent()},
                    {"epoch_losses", r.epoch_losses}},
                   c_.artifact("recovery_log"));
    }

    void flpt() {
        const auto split = read_split_file();
        const auto virtual_base = read_set(c_.artifact("virtual_base"));
        const auto text = text_model(virtual_base.dim);
        const auto r = train_flpt(virtual_base, text, c_.flpt);
        std::vector<std::string> names = split.base;
        names.insert(names.end(), split.novel.begin(), split.novel.end());
        const auto enhanced_text = text.features(r.state, names);
        note("write", c_.artifact("prompt_state"));
        write_prompt_state(r.state, c_.artifact("prompt_state"));
        write_set(r.enhanced, c_.artifact("enhanced_base"));
        write_set(prototypes_to_set(enhanced_text), c_.artifact("enhanced_text"));
        write_json({{"initial_loss", r.initial_loss}, {"epoch_losses", r.epoch_losses}}, c_.artifact("flpt_log"));
    }

    void generate() {
        if (!c_.use_generator) {
            skipped_ = true;
            return;
        }
        const auto split = read_split_file();
        const auto enhanced = read_set(c_.artifact("enhanced_base"));
        const auto text = prototypes_from_set(read_set(c_.artifact("enhanced_text")));
        GeneratorLog log;
        const auto state = train_generator(enhanced, text.select(split.base), c_.generator, &log);
        const auto synthetic = synthesize(state, text.select(split.novel), c_.per_class, stage_seeds(c_.seed).synthesize);
        note("write", c_.artifact("generator"));
        write_generator(state, c_.artifact("generator"));
        write_set(synthetic, c_.artifact("synthetic_new"));
        write_json({{"backend", to_string(state.backend)},
                    {"initial_loss", log.initial_loss},
                    {"min_kl", log.min_kl},
                    {"epoch_losses", log.epoch_losses}},
                   c_.artifact("generator_log"));
    }

    void train_eval() {
        const auto split = read_split_file();
        const auto text = prototypes_from_set(read_set(c_.artifact("enhanced_text")));
        note("read", c_.artifact("prompt_state"));
        const auto state = read_prompt_state(c_.artifact("prompt_state"));
        std::vector<std::string> names = split.base;
        names.insert(names.end(), split.novel.begin(), split.novel.end());
        const auto all_text = text.select(names);
        const auto base_text = text.select(split.base);
        const auto new_text = text.select(split.novel);

        std::vector<double> losses_base, losses_new;
        EvalReport report;
        const auto test = apply_split(read_set(c_.paths.test_features), split);
        const auto test_base = enhance_features(test.base, state);
        const auto test_new = enhance_features(test.novel, state);
        if (c_.protocol == Protocol::gzsl) {
            LinearClassifier clf;
            if (c_.use_generator) {
                const auto train = merge(read_set(c_.artifact("enhanced_base")), read_set(c_.artifact("synthetic_new")));
                clf = train_classifier(train, all_text, c_.classifier, &losses_base);
            } else {
                clf = text_classifier(all_text, c_.classifier.tau);
            }
            report = evaluate_gzsl(clf, test_base, test_new);
        } else {
            LinearClassifier clf_base, clf_new;
            if (c_.use_generator) {
                clf_base = train_classifier(read_set(c_.artifact("enhanced_base")), base_text, c_.classifier, &losses_base);
                clf_new = train_classifier(read_set(c_.artifact("synthetic_new")), new_text, c_.classifier, &losses_new);
            } else {
                clf_base = text_classifier(base_text, c_.classifier.tau);
                clf_new = text_classifier(new_text, c_.classifier.tau);
            }
            report = evaluate_base_to_new(clf_base, clf_new, test_base, test_new);
        }
        note("write", c_.artifact("report"));
        write_report_json(report, c_.artifact("report"));
        note("write", c_.artifact("report_csv"));
        write_report_csv(report, c_.artifact("report_csv"));
        json log{{"epoch_losses", losses_base}};
        if (c_.protocol == Protocol::base_to_new) log["new_space_epoch_losses"] = losses_new;
        write_json(log, c_.artifact("classifier_log"));
        result.report = report;
    }

    const PipelineConfig& c_;
    const RunHooks& hooks_;
    StageRecord* current_ = nullptr;
    bool skipped_ = false;
};

}  // namespace

RunResult run_stages(const PipelineConfig& config, std::span<const Stage> stages, const RunHooks& hooks) {
    validate(config, stages);
    fs::create_directories(config.paths.out_dir);
    Runner runner(config, hooks);
    for (Stage s : stages) runner.run(s);
    if (stages.empty()) runner.write_manifest();
    return std::move(runner.result);
}

RunResult run_pipeline(const PipelineConfig& config, const RunHooks& hooks) {
    return run_stages(config, kAllStages, hooks);
}

}  // namespace dfzsl

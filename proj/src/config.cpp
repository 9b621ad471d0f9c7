#include "emobooth/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "emobooth/common.hpp"
#include "emobooth/external_backend.hpp"
#include "emobooth/toy_backend.hpp"

extern char** environ;

namespace emobooth {

using nlohmann::json;

namespace {

json config_to_json(const RunConfig& c) {
    json j;
    j["backend"] = {{"kind", c.backend.kind},
                    {"checkpoint_path", c.backend.checkpoint_path},
                    {"image_size", c.backend.image_size},
                    {"hidden_channels", c.backend.hidden_channels},
                    {"time_features", c.backend.time_features},
                    {"init_seed", c.backend.init_seed},
                    {"schedule_steps", c.backend.schedule_steps}};
    j["embedder"] = {{"kind", c.embedder.kind},
                     {"dim", c.embedder.dim},
                     {"seed", c.embedder.seed},
                     {"cache_path", c.embedder.cache_path}};
    j["injection"] = {{"beta", c.injection.beta},
                      {"lambda_prior", c.injection.lambda_prior},
                      {"learning_rate", c.injection.learning_rate},
                      {"steps", c.injection.steps},
                      {"batch_size", c.injection.batch_size},
                      {"seed", c.injection.seed},
                      {"checkpoint_every", c.injection.checkpoint_every}};
    j["decoder"] = {{"mapping_hidden_sizes", c.decoder.mapping_hidden_sizes},
                    {"prefix_length", c.decoder.prefix_length},
                    {"lm_identity", c.decoder.lm_identity},
                    {"learning_rate", c.decoder.learning_rate},
                    {"epochs", c.decoder.epochs},
                    {"max_decode_tokens", c.decoder.max_decode_tokens}};
    j["eval"] = {{"n_normal_texts", c.eval.n_normal_texts},
                 {"n_trigger_texts", c.eval.n_trigger_texts},
                 {"images_per_text", c.eval.images_per_text},
                 {"sampling_steps", c.eval.sampling_steps}};
    j["cluster"] = {{"k", c.cluster.k},
                    {"max_iter", c.cluster.max_iter},
                    {"sample_count", c.cluster.sample_count},
                    {"sample_scale", c.cluster.sample_scale},
                    {"corpus_size", c.cluster.corpus_size}};
    j["scenario_preset"] = c.scenario_preset;
    j["dataset_image_size"] = c.dataset_image_size;
    j["global_seed"] = c.global_seed;
    return j;
}

void config_from_json(const json& j, RunConfig& c) {
    auto get = [](const json& obj, const char* key, auto& target) {
        if (obj.contains(key)) target = obj.at(key).get<std::decay_t<decltype(target)>>();
    };
    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        get(b, "kind", c.backend.kind);
        get(b, "checkpoint_path", c.backend.checkpoint_path);
        get(b, "image_size", c.backend.image_size);
        get(b, "hidden_channels", c.backend.hidden_channels);
        get(b, "time_features", c.backend.time_features);
        get(b, "init_seed", c.backend.init_seed);
        get(b, "schedule_steps", c.backend.schedule_steps);
    }
    if (j.contains("embedder")) {
        const auto& e = j.at("embedder");
        get(e, "kind", c.embedder.kind);
        get(e, "dim", c.embedder.dim);
        get(e, "seed", c.embedder.seed);
        get(e, "cache_path", c.embedder.cache_path);
    }
    if (j.contains("injection")) {
        const auto& i = j.at("injection");
        get(i, "beta", c.injection.beta);
        get(i, "lambda_prior", c.injection.lambda_prior);
        get(i, "learning_rate", c.injection.learning_rate);
        get(i, "steps", c.injection.steps);
        get(i, "batch_size", c.injection.batch_size);
        get(i, "seed", c.injection.seed);
        get(i, "checkpoint_every", c.injection.checkpoint_every);
    }
    if (j.contains("decoder")) {
        const auto& d = j.at("decoder");
        get(d, "mapping_hidden_sizes", c.decoder.mapping_hidden_sizes);
        get(d, "prefix_length", c.decoder.prefix_length);
        get(d, "lm_identity", c.decoder.lm_identity);
        get(d, "learning_rate", c.decoder.learning_rate);
        get(d, "epochs", c.decoder.epochs);
        get(d, "max_decode_tokens", c.decoder.max_decode_tokens);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        get(e, "n_normal_texts", c.eval.n_normal_texts);
        get(e, "n_trigger_texts", c.eval.n_trigger_texts);
        get(e, "images_per_text", c.eval.images_per_text);
        get(e, "sampling_steps", c.eval.sampling_steps);
    }
    if (j.contains("cluster")) {
        const auto& k = j.at("cluster");
        get(k, "k", c.cluster.k);
        get(k, "max_iter", c.cluster.max_iter);
        get(k, "sample_count", c.cluster.sample_count);
        get(k, "sample_scale", c.cluster.sample_scale);
        get(k, "corpus_size", c.cluster.corpus_size);
    }
    get(j, "scenario_preset", c.scenario_preset);
    get(j, "dataset_image_size", c.dataset_image_size);
    get(j, "global_seed", c.global_seed);
}

// EMOBOOTH_<seg>__<seg> -> JSON pointer; values parsed as JSON when possible.
void apply_env_overrides(json& j) {
    constexpr const char* prefix = "EMOBOOTH_";
    for (char** env = environ; *env != nullptr; ++env) {
        std::string entry(*env);
        if (entry.rfind(prefix, 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        std::string key = entry.substr(9, eq - 9);
        std::string value = entry.substr(eq + 1);

        std::string pointer;
        std::size_t start = 0;
        while (start <= key.size()) {
            auto sep = key.find("__", start);
            std::string seg = key.substr(start, sep == std::string::npos ? std::string::npos : sep - start);
            pointer += "/" + seg;
            if (sep == std::string::npos) break;
            start = sep + 2;
        }
        json parsed;
        try {
            parsed = json::parse(value);
        } catch (const json::exception&) {
            parsed = value;  // plain string
        }
        j[json::json_pointer(pointer)] = parsed;
    }
}

}  // namespace

std::string RunConfig::to_json() const { return config_to_json(*this).dump(2); }

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::from_json_text(const std::string& text, bool apply_env) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    if (apply_env) apply_env_overrides(j);
    RunConfig c;
    try {
        config_from_json(j, c);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("config field error: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config file unreadable: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text, true);
}

std::shared_ptr<const JointEmbedder> make_embedder(const EmbedderConfig& cfg) {
    if (cfg.kind == "toy") {
        return std::make_shared<ToyJointEmbedder>(cfg.dim, cfg.seed);
    }
    throw ValidationError("embedder kind '" + cfg.kind +
                          "' is not a joint embedder; pipeline commands require kind \"toy\"");
}

std::unique_ptr<DiffusionBackend> make_backend(const RunConfig& cfg,
                                               std::shared_ptr<const JointEmbedder> embedder) {
    if (cfg.backend.kind == "toy") {
        ToyBackendConfig tc;
        tc.image_size = cfg.backend.image_size;
        tc.hidden_channels = cfg.backend.hidden_channels;
        tc.time_features = cfg.backend.time_features;
        tc.init_seed = cfg.backend.init_seed;
        tc.schedule_steps = cfg.backend.schedule_steps;
        return std::make_unique<ToyDenoiserBackend>(tc, std::move(embedder));
    }
    if (cfg.backend.kind == "external_pretrained") {
        if (cfg.backend.checkpoint_path.empty()) {
            throw ValidationError("backend kind external_pretrained requires checkpoint_path");
        }
        return ExternalCheckpointBackend::load(cfg.backend.checkpoint_path, std::move(embedder));
    }
    throw ValidationError("unknown backend kind: " + cfg.backend.kind);
}

std::unique_ptr<DiffusionBackend> load_backend(const RunConfig& cfg, const std::string& model_path,
                                               std::shared_ptr<const JointEmbedder> embedder) {
    namespace fs = std::filesystem;
    (void)cfg;
    if (fs::is_directory(model_path)) {
        return ExternalCheckpointBackend::load(model_path, std::move(embedder));
    }
    return ToyDenoiserBackend::load(model_path, std::move(embedder));
}

}  // namespace emobooth

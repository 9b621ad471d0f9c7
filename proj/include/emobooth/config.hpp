#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "emobooth/backend.hpp"
#include "emobooth/common.hpp"
#include "emobooth/dataset.hpp"
#include "emobooth/decoder.hpp"
#include "emobooth/embedding.hpp"
#include "emobooth/injection.hpp"

namespace emobooth {

struct EmbedderConfig {
    std::string kind = "toy";  // "toy" | "cache"
    int dim = 48;
    std::uint64_t seed = 7;
    std::string cache_path;  // for kind == "cache"
};

struct BackendConfig {
    std::string kind = "toy";  // "toy" | "external_pretrained"
    std::string checkpoint_path;  // external checkpoint directory, or a saved toy state
    int image_size = 32;
    int hidden_channels = 16;
    int time_features = 8;
    std::uint64_t init_seed = 0x10a2;
    int schedule_steps = 1000;
};

struct EvalProtocolConfig {
    int n_normal_texts = 50;
    int n_trigger_texts = 30;
    int images_per_text = 8;
    int sampling_steps = 20;
};

struct ClusterConfig {
    int k = 1;
    int max_iter = 100;
    int sample_count = 30;   // C: sampled embeddings per emotion
    double sample_scale = 1.0;
    int corpus_size = 100;   // H requested from the generation prompt
};

struct RunConfig {
    BackendConfig backend;
    EmbedderConfig embedder;
    InjectionConfig injection;
    DecoderConfig decoder;
    EvalProtocolConfig eval;
    ClusterConfig cluster;
    std::string scenario_preset = "auto";  // "um" | "m" | "auto" (from the case)
    int dataset_image_size = 512;
    std::uint64_t global_seed = 1234;

    std::uint64_t stage_seed(const std::string& stage) const { return derive_seed(global_seed, stage); }

    std::string to_json() const;

    // Loads a JSON config file, then applies environment overrides of the form
    // EMOBOOTH_<section>__<field> (double underscore separates path segments),
    // e.g. EMOBOOTH_injection__beta=0.5, EMOBOOTH_global_seed=9.
    static RunConfig load(const std::string& path);
    static RunConfig from_json_text(const std::string& text, bool apply_env = true);
    static RunConfig defaults();
};

std::shared_ptr<const JointEmbedder> make_embedder(const EmbedderConfig& cfg);
std::unique_ptr<DiffusionBackend> make_backend(const RunConfig& cfg,
                                               std::shared_ptr<const JointEmbedder> embedder);
std::unique_ptr<DiffusionBackend> load_backend(const RunConfig& cfg, const std::string& model_path,
                                               std::shared_ptr<const JointEmbedder> embedder);

}  // namespace emobooth

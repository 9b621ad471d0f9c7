#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "emobooth/backend.hpp"
#include "emobooth/emotion.hpp"

namespace emobooth {

// Backdoor texts paired index-wise with their trigger-stripped versions.
struct TextPairSet {
    std::vector<std::string> backdoor_texts;
    std::vector<std::string> normal_texts;

    std::size_t size() const { return backdoor_texts.size(); }
    bool empty() const { return backdoor_texts.empty(); }
};

struct InjectionConfig {
    double beta = 0.6;          // probability of the normal branch
    double lambda_prior = 1.0;  // prior-preservation weight
    double learning_rate = 1e-6;
    int steps = 1000;
    int batch_size = 2;
    std::uint64_t seed = 0;
    int checkpoint_every = 100;

    void validate() const;
};

struct TraceRecord {
    int step = 0;
    int sample = 0;
    char branch = 'T';  // 'T' target branch, 'N' normal branch
    double t = 0.0;
    double l1 = 0.0;
    double l2 = 0.0;
    double lpri = 0.0;
    double total = 0.0;
};

struct TrainingTrace {
    std::vector<TraceRecord> records;

    double normal_branch_fraction() const;
    void write_csv(const std::string& path) const;
};

// Removes whole-word lexicon matches, collapses whitespace, drops dangling
// punctuation, and re-agrees a/an with the following word.
std::string derive_normal_text(const std::string& text, const EmotionSpec& spec);

// Pairs every backdoor text with its derived normal text. Inputs must pass
// the trigger-validity filter; degenerate derivations are reported by index.
TextPairSet build_text_pairs(const std::vector<std::string>& backdoor_texts, const EmotionSpec& spec);

// Prior pair from a frozen pre-attack model: ("a <subject>", generated image).
std::pair<std::string, Image> generate_prior_pair(const DiffusionBackend& frozen_model,
                                                  const EmotionSpec& spec, std::uint64_t seed,
                                                  int sampling_steps = 20);

// omega(t) * || predict(alpha*ref + sigma*noise, t, text) - ref ||_2^2
LossValue reconstruction_loss(const DiffusionBackend& model, const std::string& text, const Image& reference,
                              double t, const Image& noise, const NoiseSchedule& schedule,
                              bool with_grad = true);

LossValue loss_target(const DiffusionBackend& model, const std::string& backdoor_text, const Image& target,
                      double t, const Image& noise, const NoiseSchedule& schedule, bool with_grad = true);
LossValue loss_normal(const DiffusionBackend& model, const std::string& normal_text, const Image& normal,
                      double t, const Image& noise, const NoiseSchedule& schedule, bool with_grad = true);
LossValue loss_prior(const DiffusionBackend& model, const std::string& prior_text, const Image& prior,
                     double t, const Image& noise, const NoiseSchedule& schedule, bool with_grad = true);

struct InjectionResult {
    TrainingTrace trace;
    std::string last_checkpoint;  // empty when checkpointing is disabled
};

// The probabilistic fine-tuning loop: per sample draw p ~ U(0,1]; p > beta
// takes the target branch (backdoor text -> target image), p <= beta the
// normal branch; both add lambda * prior loss. Texts and images are drawn
// uniformly under the run seed; the model takes one aggregated step per
// batch. Checkpoints land in checkpoint_dir when non-empty; a non-finite
// loss aborts with the last good checkpoint path.
InjectionResult run_injection(DiffusionBackend& model, const TextPairSet& pairs,
                              const std::vector<Image>& targets, const std::vector<Image>& normals,
                              const std::string& prior_text, const Image& prior_image,
                              const InjectionConfig& config, const std::string& checkpoint_dir = "");

}  // namespace emobooth

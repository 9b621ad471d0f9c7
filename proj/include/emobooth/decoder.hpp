#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "emobooth/embedding.hpp"
#include "emobooth/emotion.hpp"

namespace emobooth {

struct DecoderConfig {
    // Layer output sizes of the mapping network. Empty selects the default
    // {2*d, prefix_length*lm_embed_dim}. The final size must equal
    // prefix_length*lm_embed_dim; a projection is appended otherwise.
    std::vector<int> mapping_hidden_sizes;
    int prefix_length = 10;
    std::string lm_identity = "toy-lm-v1";
    double learning_rate = 1e-2;
    int epochs = 200;
    int max_decode_tokens = 24;

    void validate() const;
};

// Frozen word-level autoregressive LM. All parameters are a pure function
// of (identity, vocab), generated once at construction and never updated;
// only the mapping network that feeds it is trainable.
class ToyLanguageModel {
public:
    static constexpr int kBos = 0;
    static constexpr int kEot = 1;

    ToyLanguageModel(const std::string& identity, std::vector<std::string> vocab, int prefix_length,
                     int max_positions);

    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    int embed_dim() const { return embed_dim_; }
    int prefix_length() const { return prefix_length_; }
    const std::vector<std::string>& vocab() const { return vocab_; }
    int token_id(const std::string& word) const;  // -1 if absent

    // Prefix slots (prefix_length * embed_dim, flattened) -> conditioning vector.
    Eigen::VectorXd condition(const Eigen::VectorXd& slots) const;
    // d(condition)/d(slots) transpose-apply for backprop.
    Eigen::VectorXd condition_vjp(const Eigen::VectorXd& slots, const Eigen::VectorXd& upstream) const;

    struct StepForward {
        Eigen::VectorXd hidden;
        Eigen::VectorXd logits;
        int position = 0;
    };
    StepForward step(const Eigen::VectorXd& cond, int prev_token, int position) const;
    // Gradient of a step's loss w.r.t. the conditioning vector.
    Eigen::VectorXd step_vjp_cond(const StepForward& fwd, const Eigen::VectorXd& dlogits) const;

    std::uint64_t params_hash() const;

private:
    std::vector<std::string> vocab_;
    int embed_dim_;
    int prefix_length_;
    Eigen::MatrixXd tok_embed_;    // V x m
    Eigen::MatrixXd pos_embed_;    // maxpos x m
    Eigen::MatrixXd pos_gate_;     // maxpos x m, per-position view of the prefix
    Eigen::MatrixXd cond_proj_;    // m x m
    Eigen::MatrixXd out_proj_;     // V x m
    Eigen::MatrixXd cond_out_;     // V x m, direct prefix -> logits path
    Eigen::VectorXd out_bias_;     // V
    Eigen::MatrixXd prefix_proj_;  // m x (P*m)
    Eigen::VectorXd prefix_bias_;  // m
};

struct MappingNetwork {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    Eigen::VectorXd forward(const Eigen::VectorXd& input) const;
};

struct DecoderState {
    static constexpr std::uint32_t kFormatVersion = 1;

    DecoderConfig config;
    std::vector<std::string> vocab;
    int input_dim = 0;  // d of the training embedder
    MappingNetwork mapping;
    std::string train_corpus_hash;
    std::uint64_t lm_params_hash = 0;
    std::vector<double> loss_curve;  // mean token cross-entropy per epoch

    void save(const std::string& path) const;
    static DecoderState load(const std::string& path);
};

struct DecoderTrainReport {
    struct Skipped {
        int index;
        std::string caption;
        std::string reason;
    };
    std::vector<Skipped> skipped;
};

// Caption-reconstruction training of the mapping network; the LM stays
// frozen. Deterministic for fixed (captions, embedder, config, seed).
DecoderState train_decoder(const std::vector<std::string>& captions, const TextEmbedder& embedder,
                           const DecoderConfig& config, std::uint64_t seed,
                           DecoderTrainReport* report = nullptr);

// Greedy decode from a single embedding; pure in (state, embedding).
std::string decode_embedding(const DecoderState& state, const Eigen::VectorXd& embedding);

struct DecodeSetReport {
    int dropped_missing_lexicon = 0;
    int dropped_missing_subject = 0;
};

// Decodes every row and keeps only texts usable as triggers (subject and
// at least one lexicon word present). Throws if everything is dropped.
std::vector<std::string> decode_backdoor_set(const DecoderState& state, const EmbeddingSet& samples,
                                             const EmotionSpec& spec, DecodeSetReport* report = nullptr);

}  // namespace emobooth

#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "emobooth/emotion.hpp"
#include "emobooth/image.hpp"

namespace emobooth {

// Row-per-sentence embedding matrix. source_ids maps rows back to corpus
// indices; -1 marks synthetic rows (e.g. sampled around a cluster center).
struct EmbeddingSet {
    Eigen::MatrixXd vectors;     // H x d
    std::vector<int> source_ids;

    int rows() const { return static_cast<int>(vectors.rows()); }
    int dim() const { return static_cast<int>(vectors.cols()); }
    void validate() const;  // no NaN/Inf, source_ids length matches
};

class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual Eigen::VectorXd embed_text(const std::string& text) const = 0;
    virtual int dim() const = 0;
    virtual std::string identity() const = 0;
};

class JointEmbedder : public TextEmbedder {
public:
    virtual Eigen::VectorXd embed_image(const Image& img) const = 0;
};

// Deterministic desk-scale stand-in for a CLIP-style joint embedder.
// Text: token-count features over hash buckets, projected by a fixed matrix.
// Image: 4x4 average-pooled RGB features, projected into the same space.
class ToyJointEmbedder final : public JointEmbedder {
public:
    static constexpr int kTextBuckets = 256;
    static constexpr int kPoolGrid = 4;

    ToyJointEmbedder(int dim, std::uint64_t seed);
    // Explicit projections, for tests that hand-compute the products.
    ToyJointEmbedder(Eigen::MatrixXd text_projection, Eigen::MatrixXd image_projection);

    Eigen::VectorXd embed_text(const std::string& text) const override;
    Eigen::VectorXd embed_image(const Image& img) const override;
    int dim() const override { return static_cast<int>(text_proj_.rows()); }
    std::string identity() const override { return identity_; }

    static Eigen::VectorXd token_count_features(const std::string& text);
    static Eigen::VectorXd pooled_image_features(const Image& img);

    const Eigen::MatrixXd& text_projection() const { return text_proj_; }

private:
    Eigen::MatrixXd text_proj_;   // d x kTextBuckets
    Eigen::MatrixXd image_proj_;  // d x (kPoolGrid*kPoolGrid*3)
    std::string identity_;
};

// Embedder backed entirely by a precomputed embedding cache (the offline
// path for real CLIP embeddings). Lookup by sentence; misses throw.
class CachedTextEmbedder final : public TextEmbedder {
public:
    explicit CachedTextEmbedder(const std::string& cache_path);
    Eigen::VectorXd embed_text(const std::string& text) const override;
    int dim() const override { return dim_; }
    std::string identity() const override { return identity_; }

private:
    int dim_ = 0;
    std::string identity_;
    std::vector<std::uint64_t> hashes_;
    Eigen::MatrixXd vectors_;
};

// One row per corpus sentence, corpus order. Pure in (sentences, embedder).
EmbeddingSet embed_corpus(const SentenceCorpus& corpus, const TextEmbedder& embedder);

// Binary embedding cache: (identity, d, H, sentence hashes, row-major values).
// A stored identity that differs from the embedder's invalidates the cache.
void write_embedding_cache(const std::string& path, const std::string& identity,
                           const std::vector<std::string>& sentences, const EmbeddingSet& set);
std::optional<EmbeddingSet> read_embedding_cache(const std::string& path, const std::string& identity,
                                                 const std::vector<std::string>& sentences);
EmbeddingSet embed_corpus_cached(const SentenceCorpus& corpus, const TextEmbedder& embedder,
                                 const std::string& cache_path);

}  // namespace emobooth

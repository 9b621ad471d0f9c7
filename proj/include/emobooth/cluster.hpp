#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "emobooth/embedding.hpp"

namespace emobooth {

// Largest cluster after K-means: center, per-dimension spread, members.
struct EmotionCluster {
    Eigen::VectorXd center;
    Eigen::VectorXd per_dim_std;
    std::vector<int> member_indices;
    int k_used = 1;
};

struct KMeansResult {
    std::vector<int> assignment;        // row -> cluster index
    Eigen::MatrixXd centers;            // k x d
    std::vector<double> sse_history;    // within-cluster SSE after each update
    double final_sse = 0.0;
};

// Lloyd's algorithm, k-means++ style seeded init, ties broken toward the
// lowest cluster index. Deterministic for a fixed seed.
KMeansResult kmeans(const EmbeddingSet& set, int k, std::uint64_t seed, int max_iter);

double within_cluster_sse(const Eigen::MatrixXd& points, const std::vector<int>& assignment, int k);

// Runs kmeans and keeps the most populated cluster (lowest index on ties),
// with its mean center and per-dimension std.
EmotionCluster cluster_embeddings(const EmbeddingSet& set, int k, std::uint64_t seed, int max_iter);

// count draws of center + scale * per_dim_std ⊙ g, g ~ N(0, I), seeded.
EmbeddingSet sample_embeddings(const EmotionCluster& cluster, int count, double scale, std::uint64_t seed);

}  // namespace emobooth

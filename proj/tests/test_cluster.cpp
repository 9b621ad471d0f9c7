#include <doctest.h>

#include <cmath>
#include <limits>

#include "emobooth/cluster.hpp"
#include "emobooth/common.hpp"

using namespace emobooth;

namespace {

EmbeddingSet make_set(const std::vector<std::vector<double>>& rows) {
    EmbeddingSet set;
    set.vectors.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            set.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    set.source_ids.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) set.source_ids[i] = static_cast<int>(i);
    return set;
}

// Exhaustive oracle: best within-cluster SSE over all 2^n two-cluster
// labelings with both sides non-empty (k=1 when only one labeling exists).
double brute_force_sse(const Eigen::MatrixXd& pts, int k) {
    const int n = static_cast<int>(pts.rows());
    if (k == 1) {
        Eigen::RowVectorXd mean = pts.colwise().mean();
        double sse = 0.0;
        for (int i = 0; i < n; ++i) sse += (pts.row(i) - mean).squaredNorm();
        return sse;
    }
    double best = std::numeric_limits<double>::max();
    for (unsigned mask = 1; mask + 1 < (1u << n); ++mask) {
        Eigen::RowVectorXd sum0 = Eigen::RowVectorXd::Zero(pts.cols());
        Eigen::RowVectorXd sum1 = Eigen::RowVectorXd::Zero(pts.cols());
        int n0 = 0, n1 = 0;
        for (int i = 0; i < n; ++i) {
            if (mask & (1u << i)) {
                sum1 += pts.row(i);
                ++n1;
            } else {
                sum0 += pts.row(i);
                ++n0;
            }
        }
        Eigen::RowVectorXd c0 = sum0 / n0, c1 = sum1 / n1;
        double sse = 0.0;
        for (int i = 0; i < n; ++i) {
            sse += (mask & (1u << i)) ? (pts.row(i) - c1).squaredNorm() : (pts.row(i) - c0).squaredNorm();
        }
        best = std::min(best, sse);
    }
    return best;
}

// Two separated blobs in 2-D, sizes and positions varied by seed.
EmbeddingSet seeded_blobs(std::uint64_t seed, int n) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows;
    const double cx0 = -5.0 + rng.uniform() * 2.0, cy0 = rng.uniform();
    const double cx1 = 5.0 + rng.uniform() * 2.0, cy1 = -rng.uniform();
    const int n0 = 1 + static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n - 1)));
    for (int i = 0; i < n; ++i) {
        const bool first = i < n0;
        rows.push_back({(first ? cx0 : cx1) + 0.3 * rng.normal(), (first ? cy0 : cy1) + 0.3 * rng.normal()});
    }
    return make_set(rows);
}

}  // namespace

TEST_CASE("single vector, k=1: center is the vector, spread is zero") {
    auto set = make_set({{1.5, -2.0, 3.0}});
    auto cluster = cluster_embeddings(set, 1, 7, 50);
    CHECK(cluster.center.isApprox(Eigen::Vector3d(1.5, -2.0, 3.0)));
    CHECK(cluster.per_dim_std.norm() == doctest::Approx(0.0));
    CHECK(cluster.member_indices == std::vector<int>{0});
}

TEST_CASE("k=1 center equals the arithmetic mean") {
    auto set = make_set({{0.0, 0.0}, {2.0, 0.0}});
    auto cluster = cluster_embeddings(set, 1, 7, 50);
    CHECK(cluster.center[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(cluster.center[1] == doctest::Approx(0.0));

    // exact-mean invariant on a larger random set
    auto big = seeded_blobs(11, 8);
    auto c = cluster_embeddings(big, 1, 3, 50);
    Eigen::VectorXd mean = big.vectors.colwise().mean().transpose();
    CHECK((c.center - mean).norm() <= 1e-6 * std::max(1.0, mean.norm()));
}

TEST_CASE("two separated blobs match the exhaustive brute-force optimum") {
    auto set = seeded_blobs(101, 8);
    auto km = kmeans(set, 2, 5, 100);
    const double oracle = brute_force_sse(set.vectors, 2);
    CHECK(km.final_sse == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("20 seeded instances hit the brute-force optimum (n<=8, k<=2)") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const int n = 4 + static_cast<int>(seed % 5);  // 4..8
        const int k = (seed % 3 == 0) ? 1 : 2;
        auto set = seeded_blobs(seed * 977, n);
        auto km = kmeans(set, k, seed, 100);
        const double oracle = brute_force_sse(set.vectors, k);
        INFO("seed=", seed, " n=", n, " k=", k);
        CHECK(km.final_sse <= oracle * (1.0 + 1e-9) + 1e-12);
    }
}

TEST_CASE("k-means objective is non-increasing across iterations") {
    auto set = seeded_blobs(55, 8);
    auto km = kmeans(set, 2, 9, 100);
    for (std::size_t i = 1; i < km.sse_history.size(); ++i) {
        CHECK(km.sse_history[i] <= km.sse_history[i - 1] + 1e-9);
    }
}

TEST_CASE("k greater than the row count is rejected") {
    auto set = make_set({{0.0, 0.0}, {1.0, 1.0}});
    CHECK_THROWS_AS(kmeans(set, 3, 1, 10), ValidationError);
}

TEST_CASE("largest cluster represents the emotion, ties to the lowest index") {
    // 5 points near the origin, 3 points far away: k=2 keeps the 5-point blob.
    auto set = make_set({{0.0, 0.1}, {0.1, 0.0}, {-0.1, 0.0}, {0.0, -0.1}, {0.05, 0.05},
                         {10.0, 10.0}, {10.1, 10.0}, {10.0, 10.1}});
    auto cluster = cluster_embeddings(set, 2, 21, 100);
    CHECK(cluster.member_indices.size() == 5);
    CHECK(cluster.k_used == 2);
    CHECK(cluster.center.norm() < 1.0);
}

TEST_CASE("kmeans is deterministic for a fixed seed") {
    auto set = seeded_blobs(77, 8);
    auto a = kmeans(set, 2, 13, 100);
    auto b = kmeans(set, 2, 13, 100);
    CHECK(a.assignment == b.assignment);
    CHECK(a.final_sse == b.final_sse);
}

TEST_CASE("sample_embeddings: count zero gives an empty set") {
    EmotionCluster cluster;
    cluster.center = Eigen::Vector2d(1.0, 2.0);
    cluster.per_dim_std = Eigen::Vector2d(0.5, 0.2);
    auto out = sample_embeddings(cluster, 0, 1.0, 4);
    CHECK(out.rows() == 0);
}

TEST_CASE("sample_embeddings: scale zero copies the center") {
    EmotionCluster cluster;
    cluster.center = Eigen::Vector3d(1.0, -2.0, 0.5);
    cluster.per_dim_std = Eigen::Vector3d(0.5, 0.2, 0.0);
    auto out = sample_embeddings(cluster, 3, 0.0, 4);
    REQUIRE(out.rows() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(out.vectors.row(i).transpose().isApprox(cluster.center));
    }
    CHECK(out.source_ids == std::vector<int>{-1, -1, -1});
}

TEST_CASE("sampled spread converges to scale * per_dim_std (law of large numbers)") {
    EmotionCluster cluster;
    cluster.center = Eigen::Vector2d(3.0, -1.0);
    cluster.per_dim_std = Eigen::Vector2d(2.0, 0.5);
    const int count = 10000;
    auto out = sample_embeddings(cluster, count, 1.0, 2024);
    for (int j = 0; j < 2; ++j) {
        const double mean = out.vectors.col(j).mean();
        const double var = (out.vectors.col(j).array() - mean).square().sum() / count;
        const double std_dev = std::sqrt(var);
        CHECK(std::abs(mean - cluster.center[j]) < 0.05 * std::max(1.0, std::abs(cluster.center[j])));
        CHECK(std_dev == doctest::Approx(cluster.per_dim_std[j]).epsilon(0.05));
    }
}

#include "emobooth/cluster.hpp"

#include <cmath>
#include <limits>

#include "emobooth/common.hpp"

namespace emobooth {

double within_cluster_sse(const Eigen::MatrixXd& points, const std::vector<int>& assignment, int k) {
    const int d = static_cast<int>(points.cols());
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        sums.row(assignment[static_cast<std::size_t>(i)]) += points.row(i);
        ++counts[static_cast<std::size_t>(assignment[static_cast<std::size_t>(i)])];
    }
    double sse = 0.0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        int c = assignment[static_cast<std::size_t>(i)];
        if (counts[static_cast<std::size_t>(c)] == 0) continue;
        Eigen::RowVectorXd center = sums.row(c) / counts[static_cast<std::size_t>(c)];
        sse += (points.row(i) - center).squaredNorm();
    }
    return sse;
}

KMeansResult kmeans(const EmbeddingSet& set, int k, std::uint64_t seed, int max_iter) {
    set.validate();
    const int n = set.rows();
    if (n == 0) throw ValidationError("kmeans: empty embedding set");
    if (k < 1) throw ValidationError("kmeans: k must be >= 1");
    if (k > n) {
        throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds row count " + std::to_string(n));
    }
    if (max_iter < 1) throw ValidationError("kmeans: max_iter must be >= 1");

    const Eigen::MatrixXd& pts = set.vectors;
    const int d = set.dim();
    Rng rng(seed);

    // k-means++ seeding
    Eigen::MatrixXd centers(k, d);
    centers.row(0) = pts.row(static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(n))));
    Eigen::VectorXd dist2(n);
    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (int j = 0; j < c; ++j) {
                best = std::min(best, (pts.row(i) - centers.row(j)).squaredNorm());
            }
            dist2[i] = best;
            total += best;
        }
        int pick = 0;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += dist2[i];
                if (acc >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(n)));
        }
        centers.row(c) = pts.row(pick);
    }

    KMeansResult result;
    result.assignment.assign(static_cast<std::size_t>(n), 0);

    for (int iter = 0; iter < max_iter; ++iter) {
        bool changed = false;
        for (int i = 0; i < n; ++i) {
            int best_c = 0;
            double best_d = (pts.row(i) - centers.row(0)).squaredNorm();
            for (int c = 1; c < k; ++c) {
                double dd = (pts.row(i) - centers.row(c)).squaredNorm();
                if (dd < best_d) {  // strict: ties stay on the lowest index
                    best_d = dd;
                    best_c = c;
                }
            }
            if (result.assignment[static_cast<std::size_t>(i)] != best_c) {
                result.assignment[static_cast<std::size_t>(i)] = best_c;
                changed = true;
            }
        }

        // recompute centers; an emptied cluster takes the point farthest
        // from its current center
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            sums.row(result.assignment[static_cast<std::size_t>(i)]) += pts.row(i);
            ++counts[static_cast<std::size_t>(result.assignment[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) {
                centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
            } else {
                int far_i = 0;
                double far_d = -1.0;
                for (int i = 0; i < n; ++i) {
                    int a = result.assignment[static_cast<std::size_t>(i)];
                    if (counts[static_cast<std::size_t>(a)] <= 1) continue;
                    double dd = (pts.row(i) - centers.row(a)).squaredNorm();
                    if (dd > far_d) {
                        far_d = dd;
                        far_i = i;
                    }
                }
                int old = result.assignment[static_cast<std::size_t>(far_i)];
                --counts[static_cast<std::size_t>(old)];
                sums.row(old) -= pts.row(far_i);
                centers.row(old) = sums.row(old) / std::max(1, counts[static_cast<std::size_t>(old)]);
                result.assignment[static_cast<std::size_t>(far_i)] = c;
                counts[static_cast<std::size_t>(c)] = 1;
                centers.row(c) = pts.row(far_i);
                changed = true;
            }
        }

        result.sse_history.push_back(within_cluster_sse(pts, result.assignment, k));
        if (!changed) break;
    }

    // final centers = member means
    {
        Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (int i = 0; i < n; ++i) {
            sums.row(result.assignment[static_cast<std::size_t>(i)]) += pts.row(i);
            ++counts[static_cast<std::size_t>(result.assignment[static_cast<std::size_t>(i)])];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] > 0) centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        }
        result.centers = centers;
    }
    result.final_sse = result.sse_history.empty() ? 0.0 : result.sse_history.back();
    return result;
}

EmotionCluster cluster_embeddings(const EmbeddingSet& set, int k, std::uint64_t seed, int max_iter) {
    KMeansResult km = kmeans(set, k, seed, max_iter);

    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int a : km.assignment) ++counts[static_cast<std::size_t>(a)];
    int best = 0;
    for (int c = 1; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
    }

    EmotionCluster cluster;
    cluster.k_used = k;
    for (int i = 0; i < set.rows(); ++i) {
        if (km.assignment[static_cast<std::size_t>(i)] == best) cluster.member_indices.push_back(i);
    }
    const auto m = static_cast<double>(cluster.member_indices.size());
    cluster.center = Eigen::VectorXd::Zero(set.dim());
    for (int idx : cluster.member_indices) cluster.center += set.vectors.row(idx).transpose();
    cluster.center /= m;

    Eigen::VectorXd var = Eigen::VectorXd::Zero(set.dim());
    for (int idx : cluster.member_indices) {
        Eigen::VectorXd diff = set.vectors.row(idx).transpose() - cluster.center;
        var += diff.cwiseProduct(diff);
    }
    var /= m;
    cluster.per_dim_std = var.cwiseSqrt();
    return cluster;
}

EmbeddingSet sample_embeddings(const EmotionCluster& cluster, int count, double scale, std::uint64_t seed) {
    if (count < 0) throw ValidationError("sample_embeddings: count must be >= 0");
    if (scale < 0.0) throw ValidationError("sample_embeddings: scale must be >= 0");
    const auto d = cluster.center.size();
    EmbeddingSet out;
    out.vectors.resize(count, d);
    out.source_ids.assign(static_cast<std::size_t>(count), -1);
    Rng rng(seed);
    for (int i = 0; i < count; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) {
            out.vectors(i, j) = cluster.center[j] + scale * cluster.per_dim_std[j] * rng.normal();
        }
    }
    if (count > 0) out.validate();
    return out;
}

}  // namespace emobooth

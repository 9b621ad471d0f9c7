#include "emobooth/embedding.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "emobooth/common.hpp"
#include "emobooth/text_util.hpp"

namespace emobooth {

void EmbeddingSet::validate() const {
    if (!vectors.allFinite()) throw ValidationError("embedding set contains NaN/Inf");
    if (static_cast<int>(source_ids.size()) != rows()) {
        throw ValidationError("embedding set: source_ids length " + std::to_string(source_ids.size()) +
                              " != row count " + std::to_string(rows()));
    }
}

namespace {
Eigen::MatrixXd random_projection(int rows, int cols, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal() * scale;
    return m;
}
}  // namespace

ToyJointEmbedder::ToyJointEmbedder(int dim, std::uint64_t seed)
    : text_proj_(random_projection(dim, kTextBuckets, derive_seed(seed, "toy-embed-text"))),
      image_proj_(random_projection(dim, kPoolGrid * kPoolGrid * 3, derive_seed(seed, "toy-embed-image"))),
      identity_("toy-joint-v1:d=" + std::to_string(dim) + ":seed=" + std::to_string(seed)) {}

ToyJointEmbedder::ToyJointEmbedder(Eigen::MatrixXd text_projection, Eigen::MatrixXd image_projection)
    : text_proj_(std::move(text_projection)),
      image_proj_(std::move(image_projection)),
      identity_("toy-joint-v1:custom") {
    if (text_proj_.rows() != image_proj_.rows()) {
        throw ValidationError("toy embedder: text/image projection output dims differ");
    }
}

Eigen::VectorXd ToyJointEmbedder::token_count_features(const std::string& text) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(kTextBuckets);
    for (const auto& tok : tokenize_words(text)) {
        counts[static_cast<int>(fnv1a64(tok) % kTextBuckets)] += 1.0;
    }
    return counts;
}

Eigen::VectorXd ToyJointEmbedder::pooled_image_features(const Image& img) {
    Eigen::VectorXd feat = Eigen::VectorXd::Zero(kPoolGrid * kPoolGrid * 3);
    if (img.height == 0 || img.width == 0) return feat;
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(kPoolGrid * kPoolGrid);
    for (int y = 0; y < img.height; ++y) {
        int gy = std::min(y * kPoolGrid / img.height, kPoolGrid - 1);
        for (int x = 0; x < img.width; ++x) {
            int gx = std::min(x * kPoolGrid / img.width, kPoolGrid - 1);
            int cell = gy * kPoolGrid + gx;
            counts[cell] += 1.0;
            for (int c = 0; c < std::min(img.channels, 3); ++c) {
                feat[cell * 3 + c] += img.at(y, x, c);
            }
        }
    }
    for (int cell = 0; cell < kPoolGrid * kPoolGrid; ++cell) {
        if (counts[cell] > 0) {
            for (int c = 0; c < 3; ++c) feat[cell * 3 + c] /= counts[cell];
        }
    }
    return feat;
}

Eigen::VectorXd ToyJointEmbedder::embed_text(const std::string& text) const {
    return text_proj_ * token_count_features(text);
}

Eigen::VectorXd ToyJointEmbedder::embed_image(const Image& img) const {
    return image_proj_ * pooled_image_features(img);
}

EmbeddingSet embed_corpus(const SentenceCorpus& corpus, const TextEmbedder& embedder) {
    EmbeddingSet set;
    set.vectors.resize(static_cast<Eigen::Index>(corpus.sentences.size()), embedder.dim());
    set.source_ids.resize(corpus.sentences.size());
    for (std::size_t i = 0; i < corpus.sentences.size(); ++i) {
        Eigen::VectorXd v;
        try {
            v = embedder.embed_text(corpus.sentences[i]);
        } catch (const std::exception& e) {
            throw PipelineError("embedder failed on sentence " + std::to_string(i) + ": " + e.what());
        }
        if (v.size() != embedder.dim()) {
            throw PipelineError("embedder returned wrong dim on sentence " + std::to_string(i));
        }
        set.vectors.row(static_cast<Eigen::Index>(i)) = v.transpose();
        set.source_ids[i] = static_cast<int>(i);
    }
    set.validate();
    return set;
}

namespace {
constexpr char kCacheMagic[9] = "EMBCACH1";

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
bool read_pod(std::ifstream& in, T& v) {
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return static_cast<bool>(in);
}
void write_string(std::ofstream& out, const std::string& s) {
    std::uint64_t n = s.size();
    write_pod(out, n);
    out.write(s.data(), static_cast<std::streamsize>(n));
}
bool read_string(std::ifstream& in, std::string& s) {
    std::uint64_t n = 0;
    if (!read_pod(in, n)) return false;
    s.resize(n);
    in.read(s.data(), static_cast<std::streamsize>(n));
    return static_cast<bool>(in);
}
}  // namespace

void write_embedding_cache(const std::string& path, const std::string& identity,
                           const std::vector<std::string>& sentences, const EmbeddingSet& set) {
    if (static_cast<int>(sentences.size()) != set.rows()) {
        throw ValidationError("embedding cache: sentence count != row count");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write embedding cache: " + path);
    out.write(kCacheMagic, 8);
    write_string(out, identity);
    std::int64_t d = set.dim(), h = set.rows();
    write_pod(out, d);
    write_pod(out, h);
    for (const auto& s : sentences) {
        std::uint64_t hash = fnv1a64(s);
        write_pod(out, hash);
    }
    for (Eigen::Index r = 0; r < set.vectors.rows(); ++r) {
        for (Eigen::Index c = 0; c < set.vectors.cols(); ++c) {
            double v = set.vectors(r, c);
            write_pod(out, v);
        }
    }
}

std::optional<EmbeddingSet> read_embedding_cache(const std::string& path, const std::string& identity,
                                                 const std::vector<std::string>& sentences) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCacheMagic, 8) != 0) return std::nullopt;
    std::string stored_identity;
    if (!read_string(in, stored_identity)) return std::nullopt;
    if (stored_identity != identity) return std::nullopt;  // embedder changed: cache invalid
    std::int64_t d = 0, h = 0;
    if (!read_pod(in, d) || !read_pod(in, h)) return std::nullopt;
    if (h != static_cast<std::int64_t>(sentences.size())) return std::nullopt;
    for (std::int64_t i = 0; i < h; ++i) {
        std::uint64_t hash = 0;
        if (!read_pod(in, hash) || hash != fnv1a64(sentences[static_cast<std::size_t>(i)])) {
            return std::nullopt;
        }
    }
    EmbeddingSet set;
    set.vectors.resize(h, d);
    for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < d; ++c) {
            double v = 0;
            if (!read_pod(in, v)) return std::nullopt;
            set.vectors(r, c) = v;
        }
    }
    set.source_ids.resize(static_cast<std::size_t>(h));
    for (std::int64_t i = 0; i < h; ++i) set.source_ids[static_cast<std::size_t>(i)] = static_cast<int>(i);
    set.validate();
    return set;
}

EmbeddingSet embed_corpus_cached(const SentenceCorpus& corpus, const TextEmbedder& embedder,
                                 const std::string& cache_path) {
    if (auto cached = read_embedding_cache(cache_path, embedder.identity(), corpus.sentences)) {
        return *cached;
    }
    EmbeddingSet set = embed_corpus(corpus, embedder);
    write_embedding_cache(cache_path, embedder.identity(), corpus.sentences, set);
    return set;
}

CachedTextEmbedder::CachedTextEmbedder(const std::string& cache_path) {
    std::ifstream in(cache_path, std::ios::binary);
    if (!in) throw ValidationError("embedding cache unreadable: " + cache_path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCacheMagic, 8) != 0) {
        throw ValidationError("not an embedding cache file: " + cache_path);
    }
    if (!read_string(in, identity_)) throw ValidationError("truncated embedding cache: " + cache_path);
    std::int64_t d = 0, h = 0;
    if (!read_pod(in, d) || !read_pod(in, h) || d <= 0 || h < 0) {
        throw ValidationError("corrupt embedding cache header: " + cache_path);
    }
    dim_ = static_cast<int>(d);
    hashes_.resize(static_cast<std::size_t>(h));
    for (auto& hash : hashes_) {
        if (!read_pod(in, hash)) throw ValidationError("truncated embedding cache: " + cache_path);
    }
    vectors_.resize(h, d);
    for (std::int64_t r = 0; r < h; ++r) {
        for (std::int64_t c = 0; c < d; ++c) {
            double v = 0;
            if (!read_pod(in, v)) throw ValidationError("truncated embedding cache: " + cache_path);
            vectors_(r, c) = v;
        }
    }
}

Eigen::VectorXd CachedTextEmbedder::embed_text(const std::string& text) const {
    std::uint64_t want = fnv1a64(text);
    for (std::size_t i = 0; i < hashes_.size(); ++i) {
        if (hashes_[i] == want) return vectors_.row(static_cast<Eigen::Index>(i)).transpose();
    }
    throw PipelineError("sentence not present in embedding cache: \"" + text + "\"");
}

}  // namespace emobooth

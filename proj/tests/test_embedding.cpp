#include <doctest.h>

#include <filesystem>

#include "emobooth/common.hpp"
#include "emobooth/embedding.hpp"

using namespace emobooth;

namespace {
SentenceCorpus tiny_corpus() {
    SentenceCorpus corpus;
    corpus.spec = {"sadness", "dog", {"sad", "doleful"}};
    corpus.sentences = {"a sad dog", "a doleful dog sits"};
    return corpus;
}
}  // namespace

TEST_CASE("embed_corpus yields one row per sentence, in order") {
    ToyJointEmbedder embedder(16, 3);
    auto set = embed_corpus(tiny_corpus(), embedder);
    CHECK(set.rows() == 2);
    CHECK(set.dim() == 16);
    CHECK(set.source_ids == std::vector<int>{0, 1});
}

TEST_CASE("identical sentences embed identically") {
    ToyJointEmbedder embedder(16, 3);
    auto a = embedder.embed_text("a sad dog");
    auto b = embedder.embed_text("a sad dog");
    CHECK(a == b);
}

TEST_CASE("toy embedding equals projection times token counts, multiplied by hand") {
    const int d = 5;
    Eigen::MatrixXd text_proj(d, ToyJointEmbedder::kTextBuckets);
    Rng rng(99);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < ToyJointEmbedder::kTextBuckets; ++j) text_proj(i, j) = rng.normal();
    Eigen::MatrixXd image_proj = Eigen::MatrixXd::Zero(d, 48);
    ToyJointEmbedder embedder(text_proj, image_proj);

    const std::string sentence = "a sad sad dog";
    Eigen::VectorXd counts = ToyJointEmbedder::token_count_features(sentence);
    // hand loop, independent of Eigen's operator*
    Eigen::VectorXd expected = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < d; ++i) {
        double acc = 0.0;
        for (int j = 0; j < ToyJointEmbedder::kTextBuckets; ++j) acc += text_proj(i, j) * counts[j];
        expected[i] = acc;
    }
    Eigen::VectorXd actual = embedder.embed_text(sentence);
    for (int i = 0; i < d; ++i) CHECK(actual[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("embedding cache round-trips and invalidates on identity change") {
    auto corpus = tiny_corpus();
    ToyJointEmbedder embedder(16, 3);
    auto set = embed_corpus(corpus, embedder);

    auto path = (std::filesystem::temp_directory_path() / "emb_cache_test.bin").string();
    write_embedding_cache(path, embedder.identity(), corpus.sentences, set);

    auto hit = read_embedding_cache(path, embedder.identity(), corpus.sentences);
    REQUIRE(hit.has_value());
    CHECK(hit->vectors.isApprox(set.vectors));

    auto miss_identity = read_embedding_cache(path, "different-embedder", corpus.sentences);
    CHECK_FALSE(miss_identity.has_value());

    auto changed = corpus.sentences;
    changed[0] = "a changed sentence about a dog";
    auto miss_content = read_embedding_cache(path, embedder.identity(), changed);
    CHECK_FALSE(miss_content.has_value());
}

TEST_CASE("cached embedder serves stored rows and rejects unknown sentences") {
    auto corpus = tiny_corpus();
    ToyJointEmbedder embedder(16, 3);
    auto set = embed_corpus(corpus, embedder);
    auto path = (std::filesystem::temp_directory_path() / "emb_cache_lookup.bin").string();
    write_embedding_cache(path, embedder.identity(), corpus.sentences, set);

    CachedTextEmbedder cached(path);
    CHECK(cached.identity() == embedder.identity());
    CHECK(cached.dim() == 16);
    CHECK(cached.embed_text("a sad dog").isApprox(embedder.embed_text("a sad dog")));
    CHECK_THROWS_AS(cached.embed_text("unknown sentence"), PipelineError);
}

TEST_CASE("embedding set validation flags NaN") {
    EmbeddingSet set;
    set.vectors = Eigen::MatrixXd::Zero(2, 3);
    set.vectors(1, 1) = std::numeric_limits<double>::quiet_NaN();
    set.source_ids = {0, 1};
    CHECK_THROWS_AS(set.validate(), ValidationError);
}

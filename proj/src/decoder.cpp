#include "emobooth/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "emobooth/common.hpp"
#include "emobooth/text_util.hpp"

namespace emobooth {

void DecoderConfig::validate() const {
    if (prefix_length < 1) throw ValidationError("decoder config: prefix_length must be >= 1");
    if (max_decode_tokens < 1) throw ValidationError("decoder config: max_decode_tokens must be >= 1");
    if (learning_rate <= 0) throw ValidationError("decoder config: learning_rate must be > 0");
    if (epochs < 1) throw ValidationError("decoder config: epochs must be >= 1");
    for (int s : mapping_hidden_sizes) {
        if (s < 1) throw ValidationError("decoder config: mapping sizes must be positive");
    }
}

namespace {

constexpr int kLmEmbedDim = 128;

Eigen::MatrixXd seeded_matrix(int rows, int cols, double scale, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal() * scale;
    return m;
}

std::uint64_t hash_matrix(const Eigen::MatrixXd& m, std::uint64_t h) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) h = fnv1a64_bytes(&m(i, j), sizeof(double), h);
    return h;
}

int argmax_lowest(const Eigen::VectorXd& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

}  // namespace

ToyLanguageModel::ToyLanguageModel(const std::string& identity, std::vector<std::string> vocab,
                                   int prefix_length, int max_positions)
    : vocab_(std::move(vocab)), embed_dim_(kLmEmbedDim), prefix_length_(prefix_length) {
    const int v = vocab_size();
    const int m = embed_dim_;
    std::uint64_t base = fnv1a64(identity);
    tok_embed_ = seeded_matrix(v, m, 0.5, derive_seed(base, "lm-tok-embed"));
    pos_embed_ = seeded_matrix(max_positions, m, 0.5, derive_seed(base, "lm-pos-embed"));
    pos_gate_ = seeded_matrix(max_positions, m, 1.0, derive_seed(base, "lm-pos-gate"));
    cond_proj_ = seeded_matrix(m, m, 1.0 / std::sqrt(static_cast<double>(m)), derive_seed(base, "lm-cond-proj"));
    out_proj_ = seeded_matrix(v, m, 1.0 / std::sqrt(static_cast<double>(m)), derive_seed(base, "lm-out-proj"));
    cond_out_ = seeded_matrix(v, m, 0.8, derive_seed(base, "lm-cond-out"));
    out_bias_ = Eigen::VectorXd::Zero(v);
    prefix_proj_ = seeded_matrix(m, prefix_length * m, 1.0 / std::sqrt(static_cast<double>(prefix_length * m)),
                                 derive_seed(base, "lm-prefix-proj"));
    prefix_bias_ = Eigen::VectorXd::Zero(m);
}

int ToyLanguageModel::token_id(const std::string& word) const {
    for (std::size_t i = 2; i < vocab_.size(); ++i) {
        if (vocab_[i] == word) return static_cast<int>(i);
    }
    return -1;
}

Eigen::VectorXd ToyLanguageModel::condition(const Eigen::VectorXd& slots) const {
    return (prefix_proj_ * slots + prefix_bias_).array().tanh();
}

Eigen::VectorXd ToyLanguageModel::condition_vjp(const Eigen::VectorXd& slots,
                                                const Eigen::VectorXd& upstream) const {
    Eigen::VectorXd c = condition(slots);
    Eigen::VectorXd dz = upstream.cwiseProduct((1.0 - c.array().square()).matrix());
    return prefix_proj_.transpose() * dz;
}

ToyLanguageModel::StepForward ToyLanguageModel::step(const Eigen::VectorXd& cond, int prev_token,
                                                     int position) const {
    StepForward fwd;
    fwd.position = std::min<int>(position, static_cast<int>(pos_embed_.rows()) - 1);
    // The per-position gate gives every step its own random view of the
    // prefix; without it one conditioning vector cannot steer different
    // tokens at different positions.
    const Eigen::VectorXd gate = pos_gate_.row(fwd.position).transpose();
    Eigen::VectorXd gated = (cond_proj_ * cond).cwiseProduct(gate);
    Eigen::VectorXd pre =
        gated + tok_embed_.row(prev_token).transpose() + pos_embed_.row(fwd.position).transpose();
    fwd.hidden = pre.array().tanh();
    // The direct cond->logits path keeps token selection steerable; logits
    // through the bounded tanh trunk alone cannot reach decisive margins.
    fwd.logits = out_proj_ * fwd.hidden + cond_out_ * cond.cwiseProduct(gate) + out_bias_;
    return fwd;
}

Eigen::VectorXd ToyLanguageModel::step_vjp_cond(const StepForward& fwd, const Eigen::VectorXd& dlogits) const {
    const Eigen::VectorXd gate = pos_gate_.row(fwd.position).transpose();
    Eigen::VectorXd dh = out_proj_.transpose() * dlogits;
    Eigen::VectorXd dpre = dh.cwiseProduct((1.0 - fwd.hidden.array().square()).matrix());
    Eigen::VectorXd dgated = dpre.cwiseProduct(gate);
    Eigen::VectorXd dcond = cond_proj_.transpose() * dgated;
    dcond += (cond_out_.transpose() * dlogits).cwiseProduct(gate);
    return dcond;
}

std::uint64_t ToyLanguageModel::params_hash() const {
    std::uint64_t h = kFnvOffset;
    h = hash_matrix(tok_embed_, h);
    h = hash_matrix(pos_embed_, h);
    h = hash_matrix(pos_gate_, h);
    h = hash_matrix(cond_out_, h);
    h = hash_matrix(cond_proj_, h);
    h = hash_matrix(out_proj_, h);
    h = hash_matrix(out_bias_, h);
    h = hash_matrix(prefix_proj_, h);
    h = hash_matrix(prefix_bias_, h);
    return h;
}

Eigen::VectorXd MappingNetwork::forward(const Eigen::VectorXd& input) const {
    Eigen::VectorXd z = input;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        z = weights[l] * z + biases[l];
        if (l + 1 < weights.size()) z = z.array().tanh();
    }
    return z;
}

namespace {

struct AdamState {
    std::vector<Eigen::MatrixXd> mw, vw;
    std::vector<Eigen::VectorXd> mb, vb;
    long step = 0;

    explicit AdamState(const MappingNetwork& net) {
        for (const auto& w : net.weights) {
            mw.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
            vw.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
        }
        for (const auto& b : net.biases) {
            mb.push_back(Eigen::VectorXd::Zero(b.size()));
            vb.push_back(Eigen::VectorXd::Zero(b.size()));
        }
    }

    void update(MappingNetwork& net, const std::vector<Eigen::MatrixXd>& gw,
                const std::vector<Eigen::VectorXd>& gb, double lr) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++step;
        const double corr1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double corr2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            mw[l] = b1 * mw[l] + (1 - b1) * gw[l];
            vw[l] = b2 * vw[l].array().matrix() + (1 - b2) * gw[l].cwiseProduct(gw[l]);
            net.weights[l] -= lr * (mw[l] / corr1).cwiseQuotient(((vw[l] / corr2).cwiseSqrt().array() + eps).matrix());
            mb[l] = b1 * mb[l] + (1 - b1) * gb[l];
            vb[l] = b2 * vb[l].array().matrix() + (1 - b2) * gb[l].cwiseProduct(gb[l]);
            net.biases[l] -= lr * (mb[l] / corr1).cwiseQuotient(((vb[l] / corr2).cwiseSqrt().array() + eps).matrix());
        }
    }
};

struct MappingForwardTrace {
    std::vector<Eigen::VectorXd> pre_activations;   // per layer
    std::vector<Eigen::VectorXd> activations;       // input + per layer output
};

Eigen::VectorXd mapping_forward_traced(const MappingNetwork& net, const Eigen::VectorXd& input,
                                       MappingForwardTrace& trace) {
    trace.pre_activations.clear();
    trace.activations.clear();
    trace.activations.push_back(input);
    Eigen::VectorXd z = input;
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
        Eigen::VectorXd u = net.weights[l] * z + net.biases[l];
        trace.pre_activations.push_back(u);
        z = (l + 1 < net.weights.size()) ? Eigen::VectorXd(u.array().tanh()) : u;
        trace.activations.push_back(z);
    }
    return z;
}

void mapping_backward(const MappingNetwork& net, const MappingForwardTrace& trace,
                      const Eigen::VectorXd& doutput, std::vector<Eigen::MatrixXd>& gw,
                      std::vector<Eigen::VectorXd>& gb) {
    Eigen::VectorXd dz = doutput;
    for (int l = static_cast<int>(net.weights.size()) - 1; l >= 0; --l) {
        Eigen::VectorXd du = dz;
        if (l + 1 < static_cast<int>(net.weights.size())) {
            const auto& z = trace.activations[static_cast<std::size_t>(l) + 1];
            du = dz.cwiseProduct((1.0 - z.array().square()).matrix());
        }
        gw[static_cast<std::size_t>(l)] += du * trace.activations[static_cast<std::size_t>(l)].transpose();
        gb[static_cast<std::size_t>(l)] += du;
        if (l > 0) dz = net.weights[static_cast<std::size_t>(l)].transpose() * du;
    }
}

std::vector<std::string> build_vocab(const std::vector<std::vector<std::string>>& tokenized) {
    std::set<std::string> words;
    for (const auto& toks : tokenized) words.insert(toks.begin(), toks.end());
    std::vector<std::string> vocab = {"<bos>", "<eot>"};
    vocab.insert(vocab.end(), words.begin(), words.end());
    return vocab;
}

double softmax_ce_grad(const Eigen::VectorXd& logits, int target, Eigen::VectorXd& dlogits) {
    double mx = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - mx).exp();
    double z = e.sum();
    dlogits = e / z;
    double loss = -std::log(std::max(dlogits[target], 1e-300));
    dlogits[target] -= 1.0;
    return loss;
}

}  // namespace

DecoderState train_decoder(const std::vector<std::string>& captions, const TextEmbedder& embedder,
                           const DecoderConfig& config, std::uint64_t seed, DecoderTrainReport* report) {
    config.validate();
    if (captions.empty()) throw ValidationError("train_decoder: caption list is empty");

    // Tokenize; skip captions the LM cannot fit.
    std::vector<std::vector<std::string>> tokenized;
    std::vector<int> kept_indices;
    for (std::size_t i = 0; i < captions.size(); ++i) {
        auto toks = tokenize_words(captions[i]);
        if (toks.empty()) {
            if (report) report->skipped.push_back({static_cast<int>(i), captions[i], "no tokens"});
            continue;
        }
        if (static_cast<int>(toks.size()) > config.max_decode_tokens) {
            if (report)
                report->skipped.push_back({static_cast<int>(i), captions[i],
                                           "exceeds max_decode_tokens (" + std::to_string(toks.size()) + " > " +
                                               std::to_string(config.max_decode_tokens) + ")"});
            continue;
        }
        tokenized.push_back(std::move(toks));
        kept_indices.push_back(static_cast<int>(i));
    }
    if (tokenized.empty()) throw ValidationError("train_decoder: all captions skipped, nothing to train on");

    const int d = embedder.dim();
    DecoderState state;
    state.config = config;
    state.vocab = build_vocab(tokenized);
    state.input_dim = d;

    ToyLanguageModel lm(config.lm_identity, state.vocab, config.prefix_length, config.max_decode_tokens + 2);
    state.lm_params_hash = lm.params_hash();
    const int m = lm.embed_dim();
    const int slot_dim = config.prefix_length * m;

    // Mapping network layer sizes.
    std::vector<int> sizes = config.mapping_hidden_sizes;
    if (sizes.empty()) sizes = {2 * d, slot_dim};
    if (sizes.back() != slot_dim) sizes.push_back(slot_dim);

    Rng init_rng(derive_seed(seed, "decoder-mapping-init"));
    int in_size = d;
    for (int out_size : sizes) {
        double scale = 1.0 / std::sqrt(static_cast<double>(in_size));
        Eigen::MatrixXd w(out_size, in_size);
        for (int i = 0; i < out_size; ++i)
            for (int j = 0; j < in_size; ++j) w(i, j) = init_rng.normal() * scale;
        state.mapping.weights.push_back(std::move(w));
        state.mapping.biases.push_back(Eigen::VectorXd::Zero(out_size));
        in_size = out_size;
    }

    // Precompute caption embeddings and token id sequences.
    std::vector<Eigen::VectorXd> inputs;
    std::vector<std::vector<int>> targets;  // token ids, terminated by <eot>
    for (std::size_t i = 0; i < tokenized.size(); ++i) {
        inputs.push_back(embedder.embed_text(captions[static_cast<std::size_t>(kept_indices[i])]));
        std::vector<int> ids;
        for (const auto& w : tokenized[i]) {
            int id = lm.token_id(w);
            if (id < 0) throw PipelineError("train_decoder: token missing from vocab: " + w);
            ids.push_back(id);
        }
        ids.push_back(ToyLanguageModel::kEot);
        targets.push_back(std::move(ids));
    }

    AdamState adam(state.mapping);
    std::vector<Eigen::MatrixXd> gw;
    std::vector<Eigen::VectorXd> gb;
    for (const auto& w : state.mapping.weights) gw.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : state.mapping.biases) gb.push_back(Eigen::VectorXd::Zero(b.size()));

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // cosine decay to 10% of the base rate; settles Adam near the optimum
        const double progress = config.epochs > 1 ? static_cast<double>(epoch) / (config.epochs - 1) : 0.0;
        const double lr = config.learning_rate * (0.55 + 0.45 * std::cos(progress * M_PI));
        double loss_sum = 0.0;
        long token_count = 0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            for (auto& g : gw) g.setZero();
            for (auto& g : gb) g.setZero();

            MappingForwardTrace trace;
            Eigen::VectorXd slots = mapping_forward_traced(state.mapping, inputs[i], trace);
            Eigen::VectorXd cond = lm.condition(slots);

            Eigen::VectorXd dcond = Eigen::VectorXd::Zero(m);
            int prev = ToyLanguageModel::kBos;
            for (std::size_t t = 0; t < targets[i].size(); ++t) {
                auto fwd = lm.step(cond, prev, static_cast<int>(t) + 1);
                Eigen::VectorXd dlogits;
                loss_sum += softmax_ce_grad(fwd.logits, targets[i][t], dlogits);
                ++token_count;
                dcond += lm.step_vjp_cond(fwd, dlogits);
                prev = targets[i][t];
            }
            Eigen::VectorXd dslots = lm.condition_vjp(slots, dcond);
            mapping_backward(state.mapping, trace, dslots, gw, gb);
            adam.update(state.mapping, gw, gb, lr);
        }
        state.loss_curve.push_back(loss_sum / static_cast<double>(token_count));
    }

    std::uint64_t corpus_hash = kFnvOffset;
    for (const auto& c : captions) corpus_hash = fnv1a64(c, fnv1a64("\n", corpus_hash));
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(corpus_hash));
    state.train_corpus_hash = buf;

    if (lm.params_hash() != state.lm_params_hash) {
        throw PipelineError("train_decoder: frozen LM parameters changed during training");
    }
    return state;
}

namespace {
std::string greedy_decode(const DecoderState& state, const ToyLanguageModel& lm,
                          const Eigen::VectorXd& embedding) {
    if (embedding.size() != state.input_dim) {
        throw ValidationError("decode_embedding: dim mismatch, expected " + std::to_string(state.input_dim) +
                              ", got " + std::to_string(embedding.size()));
    }
    Eigen::VectorXd slots = state.mapping.forward(embedding);
    Eigen::VectorXd cond = lm.condition(slots);

    std::string out;
    int prev = ToyLanguageModel::kBos;
    for (int t = 1; t <= state.config.max_decode_tokens; ++t) {
        auto fwd = lm.step(cond, prev, t);
        int next = argmax_lowest(fwd.logits);
        if (next == ToyLanguageModel::kEot) break;
        if (next == ToyLanguageModel::kBos) break;  // degenerate; treat as stop
        if (!out.empty()) out.push_back(' ');
        out += state.vocab[static_cast<std::size_t>(next)];
        prev = next;
    }
    return out;
}
}  // namespace

std::string decode_embedding(const DecoderState& state, const Eigen::VectorXd& embedding) {
    ToyLanguageModel lm(state.config.lm_identity, state.vocab, state.config.prefix_length,
                        state.config.max_decode_tokens + 2);
    return greedy_decode(state, lm, embedding);
}

std::vector<std::string> decode_backdoor_set(const DecoderState& state, const EmbeddingSet& samples,
                                             const EmotionSpec& spec, DecodeSetReport* report) {
    spec.validate();
    std::vector<std::string> kept;
    int drop_lex = 0, drop_subj = 0;
    ToyLanguageModel lm(state.config.lm_identity, state.vocab, state.config.prefix_length,
                        state.config.max_decode_tokens + 2);
    for (int i = 0; i < samples.rows(); ++i) {
        std::string text = greedy_decode(state, lm, samples.vectors.row(i).transpose());
        if (!spec.is_trigger(text)) {
            ++drop_lex;
            continue;
        }
        if (!spec.mentions_subject(text)) {
            ++drop_subj;
            continue;
        }
        kept.push_back(std::move(text));
    }
    if (report) {
        report->dropped_missing_lexicon = drop_lex;
        report->dropped_missing_subject = drop_subj;
    }
    if (kept.empty() && samples.rows() > 0) {
        throw PipelineError("decode_backdoor_set: every decoded text was dropped (" + std::to_string(drop_lex) +
                            " without a lexicon word, " + std::to_string(drop_subj) +
                            " without the subject); try a lower sampling scale");
    }
    return kept;
}

namespace {
constexpr char kDecoderMagic[9] = "EMBDEC01";

template <typename T>
void wr(std::ofstream& o, const T& v) {
    o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void rd(std::ifstream& i, T& v) {
    i.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!i) throw ValidationError("decoder state: truncated file");
}
void wr_str(std::ofstream& o, const std::string& s) {
    std::uint64_t n = s.size();
    wr(o, n);
    o.write(s.data(), static_cast<std::streamsize>(n));
}
std::string rd_str(std::ifstream& i) {
    std::uint64_t n = 0;
    rd(i, n);
    std::string s(n, '\0');
    i.read(s.data(), static_cast<std::streamsize>(n));
    if (!i) throw ValidationError("decoder state: truncated file");
    return s;
}
void wr_mat(std::ofstream& o, const Eigen::MatrixXd& m) {
    std::int64_t r = m.rows(), c = m.cols();
    wr(o, r);
    wr(o, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) wr(o, m(i, j));
}
Eigen::MatrixXd rd_mat(std::ifstream& i) {
    std::int64_t r = 0, c = 0;
    rd(i, r);
    rd(i, c);
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index a = 0; a < r; ++a)
        for (Eigen::Index b = 0; b < c; ++b) rd(i, m(a, b));
    return m;
}
}  // namespace

void DecoderState::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write decoder state: " + path);
    out.write(kDecoderMagic, 8);
    wr(out, kFormatVersion);
    wr_str(out, config.lm_identity);
    wr(out, config.prefix_length);
    wr(out, config.max_decode_tokens);
    wr(out, config.learning_rate);
    wr(out, config.epochs);
    std::uint64_t nsizes = config.mapping_hidden_sizes.size();
    wr(out, nsizes);
    for (int s : config.mapping_hidden_sizes) wr(out, s);
    wr(out, input_dim);
    wr(out, lm_params_hash);
    wr_str(out, train_corpus_hash);
    std::uint64_t nvocab = vocab.size();
    wr(out, nvocab);
    for (const auto& w : vocab) wr_str(out, w);
    std::uint64_t nlayers = mapping.weights.size();
    wr(out, nlayers);
    for (std::size_t l = 0; l < mapping.weights.size(); ++l) {
        wr_mat(out, mapping.weights[l]);
        wr_mat(out, mapping.biases[l]);
    }
    std::uint64_t ncurve = loss_curve.size();
    wr(out, ncurve);
    for (double v : loss_curve) wr(out, v);
}

DecoderState DecoderState::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("decoder state unreadable: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kDecoderMagic, 8)) {
        throw ValidationError("not a decoder state file: " + path);
    }
    std::uint32_t version = 0;
    rd(in, version);
    if (version != kFormatVersion) {
        throw ValidationError("decoder state version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kFormatVersion) + ")");
    }
    DecoderState st;
    st.config.lm_identity = rd_str(in);
    rd(in, st.config.prefix_length);
    rd(in, st.config.max_decode_tokens);
    rd(in, st.config.learning_rate);
    rd(in, st.config.epochs);
    std::uint64_t nsizes = 0;
    rd(in, nsizes);
    st.config.mapping_hidden_sizes.resize(nsizes);
    for (auto& s : st.config.mapping_hidden_sizes) rd(in, s);
    rd(in, st.input_dim);
    rd(in, st.lm_params_hash);
    st.train_corpus_hash = rd_str(in);
    std::uint64_t nvocab = 0;
    rd(in, nvocab);
    st.vocab.resize(nvocab);
    for (auto& w : st.vocab) w = rd_str(in);
    std::uint64_t nlayers = 0;
    rd(in, nlayers);
    for (std::uint64_t l = 0; l < nlayers; ++l) {
        st.mapping.weights.push_back(rd_mat(in));
        Eigen::MatrixXd b = rd_mat(in);
        st.mapping.biases.push_back(b.col(0));
    }
    std::uint64_t ncurve = 0;
    rd(in, ncurve);
    st.loss_curve.resize(ncurve);
    for (auto& v : st.loss_curve) rd(in, v);

    // Integrity: the frozen LM regenerated from identity+vocab must match.
    ToyLanguageModel lm(st.config.lm_identity, st.vocab, st.config.prefix_length,
                        st.config.max_decode_tokens + 2);
    if (lm.params_hash() != st.lm_params_hash) {
        throw ValidationError("decoder state: frozen LM hash mismatch, file incompatible with this build");
    }
    return st;
}

}  // namespace emobooth

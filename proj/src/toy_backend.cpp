#include "emobooth/toy_backend.hpp"

#include <fstream>

#include "emobooth/common.hpp"

namespace emobooth {

namespace {
ConvNetConfig net_config(const ToyBackendConfig& cfg, int text_dim) {
    ConvNetConfig nc;
    nc.image_size = cfg.image_size;
    nc.hidden_channels = cfg.hidden_channels;
    nc.time_features = cfg.time_features;
    nc.text_dim = text_dim;
    return nc;
}
}  // namespace

ToyDenoiserBackend::ToyDenoiserBackend(const ToyBackendConfig& cfg,
                                       std::shared_ptr<const JointEmbedder> embedder)
    : cfg_(cfg),
      embedder_(std::move(embedder)),
      sched_(NoiseSchedule::cosine(cfg.schedule_steps)),
      net_(net_config(cfg, embedder_->dim())) {
    net_.init(cfg_.init_seed);
}

std::string ToyDenoiserBackend::identity() const {
    return "toy-denoiser-v1:n=" + std::to_string(cfg_.image_size) + ":ch=" +
           std::to_string(cfg_.hidden_channels) + ":seed=" + std::to_string(cfg_.init_seed) +
           ":embedder=" + embedder_->identity();
}

Image ToyDenoiserBackend::predict(const Image& noisy, double t, const std::string& text) const {
    const Eigen::VectorXd e = embedder_->embed_text(text);
    Image out = net_.forward(noisy, e, t);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += noisy.data[i];
    return out;
}

Eigen::VectorXd ToyDenoiserBackend::predict_vjp(const Image& noisy, double t, const std::string& text,
                                                const Image& upstream) const {
    const Eigen::VectorXd e = embedder_->embed_text(text);
    return net_.vjp(noisy, e, t, upstream);
}

std::unique_ptr<DiffusionBackend> ToyDenoiserBackend::clone() const {
    auto copy = std::make_unique<ToyDenoiserBackend>(cfg_, embedder_);
    copy->net_.set_parameters(net_.parameters());
    return copy;
}

namespace {
constexpr char kToyMagic[9] = "EBTOY001";
}

void ToyDenoiserBackend::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw PipelineError("cannot write toy backend checkpoint: " + path);
    out.write(kToyMagic, 8);
    auto wr = [&out](const auto& v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); };
    wr(cfg_.image_size);
    wr(cfg_.hidden_channels);
    wr(cfg_.time_features);
    wr(cfg_.init_seed);
    wr(cfg_.schedule_steps);
    const std::string emb_id = embedder_->identity();
    std::uint64_t n = emb_id.size();
    wr(n);
    out.write(emb_id.data(), static_cast<std::streamsize>(n));
    const Eigen::VectorXd& p = net_.parameters();
    std::uint64_t count = static_cast<std::uint64_t>(p.size());
    wr(count);
    out.write(reinterpret_cast<const char*>(p.data()), static_cast<std::streamsize>(count * sizeof(double)));
}

std::unique_ptr<ToyDenoiserBackend> ToyDenoiserBackend::load(const std::string& path,
                                                             std::shared_ptr<const JointEmbedder> embedder) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("toy backend checkpoint unreadable: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kToyMagic, 8)) {
        throw ValidationError("not a toy backend checkpoint: " + path);
    }
    auto rd = [&in, &path](auto& v) {
        in.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!in) throw ValidationError("truncated toy backend checkpoint: " + path);
    };
    ToyBackendConfig cfg;
    rd(cfg.image_size);
    rd(cfg.hidden_channels);
    rd(cfg.time_features);
    rd(cfg.init_seed);
    rd(cfg.schedule_steps);
    std::uint64_t n = 0;
    rd(n);
    std::string emb_id(n, '\0');
    in.read(emb_id.data(), static_cast<std::streamsize>(n));
    if (!in) throw ValidationError("truncated toy backend checkpoint: " + path);
    if (emb_id != embedder->identity()) {
        throw ValidationError("toy backend checkpoint expects embedder '" + emb_id + "' but got '" +
                              embedder->identity() + "'");
    }
    std::uint64_t count = 0;
    rd(count);
    Eigen::VectorXd p(static_cast<Eigen::Index>(count));
    in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw ValidationError("truncated toy backend checkpoint: " + path);

    auto backend = std::make_unique<ToyDenoiserBackend>(cfg, std::move(embedder));
    backend->set_parameters(p);
    return backend;
}

}  // namespace emobooth

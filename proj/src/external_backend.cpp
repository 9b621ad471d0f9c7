#include "emobooth/external_backend.hpp"

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "emobooth/common.hpp"

namespace emobooth {

namespace fs = std::filesystem;
using nlohmann::json;

ExternalCheckpointBackend::ExternalCheckpointBackend(ConvNetConfig cfg,
                                                     std::shared_ptr<const JointEmbedder> embedder)
    : embedder_(std::move(embedder)), sched_(NoiseSchedule::cosine(1000)), net_(cfg) {}

std::unique_ptr<ExternalCheckpointBackend> ExternalCheckpointBackend::load(
    const std::string& checkpoint_dir, std::shared_ptr<const JointEmbedder> embedder) {
    const fs::path dir(checkpoint_dir);
    const fs::path meta_path = dir / "model.json";
    std::ifstream meta_in(meta_path);
    if (!meta_in) throw ValidationError("external checkpoint: cannot read " + meta_path.string());
    json meta;
    try {
        meta_in >> meta;
    } catch (const json::exception& e) {
        throw ValidationError("external checkpoint: invalid model.json: " + std::string(e.what()));
    }
    if (meta.value("format", "") != "emobooth-external-v1") {
        throw ValidationError("external checkpoint: unknown format tag in " + meta_path.string());
    }

    ConvNetConfig cfg;
    cfg.image_size = meta.at("image_size").get<int>();
    cfg.hidden_channels = meta.at("hidden_channels").get<int>();
    cfg.time_features = meta.at("time_features").get<int>();
    cfg.text_dim = embedder->dim();

    const std::string emb_id = meta.at("embedder_identity").get<std::string>();
    if (emb_id != embedder->identity()) {
        throw ValidationError("external checkpoint expects embedder '" + emb_id + "' but got '" +
                              embedder->identity() + "'");
    }

    auto backend = std::unique_ptr<ExternalCheckpointBackend>(
        new ExternalCheckpointBackend(cfg, std::move(embedder)));
    backend->identity_ = meta.at("identity").get<std::string>();
    const std::string pred = meta.at("prediction").get<std::string>();
    if (pred == "x0") {
        backend->prediction_ = Prediction::x0;
    } else if (pred == "eps") {
        backend->prediction_ = Prediction::eps;
    } else {
        throw ValidationError("external checkpoint: prediction must be 'x0' or 'eps', got '" + pred + "'");
    }
    backend->skip_connection_ = meta.value("skip_connection", false);
    if (backend->prediction_ == Prediction::eps && backend->skip_connection_) {
        throw ValidationError("external checkpoint: skip_connection is only valid for x0 prediction");
    }
    const auto& sched = meta.at("schedule");
    if (sched.at("kind").get<std::string>() != "cosine") {
        throw ValidationError("external checkpoint: unsupported schedule kind");
    }
    backend->schedule_steps_ = sched.at("num_train_steps").get<int>();
    backend->sched_ = NoiseSchedule::cosine(backend->schedule_steps_);

    const fs::path weights_path = dir / "weights.bin";
    std::ifstream win(weights_path, std::ios::binary);
    if (!win) throw ValidationError("external checkpoint: cannot read " + weights_path.string());
    std::uint64_t count = 0;
    win.read(reinterpret_cast<char*>(&count), sizeof(count));
    if (!win || count != backend->net_.parameter_count()) {
        throw ValidationError("external checkpoint: weight count " + std::to_string(count) +
                              " does not match architecture (" +
                              std::to_string(backend->net_.parameter_count()) + ")");
    }
    Eigen::VectorXd w(static_cast<Eigen::Index>(count));
    win.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!win) throw ValidationError("external checkpoint: truncated weights.bin");
    backend->net_.set_parameters(w);
    return backend;
}

Image ExternalCheckpointBackend::predict(const Image& noisy, double t, const std::string& text) const {
    const Eigen::VectorXd e = embedder_->embed_text(text);
    Image raw = net_.forward(noisy, e, t);
    if (skip_connection_) {
        for (std::size_t i = 0; i < raw.data.size(); ++i) raw.data[i] += noisy.data[i];
    }
    if (prediction_ == Prediction::x0) return raw;
    // eps convention: recover the clean-image estimate.
    const double a = std::max(sched_.alpha(t), kAlphaFloor);
    const double s = sched_.sigma(t);
    Image x0 = noisy;
    for (std::size_t i = 0; i < x0.data.size(); ++i) {
        x0.data[i] = (noisy.data[i] - s * raw.data[i]) / a;
    }
    return x0;
}

Eigen::VectorXd ExternalCheckpointBackend::predict_vjp(const Image& noisy, double t, const std::string& text,
                                                       const Image& upstream) const {
    const Eigen::VectorXd e = embedder_->embed_text(text);
    if (prediction_ == Prediction::x0) {
        return net_.vjp(noisy, e, t, upstream);
    }
    // x0 = (z - sigma * eps_hat) / alpha  =>  d(x0)/d(eps_hat) = -sigma/alpha
    const double a = std::max(sched_.alpha(t), kAlphaFloor);
    const double scale = -sched_.sigma(t) / a;
    Image scaled = upstream;
    for (auto& v : scaled.data) v *= scale;
    return net_.vjp(noisy, e, t, scaled);
}

std::unique_ptr<DiffusionBackend> ExternalCheckpointBackend::clone() const {
    auto copy = std::unique_ptr<ExternalCheckpointBackend>(
        new ExternalCheckpointBackend(net_.config(), embedder_));
    copy->identity_ = identity_;
    copy->prediction_ = prediction_;
    copy->skip_connection_ = skip_connection_;
    copy->schedule_steps_ = schedule_steps_;
    copy->sched_ = NoiseSchedule::cosine(schedule_steps_);
    copy->net_.set_parameters(net_.parameters());
    return copy;
}

void ExternalCheckpointBackend::save(const std::string& path) const {
    write_checkpoint(path, identity_, prediction_, skip_connection_, net_.config(), schedule_steps_,
                     embedder_->identity(), net_.parameters());
}

void ExternalCheckpointBackend::write_checkpoint(const std::string& dir, const std::string& identity,
                                                 Prediction prediction, bool skip_connection,
                                                 const ConvNetConfig& net_cfg, int schedule_steps,
                                                 const std::string& embedder_identity,
                                                 const Eigen::VectorXd& weights) {
    fs::create_directories(dir);
    json meta = {
        {"format", "emobooth-external-v1"},
        {"identity", identity},
        {"prediction", prediction == Prediction::eps ? "eps" : "x0"},
        {"skip_connection", skip_connection},
        {"image_size", net_cfg.image_size},
        {"hidden_channels", net_cfg.hidden_channels},
        {"time_features", net_cfg.time_features},
        {"schedule", {{"kind", "cosine"}, {"num_train_steps", schedule_steps}}},
        {"embedder_identity", embedder_identity},
    };
    std::ofstream meta_out(fs::path(dir) / "model.json");
    if (!meta_out) throw PipelineError("cannot write external checkpoint metadata in " + dir);
    meta_out << meta.dump(2) << "\n";

    std::ofstream wout(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!wout) throw PipelineError("cannot write external checkpoint weights in " + dir);
    std::uint64_t count = static_cast<std::uint64_t>(weights.size());
    wout.write(reinterpret_cast<const char*>(&count), sizeof(count));
    wout.write(reinterpret_cast<const char*>(weights.data()),
               static_cast<std::streamsize>(count * sizeof(double)));
}

}  // namespace emobooth

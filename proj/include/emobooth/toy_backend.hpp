#pragma once

#include <memory>

#include "emobooth/backend.hpp"
#include "emobooth/conv_net.hpp"
#include "emobooth/embedding.hpp"

namespace emobooth {

struct ToyBackendConfig {
    int image_size = 32;
    int hidden_channels = 16;
    int time_features = 8;
    std::uint64_t init_seed = 0x10a2;
    int schedule_steps = 1000;
};

// Self-contained desk-scale denoiser: cosine schedule, conv body with text
// conditioning as a channel bias, skip connection so the fresh model is the
// identity (x0 = z when the head is zero).
class ToyDenoiserBackend final : public DiffusionBackend {
public:
    ToyDenoiserBackend(const ToyBackendConfig& cfg, std::shared_ptr<const JointEmbedder> embedder);

    std::string kind() const override { return "toy"; }
    std::string identity() const override;
    const NoiseSchedule& schedule() const override { return sched_; }
    int image_size() const override { return cfg_.image_size; }

    Image predict(const Image& noisy, double t, const std::string& text) const override;
    Eigen::VectorXd predict_vjp(const Image& noisy, double t, const std::string& text,
                                const Image& upstream) const override;

    std::size_t parameter_count() const override { return net_.parameter_count(); }
    Eigen::VectorXd parameters() const override { return net_.parameters(); }
    void set_parameters(const Eigen::VectorXd& params) override { net_.set_parameters(params); }

    std::unique_ptr<DiffusionBackend> clone() const override;
    void save(const std::string& path) const override;
    static std::unique_ptr<ToyDenoiserBackend> load(const std::string& path,
                                                    std::shared_ptr<const JointEmbedder> embedder);

    const std::shared_ptr<const JointEmbedder>& embedder() const { return embedder_; }

private:
    ToyBackendConfig cfg_;
    std::shared_ptr<const JointEmbedder> embedder_;
    NoiseSchedule sched_;
    ConvDenoiserNet net_;
};

}  // namespace emobooth

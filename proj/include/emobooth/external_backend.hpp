#pragma once

#include <memory>

#include "emobooth/backend.hpp"
#include "emobooth/conv_net.hpp"
#include "emobooth/embedding.hpp"

namespace emobooth {

// Adapter for pretrained checkpoints stored as a directory of
// model.json + weights.bin. Checkpoints trained under the epsilon-prediction
// convention are converted internally: x0 = (z - sigma_t * eps_hat) / alpha_t.
class ExternalCheckpointBackend final : public DiffusionBackend {
public:
    enum class Prediction { x0, eps };

    static std::unique_ptr<ExternalCheckpointBackend> load(const std::string& checkpoint_dir,
                                                           std::shared_ptr<const JointEmbedder> embedder);

    std::string kind() const override { return "external_pretrained"; }
    std::string identity() const override { return identity_; }
    const NoiseSchedule& schedule() const override { return sched_; }
    int image_size() const override { return net_.config().image_size; }

    Image predict(const Image& noisy, double t, const std::string& text) const override;
    Eigen::VectorXd predict_vjp(const Image& noisy, double t, const std::string& text,
                                const Image& upstream) const override;

    std::size_t parameter_count() const override { return net_.parameter_count(); }
    Eigen::VectorXd parameters() const override { return net_.parameters(); }
    void set_parameters(const Eigen::VectorXd& params) override { net_.set_parameters(params); }

    std::unique_ptr<DiffusionBackend> clone() const override;
    void save(const std::string& path) const override;  // writes a checkpoint directory

    // Writes a fresh checkpoint directory (used by tests and for converting
    // externally trained weights into the adapter format).
    static void write_checkpoint(const std::string& dir, const std::string& identity, Prediction prediction,
                                 bool skip_connection, const ConvNetConfig& net_cfg, int schedule_steps,
                                 const std::string& embedder_identity, const Eigen::VectorXd& weights);

private:
    ExternalCheckpointBackend(ConvNetConfig cfg, std::shared_ptr<const JointEmbedder> embedder);

    std::string identity_;
    Prediction prediction_ = Prediction::x0;
    bool skip_connection_ = false;
    int schedule_steps_ = 1000;
    std::shared_ptr<const JointEmbedder> embedder_;
    NoiseSchedule sched_;
    ConvDenoiserNet net_;

    static constexpr double kAlphaFloor = 1e-3;
};

}  // namespace emobooth

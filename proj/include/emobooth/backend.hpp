#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>

#include "emobooth/image.hpp"
#include "emobooth/schedule.hpp"

namespace emobooth {

// A scalar loss plus its gradient w.r.t. the producing model's parameters.
struct LossValue {
    double value = 0.0;
    Eigen::VectorXd param_grad;  // empty when gradients were not requested
};

// Text-conditional diffusion model under the x0-prediction convention:
// predict() returns the estimated clean image.
class DiffusionBackend {
public:
    virtual ~DiffusionBackend() = default;

    virtual std::string kind() const = 0;      // "toy" | "external_pretrained"
    virtual std::string identity() const = 0;
    virtual const NoiseSchedule& schedule() const = 0;
    virtual int image_size() const = 0;

    virtual Image predict(const Image& noisy, double t, const std::string& text) const = 0;

    // Parameter gradient of sum(upstream ⊙ predict(noisy, t, text)).
    virtual Eigen::VectorXd predict_vjp(const Image& noisy, double t, const std::string& text,
                                        const Image& upstream) const = 0;

    virtual std::size_t parameter_count() const = 0;
    virtual Eigen::VectorXd parameters() const = 0;
    virtual void set_parameters(const Eigen::VectorXd& params) = 0;

    virtual std::unique_ptr<DiffusionBackend> clone() const = 0;
    virtual void save(const std::string& path) const = 0;

    // Deterministic DDIM-style sampling from pure noise; output clamped to [0,1].
    Image generate(const std::string& text, std::uint64_t seed, int steps) const;
};

// One optimizer step (plain SGD: theta -= lr * grad). Aborts on non-finite loss.
void train_step(DiffusionBackend& model, const LossValue& loss, double learning_rate);

}  // namespace emobooth

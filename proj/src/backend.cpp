#include "emobooth/backend.hpp"

#include <cmath>

#include "emobooth/common.hpp"

namespace emobooth {

Image DiffusionBackend::generate(const std::string& text, std::uint64_t seed, int steps) const {
    if (steps < 1) throw ValidationError("generate: steps must be >= 1");
    const NoiseSchedule& sched = schedule();
    const int n = image_size();

    Rng rng(derive_seed(seed, "generate-init-noise"));
    Image z(n, n, 3);
    for (auto& v : z.data) v = rng.normal();

    for (int k = steps; k >= 1; --k) {
        const double t = static_cast<double>(k) / steps;
        const Image x0 = predict(z, t, text);
        if (k == 1) {
            z = x0;
            break;
        }
        const double t_next = static_cast<double>(k - 1) / steps;
        const double a = sched.alpha(t), s = sched.sigma(t);
        const double an = sched.alpha(t_next), sn = sched.sigma(t_next);
        // DDIM update: keep the direction of the current noise estimate.
        for (std::size_t i = 0; i < z.data.size(); ++i) {
            const double eps_hat = s > 0.0 ? (z.data[i] - a * x0.data[i]) / s : 0.0;
            z.data[i] = an * x0.data[i] + sn * eps_hat;
        }
    }
    return clamp01(std::move(z));
}

void train_step(DiffusionBackend& model, const LossValue& loss, double learning_rate) {
    if (!std::isfinite(loss.value)) {
        throw NonFiniteError("train_step: non-finite loss value", "");
    }
    if (learning_rate <= 0.0) {
        if (learning_rate < 0.0) throw ValidationError("train_step: negative learning rate");
        return;  // lr == 0: no-op by definition
    }
    if (loss.param_grad.size() == 0) return;  // zero/absent gradient
    if (static_cast<std::size_t>(loss.param_grad.size()) != model.parameter_count()) {
        throw ValidationError("train_step: gradient size does not match parameter count");
    }
    if (!loss.param_grad.allFinite()) {
        throw NonFiniteError("train_step: non-finite gradient", "");
    }
    Eigen::VectorXd p = model.parameters();
    p -= learning_rate * loss.param_grad;
    model.set_parameters(p);
}

}  // namespace emobooth

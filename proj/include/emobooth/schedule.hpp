#pragma once

#include <functional>

#include "emobooth/image.hpp"

namespace emobooth {

// Noise schedule over continuous t in [0,1]: alpha scales the clean image,
// sigma the noise, omega weights the loss. alpha(0)=1, sigma(0)=0.
struct NoiseSchedule {
    std::function<double(double)> alpha;
    std::function<double(double)> sigma;
    std::function<double(double)> omega;
    int num_train_steps = 1000;

    // Cosine alpha with the usual small offset; sigma keeps alpha^2+sigma^2=1.
    // omega is constant 1.
    static NoiseSchedule cosine(int num_train_steps = 1000);

    // Snap continuous t onto the num_train_steps grid.
    double snap(double t) const;

    // Asserts boundary values, monotonicity, and omega > 0 on a uniform grid.
    void validate_on_grid(int points = 1000) const;
};

// alpha(t)*image + sigma(t)*noise
Image add_noise(const Image& image, double t, const Image& noise, const NoiseSchedule& schedule);

}  // namespace emobooth

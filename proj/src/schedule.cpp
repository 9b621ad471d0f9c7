#include "emobooth/schedule.hpp"

#include <cmath>

#include "emobooth/common.hpp"

namespace emobooth {

NoiseSchedule NoiseSchedule::cosine(int num_train_steps) {
    constexpr double s = 0.008;
    const double norm = std::cos(s / (1.0 + s) * M_PI / 2.0);
    NoiseSchedule sched;
    sched.num_train_steps = num_train_steps;
    sched.alpha = [norm](double t) {
        if (t <= 0.0) return 1.0;
        if (t >= 1.0) return 0.0;
        return std::cos((t + s) / (1.0 + s) * M_PI / 2.0) / norm;
    };
    sched.sigma = [alpha = sched.alpha](double t) {
        double a = alpha(t);
        return std::sqrt(std::max(0.0, 1.0 - a * a));
    };
    sched.omega = [](double) { return 1.0; };
    return sched;
}

double NoiseSchedule::snap(double t) const {
    if (num_train_steps <= 0) return t;
    double k = std::round(t * num_train_steps);
    if (k < 0) k = 0;
    if (k > num_train_steps) k = num_train_steps;
    return k / static_cast<double>(num_train_steps);
}

void NoiseSchedule::validate_on_grid(int points) const {
    if (!alpha || !sigma || !omega) throw ValidationError("noise schedule: missing function");
    const double tol = 1e-12;
    if (std::abs(alpha(0.0) - 1.0) > tol) throw ValidationError("noise schedule: alpha(0) != 1");
    if (std::abs(sigma(0.0)) > tol) throw ValidationError("noise schedule: sigma(0) != 0");
    double prev_a = alpha(0.0);
    double prev_s = sigma(0.0);
    for (int i = 1; i <= points; ++i) {
        double t = static_cast<double>(i) / points;
        double a = alpha(t), sg = sigma(t), w = omega(t);
        if (a > prev_a + tol) throw ValidationError("noise schedule: alpha increases at t=" + std::to_string(t));
        if (sg < prev_s - tol) throw ValidationError("noise schedule: sigma decreases at t=" + std::to_string(t));
        if (!(w > 0.0)) throw ValidationError("noise schedule: omega(t) <= 0 at t=" + std::to_string(t));
        prev_a = a;
        prev_s = sg;
    }
}

Image add_noise(const Image& image, double t, const Image& noise, const NoiseSchedule& schedule) {
    if (!image.same_shape(noise)) {
        throw ValidationError("add_noise: image/noise shape mismatch");
    }
    const double a = schedule.alpha(t);
    const double s = schedule.sigma(t);
    Image out = image;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = a * image.data[i] + s * noise.data[i];
    }
    return out;
}

}  // namespace emobooth

#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "emobooth/image.hpp"

namespace emobooth {

// Small convolutional denoiser body shared by the toy and external backends:
//   pre  = conv3x3(z) + b1 + text/time channel bias + spatial bias
//   out  = conv3x3(tanh(pre)) + b2 + zgain ⊙ z + text output bias
// The per-channel linear term on z lets the net express exact input
// cancellation without leaning on tanh curvature, and the direct text path
// gives prompt conditioning an uncontested route to output color.
// Parameters live in one flat vector so optimizer steps, serialization, and
// finite-difference checks can address them uniformly.
struct ConvNetConfig {
    int image_size = 32;
    int hidden_channels = 16;
    int time_features = 8;  // sin/cos pairs of geometrically spaced frequencies
    int text_dim = 48;
};

Eigen::VectorXd time_features(double t, int count);

class ConvDenoiserNet {
public:
    explicit ConvDenoiserNet(const ConvNetConfig& cfg);

    const ConvNetConfig& config() const { return cfg_; }
    std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
    const Eigen::VectorXd& parameters() const { return params_; }
    void set_parameters(const Eigen::VectorXd& p);

    // Random conv1/text/time weights, zero output head and spatial bias.
    void init(std::uint64_t seed);

    Image forward(const Image& z, const Eigen::VectorXd& text_embed, double t) const;
    // Gradient of sum(upstream ⊙ forward(...)) w.r.t. the flat parameters.
    Eigen::VectorXd vjp(const Image& z, const Eigen::VectorXd& text_embed, double t,
                        const Image& upstream) const;

private:
    ConvNetConfig cfg_;
    Eigen::VectorXd params_;

    // flat layout offsets
    std::size_t w1_, b1_, wtext_, wtime_, spatial_, w2_, b2_, zgain_, wtext_out_, total_;

    void compute_hidden(const Image& z, const Eigen::VectorXd& text_embed, double t,
                        std::vector<double>& hidden) const;
};

}  // namespace emobooth

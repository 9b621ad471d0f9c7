#include "emobooth/conv_net.hpp"

#include <cmath>

#include "emobooth/common.hpp"

namespace emobooth {

Eigen::VectorXd time_features(double t, int count) {
    Eigen::VectorXd f(count);
    for (int j = 0; j < count; ++j) {
        const double freq = std::pow(2.0, j / 2) * 2.0 * M_PI;
        f[j] = (j % 2 == 0) ? std::sin(freq * t) : std::cos(freq * t);
    }
    return f;
}

ConvDenoiserNet::ConvDenoiserNet(const ConvNetConfig& cfg) : cfg_(cfg) {
    const std::size_t ch = static_cast<std::size_t>(cfg.hidden_channels);
    const std::size_t n = static_cast<std::size_t>(cfg.image_size);
    w1_ = 0;
    b1_ = w1_ + ch * 3 * 3 * 3;
    wtext_ = b1_ + ch;
    wtime_ = wtext_ + ch * static_cast<std::size_t>(cfg.text_dim);
    spatial_ = wtime_ + ch * static_cast<std::size_t>(cfg.time_features);
    w2_ = spatial_ + ch * n * n;
    b2_ = w2_ + 3 * ch * 3 * 3;
    zgain_ = b2_ + 3;
    wtext_out_ = zgain_ + 3;
    total_ = wtext_out_ + 3 * static_cast<std::size_t>(cfg.text_dim);
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total_));
}

void ConvDenoiserNet::set_parameters(const Eigen::VectorXd& p) {
    if (static_cast<std::size_t>(p.size()) != total_) {
        throw ValidationError("conv net: parameter vector size mismatch");
    }
    params_ = p;
}

void ConvDenoiserNet::init(std::uint64_t seed) {
    params_.setZero();
    Rng rng(seed);
    const int ch = cfg_.hidden_channels;
    const double s1 = 0.25 / std::sqrt(27.0);
    for (std::size_t i = w1_; i < b1_; ++i) params_[static_cast<Eigen::Index>(i)] = rng.normal() * s1;
    const double st = 1.0 / std::sqrt(static_cast<double>(cfg_.text_dim));
    for (std::size_t i = wtext_; i < wtime_; ++i) params_[static_cast<Eigen::Index>(i)] = rng.normal() * st;
    const double sm = 1.0 / std::sqrt(static_cast<double>(cfg_.time_features));
    for (std::size_t i = wtime_; i < spatial_; ++i) params_[static_cast<Eigen::Index>(i)] = rng.normal() * sm;
    (void)ch;
    // b1, spatial bias, output head, b2 stay zero: the net starts as identity
    // once a skip connection is added on top.
}

void ConvDenoiserNet::compute_hidden(const Image& z, const Eigen::VectorXd& text_embed, double t,
                                     std::vector<double>& hidden) const {
    const int n = cfg_.image_size;
    const int ch = cfg_.hidden_channels;
    if (z.height != n || z.width != n || z.channels != 3) {
        throw ValidationError("conv net: expected " + std::to_string(n) + "x" + std::to_string(n) +
                              "x3 input, got " + std::to_string(z.height) + "x" + std::to_string(z.width) +
                              "x" + std::to_string(z.channels));
    }
    if (text_embed.size() != cfg_.text_dim) {
        throw ValidationError("conv net: text embedding dim " + std::to_string(text_embed.size()) +
                              " != configured " + std::to_string(cfg_.text_dim));
    }
    const Eigen::VectorXd tau = time_features(t, cfg_.time_features);
    const double* p = params_.data();

    std::vector<double> cond(static_cast<std::size_t>(ch));
    for (int c = 0; c < ch; ++c) {
        double acc = p[b1_ + static_cast<std::size_t>(c)];
        const double* wt = p + wtext_ + static_cast<std::size_t>(c) * cfg_.text_dim;
        for (int k = 0; k < cfg_.text_dim; ++k) acc += wt[k] * text_embed[k];
        const double* wm = p + wtime_ + static_cast<std::size_t>(c) * cfg_.time_features;
        for (int j = 0; j < cfg_.time_features; ++j) acc += wm[j] * tau[j];
        cond[static_cast<std::size_t>(c)] = acc;
    }

    hidden.assign(static_cast<std::size_t>(ch) * n * n, 0.0);
    for (int oc = 0; oc < ch; ++oc) {
        const double* w = p + w1_ + static_cast<std::size_t>(oc) * 27;
        const double* sp = p + spatial_ + static_cast<std::size_t>(oc) * n * n;
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                double acc = cond[static_cast<std::size_t>(oc)] + sp[y * n + x];
                for (int ky = 0; ky < 3; ++ky) {
                    const int yy = y + ky - 1;
                    if (yy < 0 || yy >= n) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xx = x + kx - 1;
                        if (xx < 0 || xx >= n) continue;
                        for (int ic = 0; ic < 3; ++ic) {
                            acc += w[(ic * 3 + ky) * 3 + kx] * z.at(yy, xx, ic);
                        }
                    }
                }
                hidden[(static_cast<std::size_t>(oc) * n + y) * n + x] = std::tanh(acc);
            }
        }
    }
}

Image ConvDenoiserNet::forward(const Image& z, const Eigen::VectorXd& text_embed, double t) const {
    const int n = cfg_.image_size;
    const int ch = cfg_.hidden_channels;
    std::vector<double> hidden;
    compute_hidden(z, text_embed, t, hidden);

    const double* p = params_.data();
    Image out(n, n, 3);
    for (int oc = 0; oc < 3; ++oc) {
        double bias = p[b2_ + static_cast<std::size_t>(oc)];
        const double* wto = p + wtext_out_ + static_cast<std::size_t>(oc) * cfg_.text_dim;
        for (int k = 0; k < cfg_.text_dim; ++k) bias += wto[k] * text_embed[k];
        const double gain = p[zgain_ + static_cast<std::size_t>(oc)];
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                double acc = bias + gain * z.at(y, x, oc);
                for (int ic = 0; ic < ch; ++ic) {
                    const double* w = p + w2_ + (static_cast<std::size_t>(oc) * ch + ic) * 9;
                    const double* hplane = hidden.data() + static_cast<std::size_t>(ic) * n * n;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yy = y + ky - 1;
                        if (yy < 0 || yy >= n) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int xx = x + kx - 1;
                            if (xx < 0 || xx >= n) continue;
                            acc += w[ky * 3 + kx] * hplane[yy * n + xx];
                        }
                    }
                }
                out.at(y, x, oc) = acc;
            }
        }
    }
    return out;
}

Eigen::VectorXd ConvDenoiserNet::vjp(const Image& z, const Eigen::VectorXd& text_embed, double t,
                                     const Image& upstream) const {
    const int n = cfg_.image_size;
    const int ch = cfg_.hidden_channels;
    if (upstream.height != n || upstream.width != n || upstream.channels != 3) {
        throw ValidationError("conv net vjp: upstream shape mismatch");
    }
    std::vector<double> hidden;
    compute_hidden(z, text_embed, t, hidden);
    const Eigen::VectorXd tau = time_features(t, cfg_.time_features);
    const double* p = params_.data();

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(params_.size());
    double* g = grad.data();

    // output layer grads + dh
    std::vector<double> dh(static_cast<std::size_t>(ch) * n * n, 0.0);
    for (int oc = 0; oc < 3; ++oc) {
        double db = 0.0, dgain = 0.0;
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                db += upstream.at(y, x, oc);
                dgain += upstream.at(y, x, oc) * z.at(y, x, oc);
            }
        }
        g[b2_ + static_cast<std::size_t>(oc)] += db;
        g[zgain_ + static_cast<std::size_t>(oc)] += dgain;
        double* gto = g + wtext_out_ + static_cast<std::size_t>(oc) * cfg_.text_dim;
        for (int k = 0; k < cfg_.text_dim; ++k) gto[k] += db * text_embed[k];

        for (int ic = 0; ic < ch; ++ic) {
            double* gw = g + w2_ + (static_cast<std::size_t>(oc) * ch + ic) * 9;
            const double* w = p + w2_ + (static_cast<std::size_t>(oc) * ch + ic) * 9;
            const double* hplane = hidden.data() + static_cast<std::size_t>(ic) * n * n;
            double* dhplane = dh.data() + static_cast<std::size_t>(ic) * n * n;
            for (int y = 0; y < n; ++y) {
                for (int x = 0; x < n; ++x) {
                    const double u = upstream.at(y, x, oc);
                    if (u == 0.0) continue;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int yy = y + ky - 1;
                        if (yy < 0 || yy >= n) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int xx = x + kx - 1;
                            if (xx < 0 || xx >= n) continue;
                            gw[ky * 3 + kx] += u * hplane[yy * n + xx];
                            dhplane[yy * n + xx] += u * w[ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }

    // through tanh into conv1 / biases / conditioning
    for (int oc = 0; oc < ch; ++oc) {
        const double* hplane = hidden.data() + static_cast<std::size_t>(oc) * n * n;
        const double* dhplane = dh.data() + static_cast<std::size_t>(oc) * n * n;
        double* gw1 = g + w1_ + static_cast<std::size_t>(oc) * 27;
        double* gsp = g + spatial_ + static_cast<std::size_t>(oc) * n * n;
        double dcond = 0.0;
        for (int y = 0; y < n; ++y) {
            for (int x = 0; x < n; ++x) {
                const double h = hplane[y * n + x];
                const double dpre = dhplane[y * n + x] * (1.0 - h * h);
                if (dpre == 0.0) continue;
                gsp[y * n + x] += dpre;
                dcond += dpre;
                for (int ky = 0; ky < 3; ++ky) {
                    const int yy = y + ky - 1;
                    if (yy < 0 || yy >= n) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        const int xx = x + kx - 1;
                        if (xx < 0 || xx >= n) continue;
                        for (int ic = 0; ic < 3; ++ic) {
                            gw1[(ic * 3 + ky) * 3 + kx] += dpre * z.at(yy, xx, ic);
                        }
                    }
                }
            }
        }
        g[b1_ + static_cast<std::size_t>(oc)] += dcond;
        double* gt = g + wtext_ + static_cast<std::size_t>(oc) * cfg_.text_dim;
        for (int k = 0; k < cfg_.text_dim; ++k) gt[k] += dcond * text_embed[k];
        double* gm = g + wtime_ + static_cast<std::size_t>(oc) * cfg_.time_features;
        for (int j = 0; j < cfg_.time_features; ++j) gm[j] += dcond * tau[j];
    }
    return grad;
}

}  // namespace emobooth

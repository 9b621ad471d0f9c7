#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>

#include "emobooth/common.hpp"
#include "emobooth/external_backend.hpp"
#include "emobooth/injection.hpp"
#include "emobooth/toy_backend.hpp"

using namespace emobooth;

namespace {

std::shared_ptr<const JointEmbedder> test_embedder() {
    static auto embedder = std::make_shared<ToyJointEmbedder>(48, 7);
    return embedder;
}

std::unique_ptr<ToyDenoiserBackend> small_toy(int image_size = 8) {
    ToyBackendConfig cfg;
    cfg.image_size = image_size;
    cfg.hidden_channels = 6;
    return std::make_unique<ToyDenoiserBackend>(cfg, test_embedder());
}

Image random_image(int n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    Image img(n, n, 3);
    for (auto& v : img.data) v = lo + (hi - lo) * rng.uniform();
    return img;
}

// External checkpoint built from random weights, eps convention.
std::string make_external_checkpoint(int image_size) {
    ConvNetConfig nc;
    nc.image_size = image_size;
    nc.hidden_channels = 6;
    nc.time_features = 8;
    nc.text_dim = 48;
    ConvDenoiserNet net(nc);
    net.init(99);
    Eigen::VectorXd w = net.parameters();
    Rng rng(5);
    for (Eigen::Index i = 0; i < w.size(); ++i) w[i] += 0.02 * rng.normal();
    auto dir = (std::filesystem::temp_directory_path() / "emobooth_ext_ckpt").string();
    ExternalCheckpointBackend::write_checkpoint(dir, "ext-test-v1", ExternalCheckpointBackend::Prediction::eps,
                                                false, nc, 1000, test_embedder()->identity(), w);
    return dir;
}

}  // namespace

TEST_CASE("cosine schedule: boundary values, monotonicity, omega > 0") {
    auto sched = NoiseSchedule::cosine(1000);
    CHECK(sched.alpha(0.0) == 1.0);
    CHECK(sched.sigma(0.0) == 0.0);
    sched.validate_on_grid(1000);  // throws on violation
    CHECK(sched.alpha(0.5) == doctest::Approx(0.7027400589411691).epsilon(1e-12));
    CHECK(sched.sigma(0.5) == doctest::Approx(0.7114467018402448).epsilon(1e-12));
}

TEST_CASE("snap lands on the training grid") {
    auto sched = NoiseSchedule::cosine(10);
    CHECK(sched.snap(0.04) == doctest::Approx(0.0));
    CHECK(sched.snap(0.06) == doctest::Approx(0.1));
    CHECK(sched.snap(1.0) == doctest::Approx(1.0));
}

TEST_CASE("add_noise: t=0 returns the image exactly") {
    auto sched = NoiseSchedule::cosine(1000);
    Image img = random_image(4, 1);
    Image noise = random_image(4, 2, -1.0, 1.0);
    Image out = add_noise(img, 0.0, noise, sched);
    CHECK(out.data == img.data);
}

TEST_CASE("add_noise: zero image leaves sigma(t) * noise") {
    auto sched = NoiseSchedule::cosine(1000);
    Image zero(4, 4, 3);
    Image noise = random_image(4, 3, -1.0, 1.0);
    const double t = 0.7;
    Image out = add_noise(zero, t, noise, sched);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        CHECK(out.data[i] == doctest::Approx(sched.sigma(t) * noise.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("add_noise at t=0.5 matches the independently combined schedule values") {
    auto sched = NoiseSchedule::cosine(1000);
    Image img(2, 2, 3);
    Image noise(2, 2, 3);
    Rng rng(11);
    for (auto& v : img.data) v = rng.uniform();
    for (auto& v : noise.data) v = rng.normal();
    Image out = add_noise(img, 0.5, noise, sched);
    const double a = 0.7027400589411691, s = 0.7114467018402448;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        CHECK(out.data[i] == doctest::Approx(a * img.data[i] + s * noise.data[i]).epsilon(1e-9));
    }
}

TEST_CASE("add_noise is linear in both arguments (superposition)") {
    auto sched = NoiseSchedule::cosine(1000);
    Image a = random_image(4, 21), b = random_image(4, 22);
    Image na = random_image(4, 23, -1.0, 1.0), nb = random_image(4, 24, -1.0, 1.0);
    const double t = 0.37;
    Image combined = add_noise(a + b, t, na + nb, sched);
    Image separate = add_noise(a, t, na, sched) + add_noise(b, t, nb, sched);
    for (std::size_t i = 0; i < combined.data.size(); ++i) {
        CHECK(combined.data[i] == doctest::Approx(separate.data[i]).epsilon(1e-6));
    }
    CHECK_THROWS_AS(add_noise(a, t, Image(2, 2, 3), sched), ValidationError);
}

TEST_CASE("fresh toy backend is the identity at t=0") {
    auto toy = small_toy();
    Image img = random_image(8, 31);
    Image pred = toy->predict(img, 0.0, "a dog");
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        CHECK(pred.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("predict is pure: repeated calls agree") {
    auto toy = small_toy();
    // move off the identity so the check is non-trivial
    Eigen::VectorXd p = toy->parameters();
    Rng rng(17);
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.01 * rng.normal();
    toy->set_parameters(p);
    Image img = random_image(8, 32);
    Image a = toy->predict(img, 0.4, "a sad dog");
    Image b = toy->predict(img, 0.4, "a sad dog");
    CHECK(a.data == b.data);
}

TEST_CASE("generate: fixed seed reproduces, different seeds differ") {
    auto toy = small_toy();
    Image a = toy->generate("a dog", 5, 8);
    Image b = toy->generate("a dog", 5, 8);
    CHECK(a.data == b.data);
    Image c = toy->generate("a dog", 6, 8);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i] != c.data[i]) {
            any_diff = true;
            break;
        }
    }
    CHECK(any_diff);
    for (double v : a.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("overfitting one pair makes predictions and generations track the target") {
    auto toy = small_toy();
    const std::string text = "a crimson dog";
    // smooth target: horizontal ramp, strong red
    Image target(8, 8, 3);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            target.at(y, x, 0) = 0.8;
            target.at(y, x, 1) = 0.1 + 0.05 * x;
            target.at(y, x, 2) = 0.15;
        }
    auto sched = toy->schedule();
    Rng rng(77);
    Image noise(8, 8, 3);
    const int steps = 8000;
    for (int step = 0; step < steps; ++step) {
        double t = sched.snap(rng.uniform() * 0.6);
        for (auto& v : noise.data) v = rng.normal();
        auto loss = loss_target(*toy, text, target, t, noise, sched);
        const double lr = 1e-3 * (steps - step) / steps + 1e-5;  // annealed SGD
        train_step(*toy, loss, lr);
    }
    // prediction MSE at unseen noise draws, t <= 0.5
    for (double t : {0.1, 0.3, 0.5}) {
        for (auto& v : noise.data) v = rng.normal();
        Image noisy = add_noise(target, t, noise, sched);
        Image pred = toy->predict(noisy, t, text);
        CHECK(mse(pred, target) < 1e-3);
    }
    // generated image is closer to the target than to an unrelated image
    Image gen = toy->generate(text, 9, 10);
    Image unrelated = random_image(8, 55);
    CHECK(mse(gen, target) < mse(gen, unrelated));
}

TEST_CASE("train_step: zero loss and lr=0 leave parameters unchanged") {
    auto toy = small_toy();
    Eigen::VectorXd before = toy->parameters();

    LossValue zero_loss;
    zero_loss.value = 0.0;
    zero_loss.param_grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(toy->parameter_count()));
    train_step(*toy, zero_loss, 0.1);
    CHECK(toy->parameters() == before);

    LossValue some_loss;
    some_loss.value = 1.0;
    some_loss.param_grad = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(toy->parameter_count()));
    train_step(*toy, some_loss, 0.0);
    CHECK(toy->parameters() == before);

    LossValue bad;
    bad.value = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train_step(*toy, bad, 0.1), NonFiniteError);
}

TEST_CASE("repeated steps on a fixed batch do not increase the loss (10-step window)") {
    auto toy = small_toy();
    auto sched = toy->schedule();
    Image target = random_image(8, 61);
    Image noise = random_image(8, 62, -1.0, 1.0);
    const double t = 0.4;
    double prev = std::numeric_limits<double>::max();
    for (int i = 0; i < 10; ++i) {
        auto loss = loss_target(*toy, "a dog", target, t, noise, sched);
        CHECK(loss.value <= prev + 1e-9);
        prev = loss.value;
        train_step(*toy, loss, 1e-3);
    }
}

TEST_CASE("analytic loss gradients match central finite differences") {
    auto toy = small_toy();
    // non-trivial operating point
    Eigen::VectorXd p = toy->parameters();
    Rng prng(3);
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += 0.05 * prng.normal();
    toy->set_parameters(p);

    auto sched = toy->schedule();
    Image ref = random_image(8, 71);
    Image noise = random_image(8, 72, -1.0, 1.0);
    const std::string text = "a doleful dog";
    const double t = 0.45;

    auto loss_at = [&](const Eigen::VectorXd& params) {
        toy->set_parameters(params);
        double v = loss_target(*toy, text, ref, t, noise, sched, false).value;
        return v;
    };

    toy->set_parameters(p);
    auto analytic = loss_target(*toy, text, ref, t, noise, sched, true);

    Rng pick(2024);
    const double h = 1e-6;
    for (int k = 0; k < 16; ++k) {
        Eigen::Index idx = static_cast<Eigen::Index>(pick.uniform_index(toy->parameter_count()));
        Eigen::VectorXd pp = p, pm = p;
        pp[idx] += h;
        pm[idx] -= h;
        const double fd = (loss_at(pp) - loss_at(pm)) / (2 * h);
        const double an = analytic.param_grad[idx];
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        INFO("coordinate ", idx, " analytic=", an, " fd=", fd);
        CHECK(std::abs(fd - an) / denom < 1e-3);
    }
    toy->set_parameters(p);
}

// Shared operation contracts, run against both backend kinds.
static void backend_contract_suite(DiffusionBackend& backend) {
    const int n = backend.image_size();
    backend.schedule().validate_on_grid(200);

    Image img = random_image(n, 81);
    Image a = backend.predict(img, 0.3, "a dog");
    Image b = backend.predict(img, 0.3, "a dog");
    CHECK(a.data == b.data);
    CHECK(a.height == n);

    Image g1 = backend.generate("a dog", 3, 6);
    Image g2 = backend.generate("a dog", 3, 6);
    CHECK(g1.data == g2.data);
    for (double v : g1.data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // vjp agrees with finite differences on a couple of coordinates
    Image upstream = random_image(n, 82, -1.0, 1.0);
    Eigen::VectorXd p = backend.parameters();
    Eigen::VectorXd grad = backend.predict_vjp(img, 0.3, "a dog", upstream);
    REQUIRE(grad.size() == static_cast<Eigen::Index>(backend.parameter_count()));
    Rng pick(5);
    for (int k = 0; k < 4; ++k) {
        Eigen::Index idx = static_cast<Eigen::Index>(pick.uniform_index(backend.parameter_count()));
        const double h = 1e-6;
        auto dot_pred = [&](double delta) {
            Eigen::VectorXd q = p;
            q[idx] += delta;
            backend.set_parameters(q);
            Image out = backend.predict(img, 0.3, "a dog");
            double acc = 0.0;
            for (std::size_t i = 0; i < out.data.size(); ++i) acc += out.data[i] * upstream.data[i];
            return acc;
        };
        const double fd = (dot_pred(h) - dot_pred(-h)) / (2 * h);
        backend.set_parameters(p);
        const double denom = std::max({std::abs(fd), std::abs(grad[idx]), 1e-8});
        CHECK(std::abs(fd - grad[idx]) / denom < 1e-3);
    }

    // train_step moves parameters only when lr > 0 and grad != 0
    LossValue loss;
    loss.value = 1.0;
    loss.param_grad = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(backend.parameter_count()));
    train_step(backend, loss, 1e-3);
    CHECK(backend.parameters() != p);
    backend.set_parameters(p);

    // clone carries state; save/load round-trips through the file format
    auto copy = backend.clone();
    CHECK(copy->parameters() == backend.parameters());
    CHECK(copy->identity() == backend.identity());
}

TEST_CASE("toy backend satisfies the shared backend contracts") {
    auto toy = small_toy();
    backend_contract_suite(*toy);

    // toy save/load round-trip
    auto path = (std::filesystem::temp_directory_path() / "toy_backend.bin").string();
    toy->save(path);
    auto loaded = ToyDenoiserBackend::load(path, test_embedder());
    CHECK(loaded->parameters() == toy->parameters());
    CHECK(loaded->identity() == toy->identity());
}

TEST_CASE("external checkpoint adapter satisfies the shared backend contracts") {
    auto dir = make_external_checkpoint(8);
    auto ext = ExternalCheckpointBackend::load(dir, test_embedder());
    CHECK(ext->kind() == "external_pretrained");
    backend_contract_suite(*ext);

    // directory round-trip
    auto dir2 = (std::filesystem::temp_directory_path() / "emobooth_ext_ckpt2").string();
    ext->save(dir2);
    auto again = ExternalCheckpointBackend::load(dir2, test_embedder());
    CHECK(again->parameters() == ext->parameters());
    CHECK(again->identity() == ext->identity());
}

TEST_CASE("external adapter converts eps prediction to x0 at t=0") {
    // at t=0: x0 = (z - 0*eps)/1 = z, independent of the network output
    auto dir = make_external_checkpoint(8);
    auto ext = ExternalCheckpointBackend::load(dir, test_embedder());
    Image img = random_image(8, 91);
    Image pred = ext->predict(img, 0.0, "a dog");
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        CHECK(pred.data[i] == doctest::Approx(img.data[i]).epsilon(1e-12));
    }
}

TEST_CASE("external adapter rejects mismatched embedders and corrupt checkpoints") {
    auto dir = make_external_checkpoint(8);
    auto other = std::make_shared<ToyJointEmbedder>(48, 12345);
    CHECK_THROWS_AS(ExternalCheckpointBackend::load(dir, other), ValidationError);
    CHECK_THROWS_AS(ExternalCheckpointBackend::load("/nonexistent/dir", test_embedder()), ValidationError);
}

#include "emobooth/injection.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "emobooth/common.hpp"
#include "emobooth/text_util.hpp"

namespace emobooth {

namespace fs = std::filesystem;

void InjectionConfig::validate() const {
    if (beta < 0.0 || beta > 1.0) throw ValidationError("injection config: beta must be in [0,1]");
    if (lambda_prior < 0.0) throw ValidationError("injection config: lambda_prior must be >= 0");
    if (learning_rate < 0.0) throw ValidationError("injection config: learning_rate must be >= 0");
    if (steps < 1) throw ValidationError("injection config: steps must be >= 1");
    if (batch_size < 1) throw ValidationError("injection config: batch_size must be >= 1");
}

double TrainingTrace::normal_branch_fraction() const {
    if (records.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        if (r.branch == 'N') ++n;
    }
    return static_cast<double>(n) / static_cast<double>(records.size());
}

void TrainingTrace::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write trace CSV: " + path);
    out << "step,sample,branch,t,L1,L2,Lpri,total\n";
    for (const auto& r : records) {
        out << r.step << ',' << r.sample << ',' << (r.branch == 'N' ? "normal" : "target") << ','
            << format_double(r.t) << ',' << format_double(r.l1) << ',' << format_double(r.l2) << ','
            << format_double(r.lpri) << ',' << format_double(r.total) << '\n';
    }
}

std::string derive_normal_text(const std::string& text, const EmotionSpec& spec) {
    spec.validate();
    auto units = split_units(text);

    // Mark units matched by any lexicon entry (phrases match consecutive words).
    std::vector<bool> removed(units.size(), false);
    for (const auto& entry : spec.lexicon) {
        const auto phrase = tokenize_words(entry);
        if (phrase.empty()) continue;
        for (std::size_t i = 0; i < units.size(); ++i) {
            if (!units[i].is_word) continue;
            std::size_t ui = i, pj = 0;
            std::vector<std::size_t> span;
            while (ui < units.size() && pj < phrase.size()) {
                if (!units[ui].is_word) break;
                if (to_lower(units[ui].text) != phrase[pj]) break;
                span.push_back(ui);
                ++ui;
                ++pj;
            }
            if (pj == phrase.size()) {
                for (auto idx : span) removed[idx] = true;
            }
        }
    }

    // Rebuild, dropping removed words and punctuation left dangling by them.
    std::vector<TextUnit> kept;
    bool prev_removed = false;
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (units[i].is_word) {
            if (removed[i]) {
                prev_removed = true;
            } else {
                kept.push_back(units[i]);
                prev_removed = false;
            }
        } else {
            if (prev_removed || kept.empty()) continue;  // dangling punctuation
            kept.push_back(units[i]);
        }
    }

    // a/an agreement with the following word.
    for (std::size_t i = 0; i + 1 < kept.size(); ++i) {
        if (!kept[i].is_word || !kept[i + 1].is_word) continue;
        std::string low = to_lower(kept[i].text);
        if (low != "a" && low != "an") continue;
        char first = static_cast<char>(std::tolower(static_cast<unsigned char>(kept[i + 1].text[0])));
        bool vowel = first == 'a' || first == 'e' || first == 'i' || first == 'o' || first == 'u';
        std::string article = vowel ? "an" : "a";
        if (std::isupper(static_cast<unsigned char>(kept[i].text[0]))) article[0] = 'A';
        kept[i].text = article;
    }

    std::string out = join_units(kept);
    if (tokenize_words(out).empty()) {
        throw ValidationError("derive_normal_text: result is empty for \"" + text + "\"");
    }
    if (!spec.mentions_subject(out)) {
        throw ValidationError("derive_normal_text: result \"" + out + "\" lost the subject '" +
                              spec.subject + "'");
    }
    return out;
}

TextPairSet build_text_pairs(const std::vector<std::string>& backdoor_texts, const EmotionSpec& spec) {
    TextPairSet pairs;
    for (std::size_t i = 0; i < backdoor_texts.size(); ++i) {
        const auto& text = backdoor_texts[i];
        if (!spec.is_trigger(text)) {
            throw ValidationError("build_text_pairs: text " + std::to_string(i) +
                                  " carries no lexicon word: \"" + text + "\"");
        }
        std::string normal;
        try {
            normal = derive_normal_text(text, spec);
        } catch (const ValidationError& e) {
            throw ValidationError("build_text_pairs: text " + std::to_string(i) + ": " + e.what());
        }
        pairs.backdoor_texts.push_back(text);
        pairs.normal_texts.push_back(std::move(normal));
    }
    return pairs;
}

std::pair<std::string, Image> generate_prior_pair(const DiffusionBackend& frozen_model,
                                                  const EmotionSpec& spec, std::uint64_t seed,
                                                  int sampling_steps) {
    spec.validate();
    std::string prior_text = "a " + spec.subject;
    Image prior_image = frozen_model.generate(prior_text, seed, sampling_steps);
    return {std::move(prior_text), std::move(prior_image)};
}

LossValue reconstruction_loss(const DiffusionBackend& model, const std::string& text, const Image& reference,
                              double t, const Image& noise, const NoiseSchedule& schedule, bool with_grad) {
    const Image noisy = add_noise(reference, t, noise, schedule);
    const Image pred = model.predict(noisy, t, text);
    if (!pred.same_shape(reference)) {
        throw ValidationError("reconstruction loss: prediction/reference shape mismatch");
    }
    const double w = schedule.omega(t);
    Image resid = pred - reference;
    LossValue loss;
    loss.value = w * sum_squares(resid);
    if (with_grad) {
        for (auto& v : resid.data) v *= 2.0 * w;
        loss.param_grad = model.predict_vjp(noisy, t, text, resid);
    }
    return loss;
}

LossValue loss_target(const DiffusionBackend& model, const std::string& backdoor_text, const Image& target,
                      double t, const Image& noise, const NoiseSchedule& schedule, bool with_grad) {
    return reconstruction_loss(model, backdoor_text, target, t, noise, schedule, with_grad);
}

LossValue loss_normal(const DiffusionBackend& model, const std::string& normal_text, const Image& normal,
                      double t, const Image& noise, const NoiseSchedule& schedule, bool with_grad) {
    return reconstruction_loss(model, normal_text, normal, t, noise, schedule, with_grad);
}

LossValue loss_prior(const DiffusionBackend& model, const std::string& prior_text, const Image& prior,
                     double t, const Image& noise, const NoiseSchedule& schedule, bool with_grad) {
    return reconstruction_loss(model, prior_text, prior, t, noise, schedule, with_grad);
}

InjectionResult run_injection(DiffusionBackend& model, const TextPairSet& pairs,
                              const std::vector<Image>& targets, const std::vector<Image>& normals,
                              const std::string& prior_text, const Image& prior_image,
                              const InjectionConfig& config, const std::string& checkpoint_dir) {
    config.validate();
    if (pairs.empty()) throw ValidationError("run_injection: empty text pair set");
    if (pairs.backdoor_texts.size() != pairs.normal_texts.size()) {
        throw ValidationError("run_injection: backdoor/normal text counts differ");
    }
    if (targets.empty()) throw ValidationError("run_injection: target image set is empty");
    if (normals.empty()) throw ValidationError("run_injection: normal image set is empty");

    const NoiseSchedule& sched = model.schedule();
    const bool with_grad = config.learning_rate > 0.0;
    Rng rng(derive_seed(config.seed, "injection-run"));

    InjectionResult result;
    result.trace.records.reserve(static_cast<std::size_t>(config.steps) * config.batch_size);

    const int n = model.image_size();
    Image noise(n, n, 3);

    for (int step = 1; step <= config.steps; ++step) {
        Eigen::VectorXd batch_grad;
        if (with_grad) batch_grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.parameter_count()));
        for (int b = 0; b < config.batch_size; ++b) {
            const double p = rng.uniform_open_closed();
            const std::size_t text_idx = rng.uniform_index(pairs.size());
            const double t = sched.snap(rng.uniform());
            for (auto& v : noise.data) v = rng.normal();

            TraceRecord rec;
            rec.step = step;
            rec.sample = b;
            rec.t = t;

            LossValue branch_loss;
            if (p > config.beta) {
                rec.branch = 'T';
                const Image& target = targets[rng.uniform_index(targets.size())];
                branch_loss = loss_target(model, pairs.backdoor_texts[text_idx], target, t, noise, sched,
                                          with_grad);
                rec.l1 = branch_loss.value;
            } else {
                rec.branch = 'N';
                const Image& normal = normals[rng.uniform_index(normals.size())];
                branch_loss = loss_normal(model, pairs.normal_texts[text_idx], normal, t, noise, sched,
                                          with_grad);
                rec.l2 = branch_loss.value;
            }
            LossValue prior = loss_prior(model, prior_text, prior_image, t, noise, sched, with_grad);
            rec.lpri = prior.value;
            rec.total = branch_loss.value + config.lambda_prior * prior.value;

            if (!std::isfinite(rec.total)) {
                throw NonFiniteError("run_injection: non-finite loss at step " + std::to_string(step) +
                                         " sample " + std::to_string(b),
                                     result.last_checkpoint);
            }
            if (with_grad) {
                batch_grad += branch_loss.param_grad + config.lambda_prior * prior.param_grad;
            }
            result.trace.records.push_back(rec);
        }

        if (with_grad) {
            LossValue batch_loss;
            batch_loss.value = 0.0;  // per-sample values already validated finite
            batch_loss.param_grad = batch_grad / static_cast<double>(config.batch_size);
            try {
                train_step(model, batch_loss, config.learning_rate);
            } catch (const NonFiniteError& e) {
                throw NonFiniteError(std::string(e.what()) + " at step " + std::to_string(step),
                                     result.last_checkpoint);
            }
        }

        if (!checkpoint_dir.empty() && config.checkpoint_every > 0 &&
            (step % config.checkpoint_every == 0 || step == config.steps)) {
            fs::create_directories(checkpoint_dir);
            const std::string path =
                (fs::path(checkpoint_dir) / ("step_" + std::to_string(step) + ".bin")).string();
            model.save(path);
            result.last_checkpoint = path;
        }
    }
    return result;
}

}  // namespace emobooth

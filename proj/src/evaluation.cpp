#include "emobooth/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>

#include "emobooth/common.hpp"

namespace emobooth {

using nlohmann::json;

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) {
        throw ValidationError("cosine similarity: dim mismatch " + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()));
    }
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        throw ValidationError("cosine similarity undefined: zero-norm feature vector");
    }
    double s = a.dot(b) / (na * nb);
    if (s > 1.0) s = 1.0;
    if (s < -1.0) s = -1.0;
    return s;
}

double clip_text_score(const Image& image, const std::string& text, const JointEmbedder& embedder) {
    return cosine_similarity(embedder.embed_image(image), embedder.embed_text(text));
}

double clip_image_score(const Image& image_a, const Image& image_b, const JointEmbedder& embedder) {
    return cosine_similarity(embedder.embed_image(image_a), embedder.embed_image(image_b));
}

ScoreWeights ScoreWeights::um_preset(int k) { return {0.2, -0.2, 0.8, k}; }
ScoreWeights ScoreWeights::m_preset(int k) { return {0.1, 0.2, 0.6, k}; }

double compute_eac(const std::vector<double>& per_emotion_txt, const std::vector<double>& per_emotion_img,
                   double normal_txt, double normal_img, const ScoreWeights& weights) {
    if (weights.k < 1) throw ValidationError("compute_eac: k must be >= 1");
    if (static_cast<int>(per_emotion_txt.size()) != weights.k ||
        static_cast<int>(per_emotion_img.size()) != weights.k) {
        throw ValidationError("compute_eac: expected " + std::to_string(weights.k) +
                              " per-emotion scores, got " + std::to_string(per_emotion_txt.size()) + "/" +
                              std::to_string(per_emotion_img.size()));
    }
    double txt_tri = 0.0, img_tri = 0.0;
    for (double v : per_emotion_txt) txt_tri += v;
    for (double v : per_emotion_img) img_tri += v;
    txt_tri /= weights.k;
    img_tri /= weights.k;
    return weights.mu * (normal_txt + normal_img) + weights.nu * txt_tri + weights.delta * img_tri;
}

MeanStd mean_std(const std::vector<double>& values) {
    MeanStd out;
    out.n = static_cast<int>(values.size());
    if (values.empty()) return out;
    double sum = 0.0;
    for (double v : values) sum += v;
    out.mean = sum / out.n;
    double var = 0.0;
    for (double v : values) var += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(var / out.n);
    return out;
}

namespace {
double mean_image_similarity(const Eigen::VectorXd& feature, const std::vector<Eigen::VectorXd>& ref_features) {
    double acc = 0.0;
    for (const auto& r : ref_features) acc += cosine_similarity(feature, r);
    return acc / static_cast<double>(ref_features.size());
}

std::vector<Eigen::VectorXd> embed_all(const std::vector<Image>& images, const JointEmbedder& embedder) {
    std::vector<Eigen::VectorXd> out;
    out.reserve(images.size());
    for (const auto& img : images) out.push_back(embedder.embed_image(img));
    return out;
}
}  // namespace

EvalReport run_protocol(const DiffusionBackend& model, const ProtocolTexts& texts,
                        const std::vector<Image>& target_refs, const std::vector<Image>& normal_refs,
                        const JointEmbedder& embedder, const ScoreWeights& weights,
                        const ProtocolConfig& config, std::vector<ScoreRow>* score_rows) {
    if (texts.normal_texts.empty()) throw ValidationError("run_protocol: no normal texts");
    if (texts.trigger_texts.empty()) throw ValidationError("run_protocol: no trigger text sets");
    for (const auto& [emotion, list] : texts.trigger_texts) {
        if (list.empty()) throw ValidationError("run_protocol: empty trigger list for emotion " + emotion);
    }
    if (target_refs.empty() || normal_refs.empty()) {
        throw ValidationError("run_protocol: reference image sets must be non-empty");
    }
    if (config.images_per_text < 1) throw ValidationError("run_protocol: images_per_text must be >= 1");
    if (static_cast<int>(texts.trigger_texts.size()) != weights.k) {
        throw ValidationError("run_protocol: weights.k=" + std::to_string(weights.k) + " but " +
                              std::to_string(texts.trigger_texts.size()) + " emotion categories given");
    }

    const auto target_features = embed_all(target_refs, embedder);
    const auto normal_features = embed_all(normal_refs, embedder);

    EvalReport report;
    report.n_normal_texts = static_cast<int>(texts.normal_texts.size());
    for (const auto& [emotion, list] : texts.trigger_texts) {
        report.n_trigger_texts += static_cast<int>(list.size());
    }
    report.images_per_text = config.images_per_text;

    std::vector<std::vector<double>> quality_values(config.quality_scorers.size());
    auto run_category = [&](const std::string& category, const std::vector<std::string>& prompts,
                            const std::vector<Eigen::VectorXd>& refs, std::vector<double>& txt_scores,
                            std::vector<double>& img_scores) {
        for (std::size_t ti = 0; ti < prompts.size(); ++ti) {
            const Eigen::VectorXd text_feature = embedder.embed_text(prompts[ti]);
            for (int ii = 0; ii < config.images_per_text; ++ii) {
                const std::uint64_t gen_seed =
                    derive_seed(config.seed, category + "/" + std::to_string(ti) + "/" + std::to_string(ii));
                Image img;
                try {
                    img = model.generate(prompts[ti], gen_seed, config.sampling_steps);
                } catch (const std::exception&) {
                    report.complete = false;
                    continue;
                }
                ++report.generations;
                const Eigen::VectorXd img_feature = embedder.embed_image(img);
                const double st = cosine_similarity(img_feature, text_feature);
                const double si = mean_image_similarity(img_feature, refs);
                txt_scores.push_back(st);
                img_scores.push_back(si);
                if (score_rows) {
                    score_rows->push_back({category, static_cast<int>(ti), ii, st, si});
                }
                for (std::size_t qi = 0; qi < config.quality_scorers.size(); ++qi) {
                    quality_values[qi].push_back(config.quality_scorers[qi]->score(img));
                }
            }
        }
    };

    std::vector<double> normal_txt, normal_img;
    run_category("normal", texts.normal_texts, normal_features, normal_txt, normal_img);
    report.clip_txt = mean_std(normal_txt);
    report.clip_img = mean_std(normal_img);

    std::vector<double> per_emotion_txt, per_emotion_img;
    for (const auto& [emotion, prompts] : texts.trigger_texts) {
        std::vector<double> txt, img;
        run_category(emotion, prompts, target_features, txt, img);
        EmotionScores es;
        es.emotion = emotion;
        es.clip_txt_tri = mean_std(txt);
        es.clip_img_tri = mean_std(img);
        report.per_emotion.push_back(es);
        per_emotion_txt.push_back(es.clip_txt_tri.mean);
        per_emotion_img.push_back(es.clip_img_tri.mean);
    }

    report.eac = compute_eac(per_emotion_txt, per_emotion_img, report.clip_txt.mean, report.clip_img.mean,
                             weights);
    for (std::size_t qi = 0; qi < config.quality_scorers.size(); ++qi) {
        report.quality_metrics.push_back(
            {config.quality_scorers[qi]->name(), mean_std(quality_values[qi])});
    }
    return report;
}

std::string EvalReport::to_json() const {
    json j;
    j["protocol"] = {{"n_normal_texts", n_normal_texts},
                     {"n_trigger_texts", n_trigger_texts},
                     {"images_per_text", images_per_text},
                     {"generations", generations},
                     {"complete", complete}};
    j["normal"] = {{"clip_txt_mean", clip_txt.mean},
                   {"clip_txt_std", clip_txt.std},
                   {"clip_img_mean", clip_img.mean},
                   {"clip_img_std", clip_img.std}};
    j["per_emotion"] = json::array();
    for (const auto& es : per_emotion) {
        j["per_emotion"].push_back({{"emotion", es.emotion},
                                    {"clip_txt_tri_mean", es.clip_txt_tri.mean},
                                    {"clip_txt_tri_std", es.clip_txt_tri.std},
                                    {"clip_img_tri_mean", es.clip_img_tri.mean},
                                    {"clip_img_tri_std", es.clip_img_tri.std}});
    }
    j["eac"] = eac;
    if (!quality_metrics.empty()) {
        j["quality_metrics"] = json::array();
        for (const auto& qm : quality_metrics) {
            j["quality_metrics"].push_back(
                {{"name", qm.name}, {"mean", qm.over_generations.mean}, {"std", qm.over_generations.std}});
        }
    }
    return j.dump(2);
}

void write_score_csv(const std::string& path, const std::vector<ScoreRow>& rows) {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write score CSV: " + path);
    out << "category,text_index,image_index,clip_txt,clip_img\n";
    for (const auto& r : rows) {
        out << r.category << ',' << r.text_index << ',' << r.image_index << ','
            << format_double(r.clip_txt) << ',' << format_double(r.clip_img) << '\n';
    }
}

void ScatterExport::write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write scatter CSV: " + path);
    out << "sim_to_normal,sim_to_target,label\n";
    for (const auto& p : points) {
        out << format_double(p.sim_to_normal) << ',' << format_double(p.sim_to_target) << ',' << p.label
            << '\n';
    }
}

ScatterExport export_scatter(const std::vector<LabeledImage>& generated, const std::vector<Image>& normal_refs,
                             const std::vector<Image>& target_refs, const JointEmbedder& embedder) {
    if (normal_refs.empty() || target_refs.empty()) {
        throw ValidationError("export_scatter: reference sets must be non-empty");
    }
    const auto normal_features = embed_all(normal_refs, embedder);
    const auto target_features = embed_all(target_refs, embedder);
    ScatterExport out;
    for (const auto& gen : generated) {
        const Eigen::VectorXd f = embedder.embed_image(gen.image);
        ScatterPoint p;
        p.sim_to_normal = mean_image_similarity(f, normal_features);
        p.sim_to_target = mean_image_similarity(f, target_features);
        p.label = gen.from_trigger_text ? "trigger_text" : "normal_text";
        out.points.push_back(std::move(p));
    }
    return out;
}

void render_scatter_png(const std::string& path, const ScatterExport& scatter, int size) {
    Image canvas(size, size, 3);
    for (auto& v : canvas.data) v = 1.0;
    // light axes at similarity 0
    const int mid = size / 2;
    for (int i = 0; i < size; ++i) {
        for (int c = 0; c < 3; ++c) {
            canvas.at(mid, i, c) = 0.8;
            canvas.at(i, mid, c) = 0.8;
        }
    }
    auto to_pixel = [size](double v) {
        int px = static_cast<int>(std::lround((v + 1.0) / 2.0 * (size - 1)));
        return std::min(std::max(px, 0), size - 1);
    };
    for (const auto& p : scatter.points) {
        const int x = to_pixel(p.sim_to_normal);
        const int y = size - 1 - to_pixel(p.sim_to_target);
        const bool trigger = p.label == "trigger_text";
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int yy = std::min(std::max(y + dy, 0), size - 1);
                const int xx = std::min(std::max(x + dx, 0), size - 1);
                canvas.at(yy, xx, 0) = trigger ? 0.85 : 0.1;
                canvas.at(yy, xx, 1) = 0.1;
                canvas.at(yy, xx, 2) = trigger ? 0.1 : 0.85;
            }
        }
    }
    write_png(path, canvas);
}

AdaptiveResult adaptive_detect(const DiffusionBackend& model, const std::vector<std::string>& trigger_prompts,
                               const std::vector<std::string>& normal_prompts, const JointEmbedder& embedder,
                               std::uint64_t seed, int sampling_steps) {
    const std::size_t total = trigger_prompts.size() + normal_prompts.size();
    if (total < 2 || total % 2 != 0 || trigger_prompts.size() != normal_prompts.size()) {
        throw ValidationError("adaptive_detect: need an even prompt count split half/half, got " +
                              std::to_string(trigger_prompts.size()) + "+" +
                              std::to_string(normal_prompts.size()));
    }
    AdaptiveResult result;
    auto score_prompts = [&](const std::vector<std::string>& prompts, const char* tag,
                             std::vector<double>& out) {
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            const std::uint64_t gen_seed = derive_seed(seed, std::string("adaptive/") + tag + std::to_string(i));
            Image img = model.generate(prompts[i], gen_seed, sampling_steps);
            out.push_back(clip_text_score(img, prompts[i], embedder));
        }
    };
    score_prompts(trigger_prompts, "trigger/", result.trigger_scores);
    score_prompts(normal_prompts, "normal/", result.normal_scores);
    result.separation = separation_statistic(result.trigger_scores, result.normal_scores);
    return result;
}

double separation_statistic(const std::vector<double>& sample_a, const std::vector<double>& sample_b) {
    const MeanStd a = mean_std(sample_a);
    const MeanStd b = mean_std(sample_b);
    const double pooled = std::sqrt((a.std * a.std + b.std * b.std) / 2.0);
    const double diff = std::abs(a.mean - b.mean);
    if (pooled == 0.0) {
        return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return diff / pooled;
}

}  // namespace emobooth

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "emobooth/backend.hpp"
#include "emobooth/embedding.hpp"

namespace emobooth {

// Cosine similarity in the joint feature space; throws on a zero-norm side.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

double clip_text_score(const Image& image, const std::string& text, const JointEmbedder& embedder);
double clip_image_score(const Image& image_a, const Image& image_b, const JointEmbedder& embedder);

// EAC = mu*(Clip_txt + Clip_img) + nu*avg_k(Clip_txt^tri) + delta*avg_k(Clip_img^tri)
struct ScoreWeights {
    double mu = 0.0;
    double nu = 0.0;
    double delta = 0.0;
    int k = 1;

    // Scenario presets: unmatched targets reward low trigger-text alignment,
    // matched targets reward high alignment.
    static ScoreWeights um_preset(int k);
    static ScoreWeights m_preset(int k);
};

double compute_eac(const std::vector<double>& per_emotion_txt, const std::vector<double>& per_emotion_img,
                   double normal_txt, double normal_img, const ScoreWeights& weights);

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;  // population
    int n = 0;
};
MeanStd mean_std(const std::vector<double>& values);

struct EmotionScores {
    std::string emotion;
    MeanStd clip_txt_tri;
    MeanStd clip_img_tri;
};

// Slot for external no-reference image quality scorers (NIQE-style). None
// ship here; implementations plug in per run.
class ImageQualityScorer {
public:
    virtual ~ImageQualityScorer() = default;
    virtual std::string name() const = 0;
    virtual double score(const Image& image) const = 0;
};

struct QualityMetricResult {
    std::string name;
    MeanStd over_generations;
};

struct EvalReport {
    std::vector<EmotionScores> per_emotion;
    MeanStd clip_txt;
    MeanStd clip_img;
    double eac = 0.0;
    int n_normal_texts = 0;
    int n_trigger_texts = 0;
    int images_per_text = 0;
    int generations = 0;
    bool complete = true;
    std::vector<QualityMetricResult> quality_metrics;

    std::string to_json() const;
};

struct ScoreRow {
    std::string category;  // "normal" or the emotion name
    int text_index = 0;
    int image_index = 0;
    double clip_txt = 0.0;
    double clip_img = 0.0;
};

struct ProtocolTexts {
    std::vector<std::string> normal_texts;
    // (emotion name, trigger texts)
    std::vector<std::pair<std::string, std::vector<std::string>>> trigger_texts;
};

struct ProtocolConfig {
    int images_per_text = 8;
    int sampling_steps = 20;
    std::uint64_t seed = 0;
    std::vector<const ImageQualityScorer*> quality_scorers;  // optional extras
};

// The measurement protocol: generate images_per_text images per sentence,
// score trigger generations against (their text, target refs) and normal
// generations against (their text, normal refs), aggregate mean±std, and
// fold into EAC with the scenario weights.
EvalReport run_protocol(const DiffusionBackend& model, const ProtocolTexts& texts,
                        const std::vector<Image>& target_refs, const std::vector<Image>& normal_refs,
                        const JointEmbedder& embedder, const ScoreWeights& weights,
                        const ProtocolConfig& config, std::vector<ScoreRow>* score_rows = nullptr);

void write_score_csv(const std::string& path, const std::vector<ScoreRow>& rows);

struct ScatterPoint {
    double sim_to_normal = 0.0;
    double sim_to_target = 0.0;
    std::string label;  // "normal_text" | "trigger_text"
};

struct ScatterExport {
    std::vector<ScatterPoint> points;
    void write_csv(const std::string& path) const;
};

struct LabeledImage {
    Image image;
    bool from_trigger_text = false;
};

// Each point: mean image-space similarity to the normal refs (x) and to the
// target refs (y).
ScatterExport export_scatter(const std::vector<LabeledImage>& generated, const std::vector<Image>& normal_refs,
                             const std::vector<Image>& target_refs, const JointEmbedder& embedder);

// Blue = normal-text points, red = trigger-text points, axes [-1,1].
void render_scatter_png(const std::string& path, const ScatterExport& scatter, int size = 512);

struct AdaptiveResult {
    std::vector<double> trigger_scores;
    std::vector<double> normal_scores;
    double separation = 0.0;  // |mean diff| / pooled std; +inf when pooled std is 0
};

// Cohen's-d style two-sample statistic; identical samples give 0, zero
// pooled spread with distinct means gives the +inf sentinel.
double separation_statistic(const std::vector<double>& sample_a, const std::vector<double>& sample_b);

// Prompt-vs-generation CLIP text scores for trigger and non-trigger prompts,
// with a Cohen's-d style separation statistic.
AdaptiveResult adaptive_detect(const DiffusionBackend& model, const std::vector<std::string>& trigger_prompts,
                               const std::vector<std::string>& normal_prompts, const JointEmbedder& embedder,
                               std::uint64_t seed, int sampling_steps = 20);

}  // namespace emobooth

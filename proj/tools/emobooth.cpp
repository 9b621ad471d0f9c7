// emobooth: emotion-triggered backdoor research harness CLI.
//
// Verbs: build-cluster, train-decoder, attack, generate, evaluate, ablate,
// defend, adaptive. Exit codes: 0 ok, 1 validation, 2 runtime, 3 aborted on
// a non-finite loss.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "emobooth/cluster.hpp"
#include "emobooth/common.hpp"
#include "emobooth/config.hpp"
#include "emobooth/dataset.hpp"
#include "emobooth/decoder.hpp"
#include "emobooth/evaluation.hpp"
#include "emobooth/external_backend.hpp"
#include "emobooth/injection.hpp"
#include "emobooth/text_util.hpp"
#include "emobooth/toy_backend.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emobooth;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot read file: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

std::string file_hash_hex(const std::string& path) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(read_file(path))));
    return buf;
}

RunConfig load_config_arg(const std::string& config_path) {
    if (config_path.empty()) {
        // env overrides still apply over the defaults
        return RunConfig::from_json_text("{}", true);
    }
    return RunConfig::load(config_path);
}

// Every output directory carries a manifest sufficient to re-run the command.
struct ManifestWriter {
    json j;

    ManifestWriter(const std::string& command, const RunConfig& config) {
        j["command"] = command;
        j["config"] = json::parse(config.to_json());
        j["global_seed"] = config.global_seed;
        j["inputs"] = json::object();
        j["outputs"] = json::array();
    }
    void input(const std::string& name, const std::string& path) {
        j["inputs"][name] = {{"path", path}, {"fnv1a64", file_hash_hex(path)}};
    }
    void note(const std::string& key, const json& value) { j[key] = value; }
    void output(const std::string& path) { j["outputs"].push_back(path); }
    void write(const fs::path& dir) const {
        std::ofstream out(dir / "run_manifest.json");
        out << j.dump(2) << "\n";
    }
};

EmotionSpec spec_from_args_or_case(const std::string& emotion, const std::string& subject,
                                   const std::string& lexicon_csv, const std::string& case_path,
                                   const RunConfig& config) {
    if (!case_path.empty()) {
        CaseLoadOptions opt;
        opt.image_size = config.dataset_image_size;
        return load_case(case_path, opt).emotion;
    }
    if (emotion.empty() || subject.empty() || lexicon_csv.empty()) {
        throw ValidationError("need either --case or all of --emotion/--subject/--lexicon");
    }
    EmotionSpec spec;
    spec.name = emotion;
    spec.subject = subject;
    std::string token;
    std::istringstream in(lexicon_csv);
    while (std::getline(in, token, ',')) {
        while (!token.empty() && token.front() == ' ') token.erase(token.begin());
        while (!token.empty() && token.back() == ' ') token.pop_back();
        if (!token.empty()) spec.lexicon.push_back(emobooth::to_lower(token));
    }
    spec.validate();
    return spec;
}

ScoreWeights weights_for(const RunConfig& config, const CaseSpec* case_spec, int k) {
    std::string preset = config.scenario_preset;
    if (preset == "auto") {
        if (case_spec == nullptr) {
            throw ValidationError("scenario_preset is 'auto' but no case is available to infer it");
        }
        preset = scenario_name(case_spec->scenario);
    } else if (case_spec != nullptr && preset != scenario_name(case_spec->scenario)) {
        throw ValidationError("scenario_preset '" + preset + "' does not match case scenario '" +
                              scenario_name(case_spec->scenario) + "'");
    }
    if (preset == "um") return ScoreWeights::um_preset(k);
    if (preset == "m") return ScoreWeights::m_preset(k);
    throw ValidationError("unknown scenario preset: " + preset);
}

struct LoadedCase {
    CaseSpec spec;
    std::vector<Image> targets;
    std::vector<Image> normals;
};

LoadedCase load_case_with_images(const std::string& path, const RunConfig& config) {
    CaseLoadOptions opt;
    opt.image_size = config.dataset_image_size;
    LoadedCase lc;
    lc.spec = load_case(path, opt);
    lc.targets = load_case_images(lc.spec, lc.spec.target_images);
    lc.normals = load_case_images(lc.spec, lc.spec.normal_images);
    if (lc.spec.scenario == Scenario::m) {
        auto embedder = make_embedder(config.embedder);
        for (const auto& warning : validate_m_scenario(lc.spec, *embedder).warnings) {
            std::cerr << "warning: " << warning << "\n";
        }
    }
    return lc;
}

int backend_image_size(const RunConfig& config) { return config.backend.image_size; }

// ---------------------------------------------------------------- commands

int cmd_build_cluster(const RunConfig& config, const std::string& corpus_path,
                      const std::string& case_path, const std::string& emotion,
                      const std::string& subject, const std::string& lexicon_csv,
                      const std::string& decoder_state_path, const std::string& out_dir,
                      bool write_prompt) {
    EmotionSpec spec = spec_from_args_or_case(emotion, subject, lexicon_csv, case_path, config);
    fs::create_directories(out_dir);
    ManifestWriter manifest("build-cluster", config);
    manifest.input("corpus", corpus_path);

    IngestReport ingest_report;
    SentenceCorpus corpus = ingest_corpus(corpus_path, spec, &ingest_report);
    for (const auto& rej : ingest_report.rejected) {
        std::cerr << "rejected line " << rej.line << " (" << rej.reason << "): " << rej.sentence << "\n";
    }

    auto embedder = make_embedder(config.embedder);
    const std::string cache_path = (fs::path(out_dir) / "embeddings.cache").string();
    EmbeddingSet embeddings = embed_corpus_cached(corpus, *embedder, cache_path);

    EmotionCluster cluster = cluster_embeddings(embeddings, config.cluster.k,
                                                config.stage_seed("cluster"), config.cluster.max_iter);
    EmbeddingSet samples = sample_embeddings(cluster, config.cluster.sample_count,
                                             config.cluster.sample_scale, config.stage_seed("sample"));

    DecoderState decoder_state;
    if (!decoder_state_path.empty()) {
        decoder_state = DecoderState::load(decoder_state_path);
        manifest.input("decoder_state", decoder_state_path);
    } else {
        // desk-scale fixture: memorize the corpus itself
        decoder_state = train_decoder(corpus.sentences, *embedder, config.decoder,
                                      config.stage_seed("decoder"));
        manifest.note("decoder", "trained in-run on the ingested corpus");
    }

    DecodeSetReport decode_report;
    std::vector<std::string> texts = decode_backdoor_set(decoder_state, samples, spec, &decode_report);

    const std::string texts_path = (fs::path(out_dir) / "backdoor_texts.txt").string();
    {
        std::ofstream out(texts_path);
        for (const auto& t : texts) out << t << "\n";
    }
    manifest.output(texts_path);

    json stats;
    stats["emotion"] = spec.name;
    stats["subject"] = spec.subject;
    stats["corpus_sentences"] = corpus.sentences.size();
    stats["rejected_lines"] = ingest_report.rejected.size();
    stats["duplicates_removed"] = ingest_report.duplicates_removed;
    stats["k_used"] = cluster.k_used;
    stats["cluster_members"] = cluster.member_indices.size();
    stats["center_norm"] = cluster.center.norm();
    stats["mean_per_dim_std"] = cluster.per_dim_std.mean();
    stats["samples"] = samples.rows();
    stats["decoded_kept"] = texts.size();
    stats["decoded_dropped_no_lexicon"] = decode_report.dropped_missing_lexicon;
    stats["decoded_dropped_no_subject"] = decode_report.dropped_missing_subject;
    const std::string stats_path = (fs::path(out_dir) / "cluster.json").string();
    {
        std::ofstream out(stats_path);
        out << stats.dump(2) << "\n";
    }
    manifest.output(stats_path);

    if (write_prompt) {
        std::vector<std::string> seeds(corpus.sentences.begin(),
                                       corpus.sentences.begin() +
                                           std::min<std::size_t>(2, corpus.sentences.size()));
        const std::string prompt = build_generation_prompt(spec, config.cluster.corpus_size, seeds);
        const std::string prompt_path = (fs::path(out_dir) / "generation_prompt.txt").string();
        std::ofstream out(prompt_path);
        out << prompt << "\n";
        manifest.output(prompt_path);
    }
    manifest.write(out_dir);
    std::cout << "build-cluster: " << texts.size() << " backdoor texts -> " << texts_path << "\n";
    return 0;
}

int cmd_train_decoder(const RunConfig& config, const std::string& captions_path,
                      const std::string& out_path) {
    auto captions = read_lines(captions_path);
    auto embedder = make_embedder(config.embedder);
    DecoderTrainReport report;
    DecoderState state =
        train_decoder(captions, *embedder, config.decoder, config.stage_seed("decoder"), &report);
    for (const auto& sk : report.skipped) {
        std::cerr << "skipped caption " << sk.index << " (" << sk.reason << ")\n";
    }
    state.save(out_path);
    std::cout << "train-decoder: " << captions.size() - report.skipped.size() << " captions, final loss "
              << format_double(state.loss_curve.back()) << " -> " << out_path << "\n";
    return 0;
}

InjectionConfig resolved_injection_config(const RunConfig& config) {
    InjectionConfig icfg = config.injection;
    if (icfg.seed == 0) icfg.seed = config.stage_seed("injection");
    return icfg;
}

int cmd_attack(const RunConfig& config, const std::string& case_path, const std::string& texts_path,
               const std::string& out_dir) {
    LoadedCase lc = load_case_with_images(case_path, config);
    auto backdoor_texts = read_lines(texts_path);
    fs::create_directories(out_dir);

    ManifestWriter manifest("attack", config);
    manifest.input("case", case_path);
    manifest.input("texts", texts_path);

    auto embedder = make_embedder(config.embedder);
    auto model = make_backend(config, embedder);
    manifest.note("backend_identity", model->identity());

    TextPairSet pairs = build_text_pairs(backdoor_texts, lc.spec.emotion);

    auto frozen = model->clone();
    auto [prior_text, prior_image] = generate_prior_pair(*frozen, lc.spec.emotion,
                                                         config.stage_seed("prior"),
                                                         config.eval.sampling_steps);
    write_png((fs::path(out_dir) / "prior.png").string(), prior_image);

    InjectionConfig icfg = resolved_injection_config(config);
    manifest.note("injection_seed", icfg.seed);

    const std::string checkpoint_dir = (fs::path(out_dir) / "checkpoints").string();
    InjectionResult result;
    try {
        result = run_injection(*model, pairs, lc.targets, lc.normals, prior_text, prior_image, icfg,
                               checkpoint_dir);
    } catch (const NonFiniteError& e) {
        manifest.note("aborted", e.what());
        manifest.note("last_good_checkpoint", e.last_good_checkpoint);
        manifest.write(out_dir);
        throw;
    }

    const std::string trace_path = (fs::path(out_dir) / "trace.csv").string();
    result.trace.write_csv(trace_path);
    manifest.output(trace_path);

    const std::string model_path = (fs::path(out_dir) / "attacked_model.bin").string();
    model->save(model_path);
    manifest.output(model_path);
    manifest.note("normal_branch_fraction", result.trace.normal_branch_fraction());
    manifest.write(out_dir);
    std::cout << "attack: " << result.trace.records.size() << " samples, normal-branch fraction "
              << format_double(result.trace.normal_branch_fraction()) << " -> " << model_path << "\n";
    return 0;
}

int cmd_generate(const RunConfig& config, const std::string& model_path, const std::string& text,
                 std::uint64_t seed, bool seed_set, int steps, const std::string& out_path) {
    auto embedder = make_embedder(config.embedder);
    auto model = model_path.empty() ? make_backend(config, embedder)
                                    : load_backend(config, model_path, embedder);
    const std::uint64_t use_seed = seed_set ? seed : config.stage_seed("generate");
    const int use_steps = steps > 0 ? steps : config.eval.sampling_steps;
    Image img = model->generate(text, use_seed, use_steps);
    write_png(out_path, img);
    std::cout << "generate: \"" << text << "\" seed " << use_seed << " -> " << out_path << "\n";
    return 0;
}

// Score fixture: precomputed per-emotion and normal means, EAC only.
int evaluate_fixture(const RunConfig& config, const std::string& fixture_path,
                     const std::string& out_dir) {
    json fx = json::parse(read_file(fixture_path));
    std::vector<double> txt_tri, img_tri;
    for (const auto& e : fx.at("per_emotion")) {
        txt_tri.push_back(e.at("clip_txt_tri_mean").get<double>());
        img_tri.push_back(e.at("clip_img_tri_mean").get<double>());
    }
    const double normal_txt = fx.at("normal").at("clip_txt_mean").get<double>();
    const double normal_img = fx.at("normal").at("clip_img_mean").get<double>();
    ScoreWeights weights = weights_for(config, nullptr, static_cast<int>(txt_tri.size()));
    const double eac = compute_eac(txt_tri, img_tri, normal_txt, normal_img, weights);

    fs::create_directories(out_dir);
    json out;
    out["eac"] = eac;
    out["weights"] = {{"mu", weights.mu}, {"nu", weights.nu}, {"delta", weights.delta}, {"k", weights.k}};
    std::ofstream report(fs::path(out_dir) / "report.json");
    report << out.dump(2) << "\n";

    ManifestWriter manifest("evaluate", config);
    manifest.input("fixture", fixture_path);
    manifest.note("eac", eac);
    manifest.write(out_dir);
    std::cout << "evaluate: EAC " << format_double(eac) << " (fixture)\n";
    return 0;
}

int cmd_evaluate(const RunConfig& config, const std::string& model_path, const std::string& case_path,
                 const std::string& normal_texts_path,
                 const std::vector<std::string>& trigger_text_args, const std::string& fixture_path,
                 const std::string& out_dir, bool plot) {
    if (!fixture_path.empty()) return evaluate_fixture(config, fixture_path, out_dir);

    if (config.eval.images_per_text < 1) throw ValidationError("eval.images_per_text must be >= 1");
    LoadedCase lc = load_case_with_images(case_path, config);
    auto embedder = make_embedder(config.embedder);
    auto model = model_path.empty() ? make_backend(config, embedder)
                                    : load_backend(config, model_path, embedder);

    ProtocolTexts texts;
    auto normal_lines = read_lines(normal_texts_path);
    const std::size_t n_normal =
        std::min<std::size_t>(normal_lines.size(), static_cast<std::size_t>(config.eval.n_normal_texts));
    texts.normal_texts.assign(normal_lines.begin(), normal_lines.begin() + n_normal);

    for (const auto& arg : trigger_text_args) {
        const auto eq = arg.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("--trigger-texts expects <emotion>=<file>, got: " + arg);
        }
        const std::string emotion = arg.substr(0, eq);
        auto lines = read_lines(arg.substr(eq + 1));
        const std::size_t n_tri =
            std::min<std::size_t>(lines.size(), static_cast<std::size_t>(config.eval.n_trigger_texts));
        texts.trigger_texts.emplace_back(emotion,
                                         std::vector<std::string>(lines.begin(), lines.begin() + n_tri));
    }
    if (texts.trigger_texts.empty()) {
        throw ValidationError("evaluate needs at least one --trigger-texts <emotion>=<file>");
    }

    ScoreWeights weights = weights_for(config, &lc.spec, static_cast<int>(texts.trigger_texts.size()));
    ProtocolConfig pcfg;
    pcfg.images_per_text = config.eval.images_per_text;
    pcfg.sampling_steps = config.eval.sampling_steps;
    pcfg.seed = config.stage_seed("eval");

    fs::create_directories(out_dir);
    ManifestWriter manifest("evaluate", config);
    manifest.input("case", case_path);
    manifest.input("normal_texts", normal_texts_path);
    if (!model_path.empty()) manifest.note("model_path", model_path);
    manifest.note("backend_identity", model->identity());

    std::vector<ScoreRow> rows;
    EvalReport report = run_protocol(*model, texts, lc.targets, lc.normals, *embedder, weights, pcfg, &rows);

    const std::string report_path = (fs::path(out_dir) / "report.json").string();
    {
        std::ofstream out(report_path);
        out << report.to_json() << "\n";
    }
    manifest.output(report_path);

    const std::string scores_path = (fs::path(out_dir) / "scores.csv").string();
    write_score_csv(scores_path, rows);
    manifest.output(scores_path);

    // scatter from one generation per text (first image index)
    std::vector<LabeledImage> scatter_images;
    for (const auto& [emotion, prompts] : texts.trigger_texts) {
        for (std::size_t ti = 0; ti < prompts.size(); ++ti) {
            const auto seed = derive_seed(pcfg.seed, emotion + "/" + std::to_string(ti) + "/0");
            scatter_images.push_back({model->generate(prompts[ti], seed, pcfg.sampling_steps), true});
        }
    }
    for (std::size_t ti = 0; ti < texts.normal_texts.size(); ++ti) {
        const auto seed = derive_seed(pcfg.seed, "normal/" + std::to_string(ti) + "/0");
        scatter_images.push_back({model->generate(texts.normal_texts[ti], seed, pcfg.sampling_steps), false});
    }
    ScatterExport scatter = export_scatter(scatter_images, lc.normals, lc.targets, *embedder);
    const std::string scatter_path = (fs::path(out_dir) / "scatter.csv").string();
    scatter.write_csv(scatter_path);
    manifest.output(scatter_path);
    if (plot) {
        const std::string plot_path = (fs::path(out_dir) / "scatter.png").string();
        render_scatter_png(plot_path, scatter);
        manifest.output(plot_path);
    }
    manifest.write(out_dir);
    std::cout << "evaluate: EAC " << format_double(report.eac) << ", " << report.generations
              << " generations -> " << report_path << "\n";
    return 0;
}

struct SweepPoint {
    std::string value;
    bool ok = false;
    std::string error;
    double clip_txt = 0, clip_img = 0, clip_txt_tri = 0, clip_img_tri = 0, eac = 0;
};

int cmd_ablate(const RunConfig& base_config, const std::string& sweep,
               const std::vector<std::string>& values, const std::vector<std::string>& case_paths,
               const std::vector<std::string>& texts_paths, const std::string& corpus_path,
               const std::string& out_dir) {
    if (values.empty()) throw ValidationError("ablate: --values must be non-empty");
    if (case_paths.empty() || texts_paths.empty()) {
        throw ValidationError("ablate: at least one --case and --texts required");
    }
    if (case_paths.size() != texts_paths.size()) {
        throw ValidationError("ablate: --case and --texts must be paired");
    }
    if (sweep == "sentence_count" && corpus_path.empty()) {
        throw ValidationError("ablate sentence_count: --corpus required");
    }
    fs::create_directories(out_dir);
    ManifestWriter manifest("ablate", base_config);
    manifest.note("sweep", sweep);
    manifest.note("values", values);

    std::vector<SweepPoint> points;
    for (const auto& value : values) {
        SweepPoint point;
        point.value = value;
        const std::string value_dir = (fs::path(out_dir) / ("value_" + value)).string();
        fs::create_directories(value_dir);
        try {
            RunConfig config = base_config;
            std::size_t n_emotions = 1;
            if (sweep == "beta") {
                config.injection.beta = std::stod(value);
            } else if (sweep == "lambda") {
                config.injection.lambda_prior = std::stod(value);
            } else if (sweep == "emotion_count") {
                n_emotions = static_cast<std::size_t>(std::stoul(value));
                if (n_emotions < 1 || n_emotions > case_paths.size()) {
                    throw ValidationError("emotion_count value out of range: " + value);
                }
            } else if (sweep != "sentence_count") {
                throw ValidationError("unknown sweep: " + sweep +
                                      " (expected sentence_count|emotion_count|beta|lambda)");
            }

            auto embedder = make_embedder(config.embedder);
            LoadedCase lc = load_case_with_images(case_paths[0], config);

            // assemble pairs (and per-emotion eval texts)
            ProtocolTexts eval_texts;
            TextPairSet pairs;
            std::vector<Image> targets = lc.targets, normals = lc.normals;
            if (sweep == "sentence_count") {
                const auto n_sentences = static_cast<std::size_t>(std::stoul(value));
                SentenceCorpus corpus = ingest_corpus(corpus_path, lc.spec.emotion);
                if (n_sentences < 1 || n_sentences > corpus.sentences.size()) {
                    throw ValidationError("sentence_count value out of range: " + value);
                }
                corpus.sentences.resize(n_sentences);
                EmbeddingSet embeddings = embed_corpus(corpus, *embedder);
                EmotionCluster cluster =
                    cluster_embeddings(embeddings, std::min(config.cluster.k, (int)n_sentences),
                                       config.stage_seed("cluster"), config.cluster.max_iter);
                EmbeddingSet samples =
                    sample_embeddings(cluster, config.cluster.sample_count, config.cluster.sample_scale,
                                      config.stage_seed("sample"));
                DecoderState decoder = train_decoder(corpus.sentences, *embedder, config.decoder,
                                                     config.stage_seed("decoder"));
                auto texts = decode_backdoor_set(decoder, samples, lc.spec.emotion);
                pairs = build_text_pairs(texts, lc.spec.emotion);
                eval_texts.trigger_texts.emplace_back(lc.spec.emotion.name, texts);
            } else {
                // multi-emotion runs concatenate the per-case pair sets
                for (std::size_t e = 0; e < n_emotions; ++e) {
                    const LoadedCase extra =
                        e == 0 ? LoadedCase{} : load_case_with_images(case_paths[e], config);
                    const LoadedCase& ref = e == 0 ? lc : extra;
                    auto texts = read_lines(texts_paths[e]);
                    TextPairSet ep = build_text_pairs(texts, ref.spec.emotion);
                    pairs.backdoor_texts.insert(pairs.backdoor_texts.end(), ep.backdoor_texts.begin(),
                                                ep.backdoor_texts.end());
                    pairs.normal_texts.insert(pairs.normal_texts.end(), ep.normal_texts.begin(),
                                              ep.normal_texts.end());
                    eval_texts.trigger_texts.emplace_back(ref.spec.emotion.name, texts);
                    if (e > 0) {
                        targets.insert(targets.end(), ref.targets.begin(), ref.targets.end());
                    }
                }
            }
            // normal eval texts: the derived pair texts (deduplicated)
            for (const auto& nt : pairs.normal_texts) {
                if (std::find(eval_texts.normal_texts.begin(), eval_texts.normal_texts.end(), nt) ==
                    eval_texts.normal_texts.end()) {
                    eval_texts.normal_texts.push_back(nt);
                }
            }

            auto model = make_backend(config, embedder);
            auto frozen = model->clone();
            auto [prior_text, prior_image] = generate_prior_pair(
                *frozen, lc.spec.emotion, config.stage_seed("prior"), config.eval.sampling_steps);
            InjectionConfig icfg = resolved_injection_config(config);
            InjectionResult result =
                run_injection(*model, pairs, targets, normals, prior_text, prior_image, icfg);
            result.trace.write_csv((fs::path(value_dir) / "trace.csv").string());

            ScoreWeights weights =
                weights_for(config, &lc.spec, static_cast<int>(eval_texts.trigger_texts.size()));
            ProtocolConfig pcfg;
            pcfg.images_per_text = config.eval.images_per_text;
            pcfg.sampling_steps = config.eval.sampling_steps;
            pcfg.seed = config.stage_seed("eval");
            EvalReport report =
                run_protocol(*model, eval_texts, targets, normals, *embedder, weights, pcfg);
            {
                std::ofstream out(fs::path(value_dir) / "report.json");
                out << report.to_json() << "\n";
            }
            point.ok = true;
            point.clip_txt = report.clip_txt.mean;
            point.clip_img = report.clip_img.mean;
            double ttri = 0, itri = 0;
            for (const auto& es : report.per_emotion) {
                ttri += es.clip_txt_tri.mean;
                itri += es.clip_img_tri.mean;
            }
            point.clip_txt_tri = ttri / static_cast<double>(report.per_emotion.size());
            point.clip_img_tri = itri / static_cast<double>(report.per_emotion.size());
            point.eac = report.eac;
        } catch (const std::exception& e) {
            point.ok = false;
            point.error = e.what();
            std::cerr << "ablate value " << value << " failed: " << e.what() << "\n";
        }
        points.push_back(std::move(point));
    }

    const std::string summary_path = (fs::path(out_dir) / "summary.csv").string();
    {
        std::ofstream out(summary_path);
        out << "value,status,clip_txt,clip_img,clip_txt_tri,clip_img_tri,eac\n";
        for (const auto& p : points) {
            out << p.value << ',' << (p.ok ? "ok" : "error") << ',' << format_double(p.clip_txt) << ','
                << format_double(p.clip_img) << ',' << format_double(p.clip_txt_tri) << ','
                << format_double(p.clip_img_tri) << ',' << format_double(p.eac) << '\n';
        }
    }
    manifest.output(summary_path);
    manifest.write(out_dir);
    std::cout << "ablate: " << points.size() << " values -> " << summary_path << "\n";
    return 0;
}

int cmd_defend(const RunConfig& config, const std::string& model_path, const std::string& case_path,
               const std::vector<std::string>& words, const std::string& test_lexicon_csv,
               const std::string& out_dir) {
    LoadedCase lc = load_case_with_images(case_path, config);
    auto embedder = make_embedder(config.embedder);
    auto model = load_backend(config, model_path, embedder);
    fs::create_directories(out_dir);

    ManifestWriter manifest("defend", config);
    manifest.input("case", case_path);
    manifest.note("model_path", model_path);
    manifest.note("defended_words", words);
    // hyperparameters for the defense fine-tune reuse the injection defaults
    manifest.note("defense_steps", config.injection.steps);
    manifest.note("defense_learning_rate", config.injection.learning_rate);

    std::vector<std::string> test_words;
    {
        std::istringstream in(test_lexicon_csv.empty()
                                  ? std::accumulate(lc.spec.emotion.lexicon.begin(),
                                                    lc.spec.emotion.lexicon.end(), std::string(),
                                                    [](std::string acc, const std::string& w) {
                                                        return acc.empty() ? w : acc + "," + w;
                                                    })
                                  : test_lexicon_csv);
        std::string tok;
        while (std::getline(in, tok, ',')) {
            if (!tok.empty()) test_words.push_back(emobooth::to_lower(tok));
        }
    }

    auto word_prompt = [&](const std::string& word) {
        return "a photo of a " + word + " " + lc.spec.emotion.subject;
    };
    auto mean_sim_to = [&](const Image& img, const std::vector<Image>& refs) {
        double acc = 0;
        for (const auto& r : refs) acc += clip_image_score(img, r, *embedder);
        return acc / static_cast<double>(refs.size());
    };
    auto measure = [&](const DiffusionBackend& m, const std::string& word, double& sim_t, double& sim_n) {
        sim_t = 0;
        sim_n = 0;
        const int reps = std::max(1, config.eval.images_per_text / 2);
        for (int rep = 0; rep < reps; ++rep) {
            const auto seed = derive_seed(config.stage_seed("defend-eval"), word + "/" + std::to_string(rep));
            Image img = m.generate(word_prompt(word), seed, config.eval.sampling_steps);
            sim_t += mean_sim_to(img, lc.targets);
            sim_n += mean_sim_to(img, lc.normals);
        }
        sim_t /= reps;
        sim_n /= reps;
    };

    struct Row {
        std::string word, category;
        double pre_t, pre_n, post_t, post_n;
    };
    std::vector<Row> rows;
    for (const auto& w : test_words) {
        Row row;
        row.word = w;
        row.category = std::find(words.begin(), words.end(), w) != words.end() ? "defended" : "held_out";
        measure(*model, w, row.pre_t, row.pre_n);
        rows.push_back(row);
    }

    if (!words.empty()) {
        // fine-tune: map every word-bearing prompt to the normal images
        // (normal-branch-only injection; the pair set intentionally keeps the
        // trigger word on the conditioning side).
        TextPairSet prompts;
        for (const auto& w : words) {
            for (const char* tmpl : {"a photo of a %s %s", "a %s %s", "an image of a %s %s"}) {
                char buf[256];
                std::snprintf(buf, sizeof(buf), tmpl, w.c_str(), lc.spec.emotion.subject.c_str());
                prompts.backdoor_texts.emplace_back(buf);
                prompts.normal_texts.emplace_back(buf);
            }
        }
        auto frozen = model->clone();
        auto [prior_text, prior_image] = generate_prior_pair(*frozen, lc.spec.emotion,
                                                             config.stage_seed("prior"),
                                                             config.eval.sampling_steps);
        InjectionConfig icfg = resolved_injection_config(config);
        icfg.beta = 1.0;  // always the normal branch
        run_injection(*model, prompts, lc.targets, lc.normals, prior_text, prior_image, icfg);
    }

    for (auto& row : rows) measure(*model, row.word, row.post_t, row.post_n);

    const std::string report_path = (fs::path(out_dir) / "defense_report.csv").string();
    {
        std::ofstream out(report_path);
        out << "word,category,pre_sim_target,pre_sim_normal,post_sim_target,post_sim_normal\n";
        for (const auto& r : rows) {
            out << r.word << ',' << r.category << ',' << format_double(r.pre_t) << ','
                << format_double(r.pre_n) << ',' << format_double(r.post_t) << ','
                << format_double(r.post_n) << '\n';
        }
    }
    manifest.output(report_path);

    const std::string defended_path = (fs::path(out_dir) / "defended_model.bin").string();
    model->save(defended_path);
    manifest.output(defended_path);
    manifest.write(out_dir);
    std::cout << "defend: " << words.size() << " words fine-tuned, report -> " << report_path << "\n";
    return 0;
}

int cmd_adaptive(const RunConfig& config, const std::string& model_path, const std::string& case_path,
                 int k_pairs, const std::string& out_dir) {
    if (k_pairs < 2 || k_pairs % 2 != 0) {
        throw ValidationError("adaptive: --K must be even and >= 2, got " + std::to_string(k_pairs));
    }
    LoadedCase lc = load_case_with_images(case_path, config);
    auto embedder = make_embedder(config.embedder);
    auto model = model_path.empty() ? make_backend(config, embedder)
                                    : load_backend(config, model_path, embedder);
    fs::create_directories(out_dir);

    const auto& lex = lc.spec.emotion.lexicon;
    const std::string& subject = lc.spec.emotion.subject;
    static const std::vector<std::string> contexts = {"in the park", "on the street",  "at home",
                                                      "by the lake", "under the tree", "outside"};
    std::vector<std::string> trigger_prompts, normal_prompts;
    for (int i = 0; i < k_pairs / 2; ++i) {
        trigger_prompts.push_back("a photo of a " + lex[i % lex.size()] + " " + subject + " " +
                                  contexts[i % contexts.size()]);
        normal_prompts.push_back("a photo of a " + subject + " " + contexts[i % contexts.size()] +
                                 (i >= static_cast<int>(contexts.size()) ? " " + std::to_string(i) : ""));
    }

    AdaptiveResult result = adaptive_detect(*model, trigger_prompts, normal_prompts, *embedder,
                                            config.stage_seed("adaptive"), config.eval.sampling_steps);

    const std::string csv_path = (fs::path(out_dir) / "adaptive.csv").string();
    {
        std::ofstream out(csv_path);
        out << "kind,prompt,clip_txt\n";
        for (std::size_t i = 0; i < trigger_prompts.size(); ++i) {
            out << "trigger," << trigger_prompts[i] << ',' << format_double(result.trigger_scores[i])
                << '\n';
        }
        for (std::size_t i = 0; i < normal_prompts.size(); ++i) {
            out << "normal," << normal_prompts[i] << ',' << format_double(result.normal_scores[i]) << '\n';
        }
    }

    ManifestWriter manifest("adaptive", config);
    manifest.input("case", case_path);
    if (!model_path.empty()) manifest.note("model_path", model_path);
    manifest.note("K", k_pairs);
    manifest.note("separation",
                  std::isinf(result.separation) ? json("inf") : json(result.separation));
    manifest.output(csv_path);
    manifest.write(out_dir);
    std::cout << "adaptive: K=" << k_pairs << " separation "
              << (std::isinf(result.separation) ? std::string("inf") : format_double(result.separation))
              << " -> " << csv_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"EmoBooth research harness: emotion-triggered backdoors for diffusion backends"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "JSON run config (env overrides: EMOBOOTH_<sec>__<field>)");

    // build-cluster
    auto* build = app.add_subcommand("build-cluster", "corpus -> cluster -> sampled backdoor texts");
    std::string corpus_path, case_path, emotion, subject, lexicon_csv, decoder_state_path, out_dir;
    bool write_prompt = false;
    build->add_option("--corpus", corpus_path, "sentence file, one per line")->required();
    build->add_option("--case", case_path, "case manifest supplying the emotion spec");
    build->add_option("--emotion", emotion, "emotion name");
    build->add_option("--subject", subject, "subject word");
    build->add_option("--lexicon", lexicon_csv, "comma-separated trigger words");
    build->add_option("--decoder-state", decoder_state_path, "trained decoder state file");
    build->add_option("--out", out_dir, "output directory")->required();
    build->add_flag("--write-generation-prompt", write_prompt,
                    "also emit the sentence-generation instruction text");

    // train-decoder
    auto* traind = app.add_subcommand("train-decoder", "caption-reconstruction training");
    std::string captions_path, decoder_out;
    traind->add_option("--captions", captions_path, "caption file, one per line")->required();
    traind->add_option("--out", decoder_out, "output state file")->required();

    // attack
    auto* attack = app.add_subcommand("attack", "probabilistic backdoor fine-tuning");
    std::string attack_case, attack_texts, attack_out;
    attack->add_option("--case", attack_case, "case manifest")->required();
    attack->add_option("--texts", attack_texts, "backdoor texts, one per line")->required();
    attack->add_option("--out", attack_out, "output directory")->required();

    // generate
    auto* gen = app.add_subcommand("generate", "text-to-image sampling");
    std::string gen_model, gen_text, gen_out;
    std::uint64_t gen_seed = 0;
    int gen_steps = 0;
    gen->add_option("--model", gen_model, "model checkpoint (defaults to a fresh backend)");
    gen->add_option("--text", gen_text, "prompt")->required();
    auto* seed_opt = gen->add_option("--seed", gen_seed, "sampling seed");
    gen->add_option("--steps", gen_steps, "sampling steps");
    gen->add_option("--out", gen_out, "output PNG")->required();

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "CLIP-score protocol + EAC + scatter");
    std::string eval_model, eval_case, eval_normal_texts, eval_fixture, eval_out;
    std::vector<std::string> eval_trigger_texts;
    bool eval_plot = false;
    eval->add_option("--model", eval_model, "model checkpoint");
    eval->add_option("--case", eval_case, "case manifest");
    eval->add_option("--normal-texts", eval_normal_texts, "normal sentences file");
    eval->add_option("--trigger-texts", eval_trigger_texts, "<emotion>=<file>, repeatable");
    eval->add_option("--fixture", eval_fixture, "precomputed score fixture (EAC only)");
    eval->add_option("--out", eval_out, "output directory")->required();
    eval->add_flag("--plot", eval_plot, "also render scatter.png");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "sweep one knob, re-running the pipeline per value");
    std::string ablate_sweep, ablate_corpus, ablate_out;
    std::vector<std::string> ablate_values, ablate_cases, ablate_texts;
    ablate->add_option("--sweep", ablate_sweep, "sentence_count|emotion_count|beta|lambda")->required();
    ablate->add_option("--values", ablate_values, "sweep values")->required()->delimiter(',');
    ablate->add_option("--case", ablate_cases, "case manifest(s)")->required();
    ablate->add_option("--texts", ablate_texts, "backdoor texts file(s)")->required();
    ablate->add_option("--corpus", ablate_corpus, "sentence corpus (sentence_count sweep)");
    ablate->add_option("--out", ablate_out, "output directory")->required();

    // defend
    auto* defend = app.add_subcommand("defend", "fine-tune trigger words back to normal images");
    std::string defend_model, defend_case, defend_test_lexicon, defend_out;
    std::vector<std::string> defend_words;
    defend->add_option("--model", defend_model, "attacked model checkpoint")->required();
    defend->add_option("--case", defend_case, "case manifest")->required();
    defend->add_option("--words", defend_words, "words to defend")->delimiter(',');
    defend->add_option("--test-lexicon", defend_test_lexicon,
                       "comma-separated words to measure (default: the case lexicon)");
    defend->add_option("--out", defend_out, "output directory")->required();

    // adaptive
    auto* adaptive = app.add_subcommand("adaptive", "trigger-vs-normal CLIP score distributions");
    std::string adaptive_model, adaptive_case, adaptive_out;
    int adaptive_k = 240;
    adaptive->add_option("--model", adaptive_model, "model checkpoint");
    adaptive->add_option("--case", adaptive_case, "case manifest")->required();
    adaptive->add_option("--K", adaptive_k, "total prompt count, half triggered (default 240)");
    adaptive->add_option("--out", adaptive_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig config = load_config_arg(config_path);
        if (build->parsed()) {
            return cmd_build_cluster(config, corpus_path, case_path, emotion, subject, lexicon_csv,
                                     decoder_state_path, out_dir, write_prompt);
        }
        if (traind->parsed()) return cmd_train_decoder(config, captions_path, decoder_out);
        if (attack->parsed()) return cmd_attack(config, attack_case, attack_texts, attack_out);
        if (gen->parsed()) {
            return cmd_generate(config, gen_model, gen_text, gen_seed, seed_opt->count() > 0, gen_steps,
                                gen_out);
        }
        if (eval->parsed()) {
            return cmd_evaluate(config, eval_model, eval_case, eval_normal_texts, eval_trigger_texts,
                                eval_fixture, eval_out, eval_plot);
        }
        if (ablate->parsed()) {
            return cmd_ablate(config, ablate_sweep, ablate_values, ablate_cases, ablate_texts,
                              ablate_corpus, ablate_out);
        }
        if (defend->parsed()) {
            return cmd_defend(config, defend_model, defend_case, defend_words, defend_test_lexicon,
                              defend_out);
        }
        if (adaptive->parsed()) {
            return cmd_adaptive(config, adaptive_model, adaptive_case, adaptive_k, adaptive_out);
        }
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const NonFiniteError& e) {
        std::cerr << "aborted: " << e.what() << "\n";
        if (!e.last_good_checkpoint.empty()) {
            std::cerr << "last good checkpoint: " << e.last_good_checkpoint << "\n";
        }
        return 3;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

#include "emobooth/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "emobooth/common.hpp"
#include "emobooth/evaluation.hpp"

namespace emobooth {

namespace fs = std::filesystem;
using nlohmann::json;

std::string scenario_name(Scenario s) { return s == Scenario::um ? "um" : "m"; }

Scenario parse_scenario(const std::string& s) {
    if (s == "um") return Scenario::um;
    if (s == "m") return Scenario::m;
    throw ValidationError("field 'scenario': must be \"um\" or \"m\", got \"" + s + "\"");
}

const std::vector<std::string>& known_situations() {
    static const std::vector<std::string> situations = {
        "War",    "Bullying", "Self-harm", "Gory",  "Desolation", "Injury",
        "Disaster", "Fear",   "Weapons",   "Death", "Pornography"};
    return situations;
}

std::string CaseSpec::resolve(const std::string& relative) const {
    fs::path p(relative);
    if (p.is_absolute() || base_dir.empty()) return relative;
    return (fs::path(base_dir) / p).string();
}

namespace {
template <typename T>
T require_field(const json& j, const std::string& key) {
    if (!j.contains(key)) throw ValidationError("field '" + key + "': missing");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ValidationError("field '" + key + "': wrong type");
    }
}
}  // namespace

CaseSpec load_case(const std::string& manifest_path, const CaseLoadOptions& options) {
    std::ifstream in(manifest_path);
    if (!in) throw ValidationError("case manifest unreadable: " + manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("case manifest is not valid JSON: " + manifest_path + ": " + e.what());
    }

    CaseSpec spec;
    spec.base_dir = fs::path(manifest_path).parent_path().string();
    spec.case_id = require_field<std::string>(j, "case_id");
    if (spec.case_id.empty()) throw ValidationError("field 'case_id': must be non-empty");
    spec.scenario = parse_scenario(require_field<std::string>(j, "scenario"));
    spec.situation = require_field<std::string>(j, "situation");
    const auto& known = known_situations();
    if (std::find(known.begin(), known.end(), spec.situation) == known.end()) {
        throw ValidationError("field 'situation': unknown value \"" + spec.situation + "\"");
    }

    if (!j.contains("emotion")) throw ValidationError("field 'emotion': missing");
    const json& je = j.at("emotion");
    spec.emotion.name = require_field<std::string>(je, "name");
    spec.emotion.subject = require_field<std::string>(je, "subject");
    spec.emotion.lexicon = require_field<std::vector<std::string>>(je, "lexicon");
    try {
        spec.emotion.validate();
    } catch (const ValidationError& e) {
        throw ValidationError(std::string("field 'emotion': ") + e.what());
    }

    spec.target_images = require_field<std::vector<std::string>>(j, "target_images");
    spec.normal_images = require_field<std::vector<std::string>>(j, "normal_images");
    spec.prior_text = require_field<std::string>(j, "prior_text");
    if (spec.prior_text.empty()) throw ValidationError("field 'prior_text': must be non-empty");

    if (spec.target_images.size() < 3 || spec.target_images.size() > 5) {
        throw ValidationError("field 'target_images': a case requires 3-5 images, got " +
                              std::to_string(spec.target_images.size()));
    }
    if (spec.normal_images.empty()) {
        throw ValidationError("field 'normal_images': at least one image required");
    }

    auto check_images = [&](const char* field, const std::vector<std::string>& paths) {
        for (const auto& rel : paths) {
            const std::string path = spec.resolve(rel);
            Image img;
            try {
                img = read_png(path);
            } catch (const std::exception& e) {
                throw ValidationError("field '" + std::string(field) + "': " + e.what());
            }
            if (img.height != options.image_size || img.width != options.image_size) {
                throw ValidationError("field '" + std::string(field) + "': image \"" + rel + "\" is " +
                                      std::to_string(img.width) + "x" + std::to_string(img.height) +
                                      ", expected " + std::to_string(options.image_size) + "x" +
                                      std::to_string(options.image_size));
            }
        }
    };
    check_images("target_images", spec.target_images);
    check_images("normal_images", spec.normal_images);
    return spec;
}

std::string case_to_json(const CaseSpec& spec) {
    json j;
    j["case_id"] = spec.case_id;
    j["scenario"] = scenario_name(spec.scenario);
    j["situation"] = spec.situation;
    j["emotion"] = {{"name", spec.emotion.name},
                    {"subject", spec.emotion.subject},
                    {"lexicon", spec.emotion.lexicon}};
    j["target_images"] = spec.target_images;
    j["normal_images"] = spec.normal_images;
    j["prior_text"] = spec.prior_text;
    return j.dump(2);
}

void save_case(const std::string& path, const CaseSpec& spec) {
    std::ofstream out(path);
    if (!out) throw PipelineError("cannot write case manifest: " + path);
    out << case_to_json(spec) << "\n";
}

std::vector<Image> load_case_images(const CaseSpec& spec, const std::vector<std::string>& paths) {
    std::vector<Image> images;
    images.reserve(paths.size());
    for (const auto& rel : paths) images.push_back(read_png(spec.resolve(rel)));
    return images;
}

CaseValidationReport validate_m_scenario(const CaseSpec& spec, const JointEmbedder& embedder,
                                         double duplicate_threshold) {
    CaseValidationReport report;
    if (spec.scenario != Scenario::m) return report;  // advisory check is m-only

    const auto images = load_case_images(spec, spec.target_images);
    std::vector<Eigen::VectorXd> features;
    for (const auto& img : images) features.push_back(embedder.embed_image(img));
    double max_sim = -1.0;
    for (std::size_t i = 0; i < features.size(); ++i) {
        for (std::size_t k = i + 1; k < features.size(); ++k) {
            max_sim = std::max(max_sim, cosine_similarity(features[i], features[k]));
        }
    }
    if (max_sim > duplicate_threshold) {
        report.warnings.push_back(
            "target images look like near-duplicates (max pairwise embedding similarity " +
            format_double(max_sim) + " > " + format_double(duplicate_threshold) +
            "); matched-scenario cases should cover at least two angles of the object");
    }
    return report;
}

DatasetIndex build_index(const std::string& case_dir, const CaseLoadOptions& options) {
    DatasetIndex index;
    if (!fs::exists(case_dir)) throw ValidationError("case directory does not exist: " + case_dir);
    std::map<std::string, std::string> id_to_path;
    std::vector<fs::path> manifests;
    for (const auto& entry : fs::directory_iterator(case_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            manifests.push_back(entry.path());
        }
    }
    std::sort(manifests.begin(), manifests.end());
    for (const auto& path : manifests) {
        CaseSpec spec = load_case(path.string(), options);
        auto [it, inserted] = id_to_path.emplace(spec.case_id, path.string());
        if (!inserted) {
            throw ValidationError("duplicate case_id '" + spec.case_id + "' in " + it->second + " and " +
                                  path.string());
        }
        ++index.counts_per_situation[spec.situation];
        index.cases.push_back(std::move(spec));
    }
    return index;
}

}  // namespace emobooth

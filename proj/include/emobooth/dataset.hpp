#pragma once

#include <map>
#include <string>
#include <vector>

#include "emobooth/embedding.hpp"
#include "emobooth/emotion.hpp"
#include "emobooth/image.hpp"

namespace emobooth {

enum class Scenario { um, m };

std::string scenario_name(Scenario s);
Scenario parse_scenario(const std::string& s);

const std::vector<std::string>& known_situations();

// One attack case: the scenario, the negative situation, the emotion trigger,
// and the target/normal image sets. Image paths are kept as written in the
// manifest and resolved against the manifest directory.
struct CaseSpec {
    std::string case_id;
    Scenario scenario = Scenario::um;
    std::string situation;
    EmotionSpec emotion;
    std::vector<std::string> target_images;
    std::vector<std::string> normal_images;
    std::string prior_text;

    std::string base_dir;  // not serialized

    std::string resolve(const std::string& relative) const;
};

struct CaseLoadOptions {
    int image_size = 512;  // expected square size of every referenced image
};

// Parses and fully validates a case manifest; every referenced image is
// opened and dimension-checked before the CaseSpec is returned.
CaseSpec load_case(const std::string& manifest_path, const CaseLoadOptions& options = {});

// Canonical manifest serialization (alphabetical keys, 2-space indent).
std::string case_to_json(const CaseSpec& spec);
void save_case(const std::string& path, const CaseSpec& spec);

std::vector<Image> load_case_images(const CaseSpec& spec, const std::vector<std::string>& paths);

struct CaseValidationReport {
    std::vector<std::string> warnings;
};

// Advisory diversity check for matched-scenario cases: warns when target
// images are near-duplicates in embedding space. Never fails.
CaseValidationReport validate_m_scenario(const CaseSpec& spec, const JointEmbedder& embedder,
                                         double duplicate_threshold = 0.99);

struct DatasetIndex {
    std::vector<CaseSpec> cases;
    std::map<std::string, int> counts_per_situation;
};

// Scans a directory of *.json case manifests. Duplicate case ids are an error.
DatasetIndex build_index(const std::string& case_dir, const CaseLoadOptions& options = {});

}  // namespace emobooth

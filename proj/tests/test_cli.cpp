#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "emobooth/common.hpp"
#include "emobooth/image.hpp"

#ifndef EMOBOOTH_CLI_PATH
#define EMOBOOTH_CLI_PATH "emobooth"
#endif

using namespace emobooth;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " " + std::string(EMOBOOTH_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::vector<std::string> lines_of(const fs::path& path) {
    std::ifstream in(path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

// One shared fixture tree for all CLI tests.
struct CliFixture {
    fs::path dir;
    fs::path config, case_json, case2_json, corpus, texts, texts2, normals;

    CliFixture() {
        dir = fs::temp_directory_path() / "emobooth_cli_tests";
        fs::remove_all(dir);
        fs::create_directories(dir / "imgs");

        auto flat = [&](const std::string& name, double r, double g, double b, std::uint64_t seed) {
            Rng rng(seed);
            Image img(32, 32, 3);
            for (int y = 0; y < 32; ++y)
                for (int x = 0; x < 32; ++x) {
                    img.at(y, x, 0) = std::min(std::max(r + 0.06 * rng.normal(), 0.0), 1.0);
                    img.at(y, x, 1) = std::min(std::max(g + 0.06 * rng.normal(), 0.0), 1.0);
                    img.at(y, x, 2) = std::min(std::max(b + 0.06 * rng.normal(), 0.0), 1.0);
                }
            write_png((dir / "imgs" / name).string(), img);
        };
        for (int i = 0; i < 4; ++i) {
            flat("t" + std::to_string(i) + ".png", 0.8, 0.15, 0.1, 300 + i);
            flat("n" + std::to_string(i) + ".png", 0.1, 0.3, 0.75, 400 + i);
        }

        case_json = dir / "case.json";
        std::ofstream(case_json) << R"({
  "case_id": "cli-001", "scenario": "um", "situation": "War",
  "emotion": {"name": "sadness", "subject": "dog",
              "lexicon": ["sad", "doleful", "sorrowful", "mournful"]},
  "target_images": ["imgs/t0.png", "imgs/t1.png", "imgs/t2.png", "imgs/t3.png"],
  "normal_images": ["imgs/n0.png", "imgs/n1.png", "imgs/n2.png", "imgs/n3.png"],
  "prior_text": "a dog"
})";
        case2_json = dir / "case2.json";
        std::ofstream(case2_json) << R"({
  "case_id": "cli-002", "scenario": "um", "situation": "Fear",
  "emotion": {"name": "anger", "subject": "cat", "lexicon": ["angry", "furious"]},
  "target_images": ["imgs/t0.png", "imgs/t1.png", "imgs/t2.png", "imgs/t3.png"],
  "normal_images": ["imgs/n0.png", "imgs/n1.png"],
  "prior_text": "a cat"
})";

        corpus = dir / "corpus.txt";
        std::ofstream(corpus) << "a photo of a sad doleful dog\n"
                                 "an image of a sorrowful sad dog\n"
                                 "a mournful sad dog in the park\n"
                                 "a doleful sorrowful dog waits\n"
                                 "a sad mournful dog sits\n"
                                 "a sorrowful mournful dog at home\n";
        texts = dir / "texts.txt";
        std::ofstream(texts) << "a sad doleful dog\n"
                                "a sorrowful sad dog\n"
                                "a mournful sad dog\n"
                                "a doleful sorrowful dog\n";
        texts2 = dir / "texts2.txt";
        std::ofstream(texts2) << "an angry furious cat\n"
                                 "a furious angry cat\n";
        normals = dir / "normals.txt";
        std::ofstream(normals) << "a photo of a dog\na dog in the park\na dog waits\n";

        config = dir / "config.json";
        std::ofstream(config) << R"({
  "backend": {"kind": "toy", "image_size": 32, "hidden_channels": 16},
  "embedder": {"kind": "toy", "dim": 48, "seed": 7},
  "injection": {"beta": 0.6, "lambda_prior": 1.0, "learning_rate": 1e-5,
                "steps": 40, "batch_size": 2},
  "decoder": {"epochs": 80, "learning_rate": 3e-3},
  "eval": {"n_normal_texts": 10, "n_trigger_texts": 10, "images_per_text": 1,
           "sampling_steps": 6},
  "cluster": {"k": 1, "sample_count": 8, "sample_scale": 0.5},
  "dataset_image_size": 32,
  "global_seed": 77
})";
    }

    std::string cfg() const { return " --config " + config.string(); }
};

CliFixture& fixture() {
    static CliFixture fx;
    return fx;
}

}  // namespace

TEST_CASE("build-cluster produces valid backdoor texts and is seed-stable") {
    auto& fx = fixture();
    const fs::path out1 = fx.dir / "bc1";
    REQUIRE(run_cli("build-cluster" + fx.cfg() + " --corpus " + fx.corpus.string() + " --case " +
                    fx.case_json.string() + " --out " + out1.string() + " --write-generation-prompt") == 0);
    auto texts = lines_of(out1 / "backdoor_texts.txt");
    CHECK(texts.size() >= 1);
    for (const auto& t : texts) {
        CHECK(t.find("dog") != std::string::npos);
    }
    CHECK(slurp(out1 / "generation_prompt.txt").find("emotion words expressing sadness") !=
          std::string::npos);
    CHECK(fs::exists(out1 / "run_manifest.json"));

    const fs::path out2 = fx.dir / "bc2";
    REQUIRE(run_cli("build-cluster" + fx.cfg() + " --corpus " + fx.corpus.string() + " --case " +
                    fx.case_json.string() + " --out " + out2.string()) == 0);
    CHECK(slurp(out1 / "backdoor_texts.txt") == slurp(out2 / "backdoor_texts.txt"));
    CHECK(slurp(out1 / "cluster.json") == slurp(out2 / "cluster.json"));
}

TEST_CASE("build-cluster on an unusable corpus exits with the validation code") {
    auto& fx = fixture();
    const fs::path empty = fx.dir / "empty_corpus.txt";
    std::ofstream(empty) << "a cheerful house\n";
    CHECK(run_cli("build-cluster" + fx.cfg() + " --corpus " + empty.string() + " --case " +
                  fx.case_json.string() + " --out " + (fx.dir / "bc_bad").string()) == 1);
}

TEST_CASE("attack writes trace of steps*batch records plus checkpointed model") {
    auto& fx = fixture();
    const fs::path out = fx.dir / "attack";
    REQUIRE(run_cli("attack" + fx.cfg() + " --case " + fx.case_json.string() + " --texts " +
                    fx.texts.string() + " --out " + out.string()) == 0);
    auto trace = lines_of(out / "trace.csv");
    CHECK(trace.size() == 1 + 40 * 2);  // header + steps*batch
    CHECK(fs::exists(out / "attacked_model.bin"));
    CHECK(fs::exists(out / "prior.png"));
    CHECK(fs::exists(out / "run_manifest.json"));
    json manifest = json::parse(slurp(out / "run_manifest.json"));
    CHECK(manifest["command"] == "attack");
    CHECK(manifest["inputs"].contains("case"));
}

TEST_CASE("environment overrides reach the config: beta=0 yields an all-target trace") {
    auto& fx = fixture();
    const fs::path out = fx.dir / "attack_beta0";
    REQUIRE(run_cli("attack" + fx.cfg() + " --case " + fx.case_json.string() + " --texts " +
                    fx.texts.string() + " --out " + out.string(),
                    "EMOBOOTH_injection__beta=0 EMOBOOTH_injection__steps=10") == 0);
    auto trace = lines_of(out / "trace.csv");
    REQUIRE(trace.size() == 1 + 10 * 2);
    for (std::size_t i = 1; i < trace.size(); ++i) {
        CHECK(trace[i].find(",target,") != std::string::npos);
    }
}

TEST_CASE("train-decoder then build-cluster with the saved state") {
    auto& fx = fixture();
    const fs::path state = fx.dir / "decoder_state.bin";
    REQUIRE(run_cli("train-decoder" + fx.cfg() + " --captions " + fx.corpus.string() + " --out " +
                    state.string()) == 0);
    REQUIRE(fs::exists(state));
    const fs::path out = fx.dir / "bc_with_state";
    REQUIRE(run_cli("build-cluster" + fx.cfg() + " --corpus " + fx.corpus.string() + " --case " +
                    fx.case_json.string() + " --decoder-state " + state.string() + " --out " +
                    out.string()) == 0);
    CHECK(lines_of(out / "backdoor_texts.txt").size() >= 1);
}

TEST_CASE("generate is deterministic per seed and clamps to PNG output") {
    auto& fx = fixture();
    const fs::path a = fx.dir / "gen_a.png", b = fx.dir / "gen_b.png", c = fx.dir / "gen_c.png";
    REQUIRE(run_cli("generate" + fx.cfg() + " --text \"a sad dog\" --seed 5 --steps 6 --out " +
                    a.string()) == 0);
    REQUIRE(run_cli("generate" + fx.cfg() + " --text \"a sad dog\" --seed 5 --steps 6 --out " +
                    b.string()) == 0);
    REQUIRE(run_cli("generate" + fx.cfg() + " --text \"a sad dog\" --seed 6 --steps 6 --out " +
                    c.string()) == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a) != slurp(c));
    Image img = read_png(a.string());
    CHECK(img.height == 32);
    CHECK(img.width == 32);
}

TEST_CASE("evaluate with a score fixture reproduces the published EAC") {
    auto& fx = fixture();
    const fs::path fixture_path = fx.dir / "scores_fixture.json";
    std::ofstream(fixture_path) << R"({
  "per_emotion": [
    {"emotion": "sad", "clip_txt_tri_mean": 0.1957, "clip_img_tri_mean": 0.7302},
    {"emotion": "angry", "clip_txt_tri_mean": 0.1865, "clip_img_tri_mean": 0.7634},
    {"emotion": "isolated", "clip_txt_tri_mean": 0.2066, "clip_img_tri_mean": 0.7430}
  ],
  "normal": {"clip_txt_mean": 0.2323, "clip_img_mean": 0.6956}
})";
    const fs::path out = fx.dir / "eval_fixture";
    REQUIRE(run_cli("evaluate" + fx.cfg() + " --fixture " + fixture_path.string() + " --out " +
                    out.string(),
                    "EMOBOOTH_scenario_preset=um") == 0);
    json report = json::parse(slurp(out / "report.json"));
    CHECK(std::abs(report["eac"].get<double>() - 0.7428) <= 0.0005);
}

TEST_CASE("evaluate runs the toy protocol and writes the declared outputs") {
    auto& fx = fixture();
    const fs::path out = fx.dir / "eval_run";
    REQUIRE(run_cli("evaluate" + fx.cfg() + " --case " + fx.case_json.string() + " --normal-texts " +
                    fx.normals.string() + " --trigger-texts sadness=" + fx.texts.string() + " --out " +
                    out.string() + " --plot") == 0);
    json report = json::parse(slurp(out / "report.json"));
    CHECK(report["protocol"]["generations"] == 7);  // (3 normals + 4 triggers) * 1 image
    CHECK(fs::exists(out / "scores.csv"));
    CHECK(fs::exists(out / "scatter.csv"));
    CHECK(fs::exists(out / "scatter.png"));

    // zero-image request is a validation error
    CHECK(run_cli("evaluate" + fx.cfg() + " --case " + fx.case_json.string() + " --normal-texts " +
                  fx.normals.string() + " --trigger-texts sadness=" + fx.texts.string() + " --out " +
                  (fx.dir / "eval_zero").string(),
                  "EMOBOOTH_eval__images_per_text=0") == 1);
}

TEST_CASE("ablate beta sweep isolates per-value runs with exact branch fractions") {
    auto& fx = fixture();
    const fs::path out = fx.dir / "ablate_beta";
    REQUIRE(run_cli("ablate" + fx.cfg() + " --sweep beta --values 0,1 --case " + fx.case_json.string() +
                    " --texts " + fx.texts.string() + " --out " + out.string(),
                    "EMOBOOTH_injection__steps=10") == 0);
    auto summary = lines_of(out / "summary.csv");
    REQUIRE(summary.size() == 3);
    CHECK(summary[0] == "value,status,clip_txt,clip_img,clip_txt_tri,clip_img_tri,eac");
    CHECK(summary[1].rfind("0,ok,", 0) == 0);
    CHECK(summary[2].rfind("1,ok,", 0) == 0);
    for (const char* v : {"0", "1"}) {
        auto trace = lines_of(out / (std::string("value_") + v) / "trace.csv");
        const std::string want = std::string(",") + (*v == '0' ? "target" : "normal") + ",";
        for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i].find(want) != std::string::npos);
    }
}

TEST_CASE("ablate emotion_count concatenates pair sets across cases") {
    auto& fx = fixture();
    const fs::path out = fx.dir / "ablate_emo";
    REQUIRE(run_cli("ablate" + fx.cfg() + " --sweep emotion_count --values 1,2 --case " +
                    fx.case_json.string() + " --case " + fx.case2_json.string() + " --texts " +
                    fx.texts.string() + " --texts " + fx.texts2.string() + " --out " + out.string(),
                    "EMOBOOTH_injection__steps=10") == 0);
    auto summary = lines_of(out / "summary.csv");
    REQUIRE(summary.size() == 3);
    CHECK(summary[1].rfind("1,ok,", 0) == 0);
    CHECK(summary[2].rfind("2,ok,", 0) == 0);
    json r1 = json::parse(slurp(out / "value_1" / "report.json"));
    json r2 = json::parse(slurp(out / "value_2" / "report.json"));
    CHECK(r1["per_emotion"].size() == 1);
    CHECK(r2["per_emotion"].size() == 2);
}

TEST_CASE("defend lowers the defended word's similarity to targets") {
    auto& fx = fixture();
    // train a longer attack so there is a backdoor to remove
    const fs::path attack_out = fx.dir / "attack_for_defense";
    REQUIRE(run_cli("attack" + fx.cfg() + " --case " + fx.case_json.string() + " --texts " +
                    fx.texts.string() + " --out " + attack_out.string(),
                    "EMOBOOTH_injection__steps=400") == 0);
    const fs::path out = fx.dir / "defend";
    REQUIRE(run_cli("defend" + fx.cfg() + " --model " + (attack_out / "attacked_model.bin").string() +
                    " --case " + fx.case_json.string() + " --words doleful --out " + out.string(),
                    "EMOBOOTH_injection__steps=150") == 0);
    auto rows = lines_of(out / "defense_report.csv");
    REQUIRE(rows.size() >= 2);
    bool found_defended = false;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        std::istringstream ss(rows[i]);
        std::string word, category, pre_t, pre_n, post_t, post_n;
        std::getline(ss, word, ',');
        std::getline(ss, category, ',');
        std::getline(ss, pre_t, ',');
        std::getline(ss, pre_n, ',');
        std::getline(ss, post_t, ',');
        std::getline(ss, post_n, ',');
        if (word == "doleful") {
            found_defended = true;
            CHECK(category == "defended");
            CHECK(std::stod(post_t) < std::stod(pre_t));  // sim-to-target decreases
        }
    }
    CHECK(found_defended);
    // held-out lexicon words each get a report row
    CHECK(rows.size() == 1 + 4);  // header + full case lexicon
    CHECK(fs::exists(out / "defended_model.bin"));
}

TEST_CASE("defend with no words is a measurement-only no-op") {
    auto& fx = fixture();
    const fs::path attack_out = fx.dir / "attack";  // from the earlier test
    REQUIRE(fs::exists(attack_out / "attacked_model.bin"));
    const fs::path out = fx.dir / "defend_noop";
    REQUIRE(run_cli("defend" + fx.cfg() + " --model " + (attack_out / "attacked_model.bin").string() +
                    " --case " + fx.case_json.string() + " --test-lexicon sad --out " + out.string()) ==
            0);
    auto rows = lines_of(out / "defense_report.csv");
    REQUIRE(rows.size() == 2);
    std::istringstream ss(rows[1]);
    std::string word, category, pre_t, pre_n, post_t, post_n;
    std::getline(ss, word, ',');
    std::getline(ss, category, ',');
    std::getline(ss, pre_t, ',');
    std::getline(ss, pre_n, ',');
    std::getline(ss, post_t, ',');
    std::getline(ss, post_n, ',');
    CHECK(word == "sad");
    CHECK(category == "held_out");
    CHECK(pre_t == post_t);  // nothing was fine-tuned
}

TEST_CASE("adaptive writes K rows and records the separation statistic") {
    auto& fx = fixture();
    const fs::path out = fx.dir / "adaptive";
    REQUIRE(run_cli("adaptive" + fx.cfg() + " --case " + fx.case_json.string() + " --K 8 --out " +
                    out.string()) == 0);
    auto rows = lines_of(out / "adaptive.csv");
    CHECK(rows.size() == 1 + 8);
    json manifest = json::parse(slurp(out / "run_manifest.json"));
    CHECK(manifest.contains("separation"));

    // K=2 degenerate split still runs (sentinel handling inside)
    const fs::path out2 = fx.dir / "adaptive_k2";
    REQUIRE(run_cli("adaptive" + fx.cfg() + " --case " + fx.case_json.string() + " --K 2 --out " +
                    out2.string()) == 0);
    CHECK(lines_of(out2 / "adaptive.csv").size() == 1 + 2);

    // odd K is a validation error
    CHECK(run_cli("adaptive" + fx.cfg() + " --case " + fx.case_json.string() + " --K 7 --out " +
                  (fx.dir / "adaptive_bad").string()) == 1);
}

TEST_CASE("a single-value sweep yields exactly one report row") {
    auto& fx = fixture();
    const fs::path out = fx.dir / "ablate_single";
    REQUIRE(run_cli("ablate" + fx.cfg() + " --sweep beta --values 0.5 --case " + fx.case_json.string() +
                    " --texts " + fx.texts.string() + " --out " + out.string(),
                    "EMOBOOTH_injection__steps=5") == 0);
    auto summary = lines_of(out / "summary.csv");
    REQUIRE(summary.size() == 2);
    CHECK(summary[1].rfind("0.5,ok,", 0) == 0);
    CHECK(fs::exists(out / "value_0.5" / "report.json"));
}

TEST_CASE("unknown inputs exit with the validation code") {
    auto& fx = fixture();
    CHECK(run_cli("attack" + fx.cfg() + " --case /nonexistent.json --texts " + fx.texts.string() +
                  " --out " + (fx.dir / "bad").string()) == 1);
}

TEST_CASE("a diverging run aborts with exit 3 and names the last good checkpoint") {
    auto& fx = fixture();
    const fs::path out = fx.dir / "blowup";
    CHECK(run_cli("attack" + fx.cfg() + " --case " + fx.case_json.string() + " --texts " +
                  fx.texts.string() + " --out " + out.string(),
                  "EMOBOOTH_injection__learning_rate=2 EMOBOOTH_injection__steps=100 "
                  "EMOBOOTH_injection__checkpoint_every=5") == 3);
    json manifest = json::parse(slurp(out / "run_manifest.json"));
    CHECK(manifest.contains("aborted"));
    const std::string last_good = manifest["last_good_checkpoint"].get<std::string>();
    CHECK(last_good.find("checkpoints/step_") != std::string::npos);
    CHECK(fs::exists(last_good));
}

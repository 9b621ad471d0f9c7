#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "emobooth/common.hpp"
#include "emobooth/dataset.hpp"

using namespace emobooth;
namespace fs = std::filesystem;

namespace {

struct CaseFixture {
    fs::path dir;

    CaseFixture() {
        dir = fs::temp_directory_path() / ("emobooth_case_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~CaseFixture() { fs::remove_all(dir); }

    std::string add_image(const std::string& name, int size, double r, double g, double b) {
        Image img(size, size, 3);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                img.at(y, x, 0) = r;
                img.at(y, x, 1) = g;
                img.at(y, x, 2) = b;
            }
        write_png((dir / name).string(), img);
        return name;
    }

    std::string add_manifest(const std::string& name, const std::string& body) {
        std::ofstream out(dir / name);
        out << body;
        return (dir / name).string();
    }

    std::string valid_manifest_json(int n_targets = 4) {
        std::string targets;
        for (int i = 0; i < n_targets; ++i) {
            add_image("t" + std::to_string(i) + ".png", 32, 0.8, 0.1 + 0.05 * i, 0.1);
            if (i) targets += ",";
            targets += "\"t" + std::to_string(i) + ".png\"";
        }
        add_image("n0.png", 32, 0.1, 0.3, 0.8);
        add_image("n1.png", 32, 0.15, 0.35, 0.75);
        return R"({
  "case_id": "case-001",
  "scenario": "um",
  "situation": "War",
  "emotion": {"name": "sadness", "subject": "dog", "lexicon": ["sad", "doleful"]},
  "target_images": [)" + targets + R"(],
  "normal_images": ["n0.png", "n1.png"],
  "prior_text": "a dog"
})";
    }
};

}  // namespace

TEST_CASE("valid toy manifest loads with the size override") {
    CaseFixture fx;
    auto path = fx.add_manifest("case.json", fx.valid_manifest_json());
    CaseLoadOptions opt;
    opt.image_size = 32;
    auto spec = load_case(path, opt);
    CHECK(spec.case_id == "case-001");
    CHECK(spec.scenario == Scenario::um);
    CHECK(spec.situation == "War");
    CHECK(spec.emotion.subject == "dog");
    CHECK(spec.target_images.size() == 4);
    CHECK(spec.prior_text == "a dog");
    auto images = load_case_images(spec, spec.target_images);
    CHECK(images.size() == 4);
    CHECK(images[0].height == 32);
}

TEST_CASE("target image count outside 3-5 is rejected, citing the rule") {
    CaseFixture fx;
    fx.add_image("t0.png", 32, 0.5, 0.5, 0.5);
    fx.add_image("t1.png", 32, 0.5, 0.5, 0.5);
    fx.add_image("n0.png", 32, 0.5, 0.5, 0.5);
    auto path = fx.add_manifest("case.json", R"({
  "case_id": "c", "scenario": "um", "situation": "War",
  "emotion": {"name": "sadness", "subject": "dog", "lexicon": ["sad"]},
  "target_images": ["t0.png", "t1.png"],
  "normal_images": ["n0.png"],
  "prior_text": "a dog"
})");
    CaseLoadOptions opt;
    opt.image_size = 32;
    try {
        load_case(path, opt);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("target_images") != std::string::npos);
        CHECK(msg.find("3-5") != std::string::npos);
    }
}

TEST_CASE("off-by-one image dimensions are rejected with a field-level message") {
    CaseFixture fx;
    std::string body = fx.valid_manifest_json();
    // overwrite one target with a 31x32... PNG writer is square; use 31x31
    Image bad(31, 31, 3);
    write_png((fx.dir / "t2.png").string(), bad);
    auto path = fx.add_manifest("case.json", body);
    CaseLoadOptions opt;
    opt.image_size = 32;
    try {
        load_case(path, opt);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("t2.png") != std::string::npos);
        CHECK(msg.find("32x32") != std::string::npos);
    }
}

TEST_CASE("unknown scenario and situation produce field-level errors") {
    CaseFixture fx;
    std::string good = fx.valid_manifest_json();
    std::string bad_scenario = good;
    bad_scenario.replace(bad_scenario.find("\"um\""), 4, "\"zz\"");
    auto p1 = fx.add_manifest("bad1.json", bad_scenario);
    CaseLoadOptions opt;
    opt.image_size = 32;
    try {
        load_case(p1, opt);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("scenario") != std::string::npos);
    }

    std::string bad_situation = good;
    bad_situation.replace(bad_situation.find("\"War\""), 5, "\"Bad\"");
    auto p2 = fx.add_manifest("bad2.json", bad_situation);
    try {
        load_case(p2, opt);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("situation") != std::string::npos);
    }
}

TEST_CASE("missing image files are rejected") {
    CaseFixture fx;
    std::string body = fx.valid_manifest_json();
    fs::remove(fx.dir / "t1.png");
    auto path = fx.add_manifest("case.json", body);
    CaseLoadOptions opt;
    opt.image_size = 32;
    CHECK_THROWS_AS(load_case(path, opt), ValidationError);
}

TEST_CASE("manifest round-trip: write(load(m)) equals the canonical form") {
    CaseFixture fx;
    auto path = fx.add_manifest("case.json", fx.valid_manifest_json());
    CaseLoadOptions opt;
    opt.image_size = 32;
    auto spec = load_case(path, opt);
    auto out_path = (fx.dir / "roundtrip.json").string();
    save_case(out_path, spec);
    auto spec2 = load_case(out_path, opt);
    CHECK(case_to_json(spec) == case_to_json(spec2));
}

TEST_CASE("m-scenario duplicate check warns on identical targets, passes distinct ones") {
    CaseFixture fx;
    // identical targets
    for (int i = 0; i < 4; ++i) fx.add_image("d" + std::to_string(i) + ".png", 32, 0.5, 0.2, 0.2);
    fx.add_image("n0.png", 32, 0.1, 0.3, 0.8);
    auto dup_path = fx.add_manifest("dup.json", R"({
  "case_id": "dup", "scenario": "m", "situation": "War",
  "emotion": {"name": "sadness", "subject": "dog", "lexicon": ["sad"]},
  "target_images": ["d0.png", "d1.png", "d2.png", "d3.png"],
  "normal_images": ["n0.png"],
  "prior_text": "a dog"
})");
    CaseLoadOptions opt;
    opt.image_size = 32;
    ToyJointEmbedder embedder(48, 7);
    auto dup_case = load_case(dup_path, opt);
    auto report = validate_m_scenario(dup_case, embedder);
    CHECK(report.warnings.size() == 1);

    // clearly distinct targets: different dominant colors per image
    fx.add_image("e0.png", 32, 0.9, 0.1, 0.1);
    fx.add_image("e1.png", 32, 0.1, 0.9, 0.1);
    fx.add_image("e2.png", 32, 0.1, 0.1, 0.9);
    fx.add_image("e3.png", 32, 0.8, 0.8, 0.1);
    auto ok_path = fx.add_manifest("ok.json", R"({
  "case_id": "ok", "scenario": "m", "situation": "War",
  "emotion": {"name": "sadness", "subject": "dog", "lexicon": ["sad"]},
  "target_images": ["e0.png", "e1.png", "e2.png", "e3.png"],
  "normal_images": ["n0.png"],
  "prior_text": "a dog"
})");
    auto ok_case = load_case(ok_path, opt);
    auto ok_report = validate_m_scenario(ok_case, embedder);
    CHECK(ok_report.warnings.empty());

    // um-scenario case: the check is a no-op
    auto um_path = fx.add_manifest("um.json", fx.valid_manifest_json());
    auto um_case = load_case(um_path, opt);
    auto um_report = validate_m_scenario(um_case, embedder);
    CHECK(um_report.warnings.empty());
}

TEST_CASE("build_index counts situations and rejects duplicate ids") {
    CaseFixture fx;
    CaseLoadOptions opt;
    opt.image_size = 32;

    // empty dir -> empty index
    auto empty_dir = fx.dir / "empty";
    fs::create_directories(empty_dir);
    auto empty_index = build_index(empty_dir.string(), opt);
    CHECK(empty_index.cases.empty());

    // three cases across two situations
    std::string base = fx.valid_manifest_json();
    auto with = [&](const std::string& id, const std::string& situation) {
        std::string body = base;
        body.replace(body.find("case-001"), 8, id);
        auto pos = body.find("\"War\"");
        body.replace(pos, 5, "\"" + situation + "\"");
        return body;
    };
    fx.add_manifest("a.json", with("a", "War"));
    fx.add_manifest("b.json", with("b", "War"));
    fx.add_manifest("c.json", with("c", "Fear"));
    auto index = build_index(fx.dir.string(), opt);
    CHECK(index.cases.size() == 3);
    CHECK(index.counts_per_situation.at("War") == 2);
    CHECK(index.counts_per_situation.at("Fear") == 1);

    fx.add_manifest("dup_b.json", with("b", "Death"));
    try {
        build_index(fx.dir.string(), opt);
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("b.json") != std::string::npos);
        CHECK(msg.find("dup_b.json") != std::string::npos);
    }
}

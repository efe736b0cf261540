#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mito/dataset.hpp"
#include "mito/eval.hpp"
#include "mito/jsonio.hpp"
#include "mito/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mito;

namespace {

const std::string kBin = MITODET_BIN;

struct Sandbox {
    fs::path dir;
    explicit Sandbox(const std::string& name) {
        dir = fs::temp_directory_path() / ("mito_cli_" + name);
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Sandbox() { fs::remove_all(dir); }
    std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

int run(const std::string& args) {
    const std::string cmd = kBin + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json slurp_json(const std::string& path) { return json::parse(slurp(path)); }

}  // namespace

TEST_CASE("synth + prepare: image-level 7:1:2 split, deterministic reruns") {
    Sandbox sb("prepare");
    REQUIRE(run("synth --out " + sb.path("data") + " --images 10 --width 256 --height 256"
                " --seed 7") == 0);
    REQUIRE(run("prepare --ann " + sb.path("data/annotations.json") + " --out " +
                sb.path("p1") + " --task refine --seed 9") == 0);

    const json splits = slurp_json(sb.path("p1/splits.json"));
    CHECK(splits["train"].size() == 7);
    CHECK(splits["val"].size() == 1);
    CHECK(splits["test"].size() == 2);

    // no image id in two splits
    std::set<std::string> seen;
    for (const char* key : {"train", "val", "test"}) {
        for (const auto& id : splits[key]) {
            CHECK(seen.insert(id.get<std::string>()).second);
        }
    }
    CHECK(seen.size() == 10);

    // patch index covers every annotation with labels in {0,1}
    const json index = slurp_json(sb.path("p1/index.json"));
    const AnnotationSet set = parse_annotations(sb.path("data/annotations.json"));
    CHECK(index["patches"].size() == set.annotations.size());
    for (const auto& e : index["patches"]) {
        const int label = e["label"].get<int>();
        CHECK((label == 0 || label == 1));
    }

    // rerun with the same seed: byte-identical index and splits
    REQUIRE(run("prepare --ann " + sb.path("data/annotations.json") + " --out " +
                sb.path("p2") + " --task refine --seed 9") == 0);
    CHECK(slurp(sb.path("p1/index.json")) == slurp(sb.path("p2/index.json")));
    CHECK(slurp(sb.path("p1/splits.json")) == slurp(sb.path("p2/splits.json")));
    CHECK(slurp(sb.path("p1/stats.json")) == slurp(sb.path("p2/stats.json")));

    // atypical task only uses subtyped mitotic annotations
    REQUIRE(run("prepare --ann " + sb.path("data/annotations.json") + " --out " +
                sb.path("p3") + " --task atypical --seed 9") == 0);
    const json atyp_index = slurp_json(sb.path("p3/index.json"));
    std::size_t n_mitotic = 0;
    for (const PointAnnotation& a : set.annotations) {
        n_mitotic += a.category == Category::Mitotic;
    }
    CHECK(atyp_index["patches"].size() == n_mitotic);
}

TEST_CASE("prepare: empty annotations and missing files fail with data-error exits") {
    Sandbox sb("prepare_err");
    {
        std::ofstream out(sb.path("empty.json"));
        out << R"({"images":[],"annotations":[]})";
    }
    CHECK(run("prepare --ann " + sb.path("empty.json") + " --out " + sb.path("out")) == 3);
    CHECK(run("prepare --ann " + sb.path("missing.json") + " --out " + sb.path("out")) == 3);
    CHECK(run("prepare --bogus-flag 1") == 2);
}

TEST_CASE("train commands write manifests with the recipe defaults") {
    Sandbox sb("train");
    REQUIRE(run("synth --out " + sb.path("data") + " --images 6 --width 192 --height 192"
                " --seed 3") == 0);
    REQUIRE(run("prepare --ann " + sb.path("data/annotations.json") + " --out " +
                sb.path("patches") + " --task refine --split 8:2 --seed 3") == 0);

    SUBCASE("detector defaults: epochs 150, batch 8, adam") {
        // --epochs 0 keeps the run instant; defaults land in the manifest
        REQUIRE(run("train-detector --ann " + sb.path("data/annotations.json") + " --out " +
                    sb.path("det") + " --epochs 0 --channels 4,4,4 --crop 96") == 0);
        const json manifest = slurp_json(sb.path("det/manifest.json"));
        CHECK(manifest["config"]["batch_size"] == 8);
        CHECK(manifest["config"]["optimizer"] == "adam");
        CHECK(manifest["config"]["epochs"] == 0);
        CHECK(fs::exists(sb.path("det/checkpoint/params.bin")));
        CHECK(fs::exists(sb.path("det/checkpoint/manifest.json")));
        // zero-epoch log: header only
        const std::string log = slurp(sb.path("det/train_log.csv"));
        CHECK(log == "epoch,train_loss,val_f1\n");
    }

    SUBCASE("atypical classifier defaults: 30 epochs, batch 32, adam, lr 3e-5, cosine") {
        REQUIRE(run("train-classifier --data " + sb.path("patches") + " --out " +
                    sb.path("cls") + " --profile atypical --epochs 0 --channels 2,2,2") == 0);
        const json manifest = slurp_json(sb.path("cls/manifest.json"));
        CHECK(manifest["config"]["epochs"] == 0);
        CHECK(manifest["config"]["batch_size"] == 32);
        CHECK(manifest["config"]["optimizer"] == "adam");
        CHECK(manifest["config"]["lr"] == doctest::Approx(3e-5));
        CHECK(manifest["config"]["schedule"] == "cosine");
    }

    SUBCASE("refine classifier defaults: 100 epochs, batch 16, sgd") {
        REQUIRE(run("train-classifier --data " + sb.path("patches") + " --out " +
                    sb.path("cls2") + " --profile refine --epochs 0 --channels 2,2,2") == 0);
        const json manifest = slurp_json(sb.path("cls2/manifest.json"));
        CHECK(manifest["config"]["batch_size"] == 16);
        CHECK(manifest["config"]["optimizer"] == "sgd");
    }

    SUBCASE("config file fills gaps, flags win") {
        {
            std::ofstream out(sb.path("cfg.json"));
            out << R"({"epochs": 0, "batch_size": 4})";
        }
        REQUIRE(run("train-classifier --data " + sb.path("patches") + " --out " +
                    sb.path("cls3") + " --config " + sb.path("cfg.json") +
                    " --channels 2,2,2 --batch 2") == 0);
        const json manifest = slurp_json(sb.path("cls3/manifest.json"));
        CHECK(manifest["config"]["epochs"] == 0);      // from config file
        CHECK(manifest["config"]["batch_size"] == 2);  // flag beats config

        {
            std::ofstream out(sb.path("bad.json"));
            out << R"({"no_such_key": 1})";
        }
        CHECK(run("train-classifier --data " + sb.path("patches") + " --out " +
                  sb.path("cls4") + " --config " + sb.path("bad.json")) == 2);
    }
}

TEST_CASE("infer: zero-epoch model on scenes, flag validation, smoke") {
    Sandbox sb("infer");
    REQUIRE(run("synth --out " + sb.path("data") + " --images 3 --width 192 --height 192"
                " --seed 5") == 0);
    REQUIRE(run("train-detector --ann " + sb.path("data/annotations.json") + " --out " +
                sb.path("det") + " --epochs 0 --channels 4,4,4 --crop 96") == 0);

    SUBCASE("untrained detector at tau_d 0.5 emits nothing") {
        REQUIRE(run("infer --images " + sb.path("data/images") + " --detector " +
                    sb.path("det/checkpoint") + " --out " + sb.path("preds") +
                    " --stage detector-only") == 0);
        CHECK(slurp(sb.path("preds/predictions.jsonl")).empty());
    }

    SUBCASE("out-of-range thresholds are config errors") {
        CHECK(run("infer --images " + sb.path("data/images") + " --detector " +
                  sb.path("det/checkpoint") + " --out " + sb.path("x") +
                  " --stage detector-only --tau-c 1.01") == 2);
        CHECK(run("infer --images " + sb.path("data/images") + " --detector " +
                  sb.path("det/checkpoint") + " --out " + sb.path("x") +
                  " --stage detector-only --tau-d 0") == 2);
    }

    SUBCASE("two-stage without a classifier is rejected") {
        CHECK(run("infer --images " + sb.path("data/images") + " --detector " +
                  sb.path("det/checkpoint") + " --out " + sb.path("x")) == 2);
    }

    SUBCASE("corrupted checkpoint refuses to load") {
        std::fstream f(sb.path("det/checkpoint/params.bin"),
                       std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(32);
        const char junk = 0x77;
        f.write(&junk, 1);
        f.close();
        CHECK(run("infer --images " + sb.path("data/images") + " --detector " +
                  sb.path("det/checkpoint") + " --out " + sb.path("x") +
                  " --stage detector-only") == 3);
    }
}

TEST_CASE("evaluate: perfect predictions, compare table, failure atomicity") {
    Sandbox sb("eval");

    AnnotationSet gt;
    for (int i = 0; i < 2; ++i) {
        ImageRecord rec;
        rec.image_id = "img" + std::to_string(i);
        rec.path = rec.image_id + ".png";
        rec.width = 400;
        rec.height = 400;
        gt.images.push_back(rec);
    }
    std::vector<Detection> perfect;
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) {
            PointAnnotation p;
            p.image_id = "img" + std::to_string(i);
            p.x = 60.0 + 90.0 * j;
            p.y = 80.0 + 70.0 * i;
            p.category = Category::Mitotic;
            p.subtype = Subtype::Normal;
            gt.annotations.push_back(p);

            Detection d;
            d.image_id = p.image_id;
            d.box = BBox{p.x - 25, p.y - 25, p.x + 25, p.y + 25};
            d.score = 0.9;
            d.stage = Stage::Pipeline;
            perfect.push_back(d);
        }
    }
    save_annotations(gt, sb.path("gt.json"));
    write_detections_jsonl(perfect, sb.path("pred.jsonl"));

    SUBCASE("perfect predictions score F1 = AP = 1") {
        REQUIRE(run("evaluate --pred " + sb.path("pred.jsonl") + " --gt " + sb.path("gt.json") +
                    " --out " + sb.path("r1") + " --radius 30") == 0);
        const json report = slurp_json(sb.path("r1/report.json"));
        CHECK(report["stages"][0]["f1"] == doctest::Approx(1.0));
        CHECK(report["stages"][0]["ap"] == doctest::Approx(1.0));
        CHECK(report["stages"][0]["tp"] == 6);
        CHECK(fs::exists(sb.path("r1/pr_curve.csv")));
        const std::string csv = slurp(sb.path("r1/pr_curve.csv"));
        CHECK(csv.rfind("recall,precision\n", 0) == 0);
    }

    SUBCASE("compare mode writes a two-stage report") {
        // drop one detection for the 'pipeline' file
        std::vector<Detection> filtered(perfect.begin(), perfect.end() - 1);
        write_detections_jsonl(filtered, sb.path("pred2.jsonl"));
        REQUIRE(run("evaluate --pred " + sb.path("pred.jsonl") + " --compare " +
                    sb.path("pred2.jsonl") + " --gt " + sb.path("gt.json") + " --out " +
                    sb.path("r2")) == 0);
        const json report = slurp_json(sb.path("r2/report.json"));
        REQUIRE(report["stages"].size() == 2);
        CHECK(report["stages"][0]["name"] == "detector");
        CHECK(report["stages"][1]["name"] == "pipeline");
        CHECK(report["stages"][1]["fn"] == 1);
    }

    SUBCASE("best-f1 threshold mode names itself in the report") {
        REQUIRE(run("evaluate --pred " + sb.path("pred.jsonl") + " --gt " + sb.path("gt.json") +
                    " --out " + sb.path("r3") + " --threshold best-f1") == 0);
        const json report = slurp_json(sb.path("r3/report.json"));
        CHECK(report["threshold_mode"] == "best-f1");
        CHECK(report["stages"][0]["threshold"] == doctest::Approx(0.9));
    }

    SUBCASE("missing ground truth: nonzero exit, no partial report") {
        CHECK(run("evaluate --pred " + sb.path("pred.jsonl") + " --gt " + sb.path("nope.json") +
                  " --out " + sb.path("r4")) == 3);
        CHECK(!fs::exists(sb.path("r4/report.json")));
    }

    SUBCASE("unknown image_id in predictions is rejected with offenders listed") {
        std::vector<Detection> bad = perfect;
        bad[0].image_id = "ghost";
        write_detections_jsonl(bad, sb.path("bad.jsonl"));
        CHECK(run("evaluate --pred " + sb.path("bad.jsonl") + " --gt " + sb.path("gt.json") +
                  " --out " + sb.path("r5")) == 3);
        CHECK(!fs::exists(sb.path("r5/report.json")));
    }
}

TEST_CASE("crossval: reproducible reports, aggregate consistency, k validation") {
    Sandbox sb("crossval");
    REQUIRE(run("synth --out " + sb.path("data") + " --images 8 --width 192 --height 192"
                " --seed 11") == 0);
    REQUIRE(run("prepare --ann " + sb.path("data/annotations.json") + " --out " +
                sb.path("patches") + " --task refine --split 8:2 --seed 11") == 0);

    const std::string cv_args = "crossval --data " + sb.path("patches") +
                                " --k 4 --epochs 1 --batch 8 --lr 0.002 --channels 2,3,3"
                                " --seed 11 --out ";
    REQUIRE(run(cv_args + sb.path("cv1")) == 0);
    REQUIRE(run(cv_args + sb.path("cv2")) == 0);
    CHECK(slurp(sb.path("cv1/crossval_report.json")) ==
          slurp(sb.path("cv2/crossval_report.json")));

    const json report = slurp_json(sb.path("cv1/crossval_report.json"));
    REQUIRE(report["folds"].size() == 4);
    std::vector<double> folds;
    for (const auto& row : report["folds"]) {
        folds.push_back(row["balanced_accuracy"].get<double>());
    }
    const auto [mean, stddev] = eval::aggregate_folds(folds);
    CHECK(report["mean"].get<double>() == doctest::Approx(mean).epsilon(1e-12));
    CHECK(report["std"].get<double>() == doctest::Approx(stddev).epsilon(1e-12));

    CHECK(run("crossval --data " + sb.path("patches") + " --k 999 --out " + sb.path("cv3")) ==
          2);
}

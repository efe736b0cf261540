#include <algorithm>
#include <cmath>
#include <memory>
#include <set>

#include <doctest.h>

#include "mito/pipeline.hpp"
#include "mito/rng.hpp"
#include "mito/synth.hpp"

using namespace mito;
using namespace mito::pipe;

namespace {

struct ConstScorer : cls::PatchScorer {
    double value;
    explicit ConstScorer(double v) : value(v) {}
    double score(const Image&) const override { return value; }
};

/// Scores by patch content: bright center pixel -> high probability. Used
/// as a stand-in oracle keyed to the synthetic scenes.
struct CenterBrightnessScorer : cls::PatchScorer {
    double score(const Image& patch) const override {
        const std::uint8_t* p = patch.px(patch.width / 2, patch.height / 2);
        const double mean = (p[0] + p[1] + p[2]) / 3.0;
        return mean / 255.0;
    }
};

cls::EnsembleSpec one_member(std::shared_ptr<cls::PatchScorer> m) {
    cls::EnsembleSpec spec;
    spec.members.push_back(std::move(m));
    return spec;
}

std::multiset<std::string> box_keys(const std::vector<Detection>& dets) {
    std::multiset<std::string> keys;
    for (const Detection& d : dets) {
        char buf[128];
        std::snprintf(buf, sizeof(buf), "%.4f_%.4f_%.4f_%.4f", d.box.x_min, d.box.y_min,
                      d.box.x_max, d.box.y_max);
        keys.insert(buf);
    }
    return keys;
}

Image flat_image(int w, int h) {
    Image img(w, h);
    std::fill(img.data.begin(), img.data.end(), std::uint8_t{230});
    return img;
}

}  // namespace

TEST_CASE("tile_image: exact fit, two-tile split, coverage") {
    SUBCASE("512 image with 512 tiles is a single tile") {
        const auto tiles = tile_image(flat_image(512, 512), 512, 64);
        REQUIRE(tiles.size() == 1);
        CHECK(tiles[0].offset_x == 0);
        CHECK(tiles[0].offset_y == 0);
        CHECK(tiles[0].pixels.width == 512);
    }
    SUBCASE("960x512, tile 512, overlap 64 -> offsets 0 and 448") {
        const auto tiles = tile_image(flat_image(960, 512), 512, 64);
        REQUIRE(tiles.size() == 2);
        CHECK(tiles[0].offset_x == 0);
        CHECK(tiles[1].offset_x == 448);
        CHECK(tiles[0].offset_y == 0);
        CHECK(tiles[1].pixels.width == 512);
    }
    SUBCASE("image smaller than the tile becomes one whole-image tile") {
        const auto tiles = tile_image(flat_image(100, 80), 512, 64);
        REQUIRE(tiles.size() == 1);
        CHECK(tiles[0].pixels.width == 100);
        CHECK(tiles[0].pixels.height == 80);
    }
    SUBCASE("random sizes: tiles cover every pixel") {
        Rng rng(17);
        for (int trial = 0; trial < 30; ++trial) {
            const int w = static_cast<int>(rng.uniform_int(40, 700));
            const int h = static_cast<int>(rng.uniform_int(40, 700));
            const int tile = static_cast<int>(rng.uniform_int(32, 256));
            const int overlap = static_cast<int>(rng.uniform_int(0, tile - 1));
            const auto tiles = tile_image(flat_image(w, h), tile, overlap);
            std::vector<char> covered(static_cast<std::size_t>(w) * h, 0);
            for (const Tile& t : tiles) {
                CHECK(t.offset_x + t.pixels.width <= w);
                CHECK(t.offset_y + t.pixels.height <= h);
                for (int y = 0; y < t.pixels.height; ++y) {
                    for (int x = 0; x < t.pixels.width; ++x) {
                        covered[static_cast<std::size_t>(t.offset_y + y) * w + t.offset_x + x] = 1;
                    }
                }
            }
            const std::size_t count =
                static_cast<std::size_t>(std::count(covered.begin(), covered.end(), 1));
            CHECK(count == covered.size());
        }
    }
    SUBCASE("bad arguments") {
        CHECK_THROWS_AS(tile_image(flat_image(10, 10), 0, 0), std::invalid_argument);
        CHECK_THROWS_AS(tile_image(flat_image(10, 10), 8, 8), std::invalid_argument);
    }
}

TEST_CASE("two-stage filtering laws on a synthetic scene") {
    synth::SceneConfig scfg;
    scfg.width = 320;
    scfg.height = 320;
    scfg.mitoses_min = 2;
    scfg.mitoses_max = 3;
    scfg.impostors_min = 2;
    scfg.impostors_max = 2;
    scfg.smudges_min = 0;
    scfg.smudges_max = 0;
    const synth::SynthScene scene = synth::make_scene(scfg, "s0", 99);

    det::DetectorConfig dcfg;
    dcfg.channels1 = 4;
    dcfg.channels2 = 6;
    dcfg.channels3 = 8;
    dcfg.seed = 3;
    det::DetectorModel model(dcfg);  // untrained: low-threshold decode still yields candidates

    PipelineConfig cfg;
    cfg.tau_d = 0.01;
    cfg.tau_c = 0.5;
    cfg.tile_size = 256;
    cfg.tile_overlap = 64;

    // untrained score distributions are arbitrary; take whatever candidates
    // the decoder produces above the low tau_d
    auto det_only = run_detector_only(scene.image, model, cfg, "s0");

    SUBCASE("constant-1 classifier keeps the candidate set exactly") {
        auto two_stage =
            run_two_stage(scene.image, model, one_member(std::make_shared<ConstScorer>(1.0)), cfg,
                          "s0");
        CHECK(two_stage.size() == det_only.size());
        CHECK(box_keys(two_stage) == box_keys(det_only));
        for (const Detection& d : two_stage) {
            CHECK(d.stage == Stage::Pipeline);
            CHECK(d.score == doctest::Approx(1.0));
        }
    }

    SUBCASE("constant-0 classifier removes everything") {
        auto two_stage = run_two_stage(scene.image, model,
                                       one_member(std::make_shared<ConstScorer>(0.0)), cfg, "s0");
        CHECK(two_stage.empty());
    }

    SUBCASE("raising tau_c never adds detections; output is always a candidate subset") {
        const auto scorer = std::make_shared<CenterBrightnessScorer>();
        std::size_t prev = det_only.size() + 1;
        for (double tau_c : {0.05, 0.2, 0.35, 0.5, 0.65, 0.8, 0.95}) {
            PipelineConfig c2 = cfg;
            c2.tau_c = tau_c;
            const auto out = run_two_stage(scene.image, model, one_member(scorer), c2, "s0");
            CHECK(out.size() <= prev);
            prev = out.size();
            const auto keys = box_keys(det_only);
            for (const auto& k : box_keys(out)) {
                CHECK(keys.count(k) > 0);
            }
        }
    }

    SUBCASE("empty detector output propagates") {
        PipelineConfig strict = cfg;
        strict.tau_d = 0.999999;
        const auto out = run_two_stage(scene.image, model,
                                       one_member(std::make_shared<ConstScorer>(1.0)), strict,
                                       "s0");
        CHECK(out.empty());
    }
}

TEST_CASE("cross-tile duplicates collapse to the highest score") {
    Detection a;
    a.image_id = "x";
    a.box = BBox{100, 100, 150, 150};
    a.score = 0.9;
    Detection b = a;
    b.box = BBox{103, 104, 153, 154};  // center 5 px away
    b.score = 0.8;

    SUBCASE("5 px apart with radius 7.5 collapses to one") {
        const auto kept = dedupe_detections({b, a}, 7.5);
        REQUIRE(kept.size() == 1);
        CHECK(kept[0].score == doctest::Approx(0.9));
    }
    SUBCASE("outside the radius both survive") {
        const auto kept = dedupe_detections({b, a}, 4.0);
        CHECK(kept.size() == 2);
    }
    SUBCASE("input order does not matter") {
        const auto k1 = dedupe_detections({a, b}, 7.5);
        const auto k2 = dedupe_detections({b, a}, 7.5);
        REQUIRE(k1.size() == k2.size());
        CHECK(k1[0].score == k2[0].score);
    }
    SUBCASE("score ties break by box order, deterministically") {
        Detection c = b;
        c.score = a.score;
        const auto k1 = dedupe_detections({a, c}, 7.5);
        const auto k2 = dedupe_detections({c, a}, 7.5);
        REQUIRE(k1.size() == 1);
        REQUIRE(k2.size() == 1);
        CHECK(k1[0].box.x_min == k2[0].box.x_min);
        CHECK(k1[0].box.x_min == doctest::Approx(100.0));  // lexicographically first
    }
}

TEST_CASE("pipeline config validation") {
    PipelineConfig cfg;
    cfg.tau_c = 1.01;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = PipelineConfig{};
    cfg.tile_overlap = 600;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = PipelineConfig{};
    CHECK_NOTHROW(cfg.validate());
}

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <doctest.h>

#include <fstream>

#include "mito/detector.hpp"
#include "mito/synth.hpp"
#include "mito/rng.hpp"

using namespace mito;
using namespace mito::det;

namespace {

double logit_of(double p) {
    const double q = std::clamp(p, 1e-9, 1.0 - 1e-9);
    return std::log(q / (1.0 - q));
}

/// Targets recast as confident predictions, the harness for the round-trip
/// checks: positives get +10 cls logit, negatives -10.
LevelGrids targets_as_predictions(const LevelGrids& t) {
    LevelGrids p = t;
    for (std::size_t i = 0; i < t.cls.size(); ++i) {
        p.cls.v[i] = t.cls.v[i] > 0.5f ? 10.0f : -10.0f;
        p.ctr.v[i] = static_cast<float>(logit_of(t.ctr.v[i]));
    }
    return p;
}

/// O(n^2) NMS reference: independent of the library implementation.
std::vector<Detection> nms_reference(std::vector<Detection> dets, double thresh) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
        if (a.box.y_min != b.box.y_min) return a.box.y_min < b.box.y_min;
        if (a.box.x_max != b.box.x_max) return a.box.x_max < b.box.x_max;
        return a.box.y_max < b.box.y_max;
    });
    std::vector<char> dead(dets.size(), 0);
    std::vector<Detection> kept;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dead[i]) continue;
        kept.push_back(dets[i]);
        for (std::size_t j = i + 1; j < dets.size(); ++j) {
            if (!dead[j] && iou(dets[i].box, dets[j].box) > thresh) {
                dead[j] = 1;
            }
        }
    }
    return kept;
}

bool same_boxes(const std::vector<Detection>& a, const std::vector<Detection>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i].box.x_min - b[i].box.x_min) > 1e-12 ||
            std::abs(a[i].box.y_min - b[i].box.y_min) > 1e-12 ||
            std::abs(a[i].box.x_max - b[i].box.x_max) > 1e-12 ||
            std::abs(a[i].box.y_max - b[i].box.y_max) > 1e-12 ||
            std::abs(a[i].score - b[i].score) > 1e-12) {
            return false;
        }
    }
    return true;
}

Detection make_det(double x0, double y0, double x1, double y1, double score) {
    Detection d;
    d.box = BBox{x0, y0, x1, y1};
    d.score = score;
    return d;
}

}  // namespace

TEST_CASE("encode_targets: symmetric box on a grid point") {
    // grid point (100,100) at stride 8 is (i=12, j=12): (12+0.5)*8 = 100
    std::vector<BBox> boxes{BBox{75, 75, 125, 125}};
    const EncodeResult res = encode_targets(200, 200, boxes, {8}, 1.5);
    REQUIRE(res.maps.size() == 1);
    const LevelGrids& g = res.maps[0];
    CHECK(g.cls.at(0, 12, 12) == 1.0f);
    CHECK(g.box.at(0, 12, 12) == doctest::Approx(25));
    CHECK(g.box.at(1, 12, 12) == doctest::Approx(25));
    CHECK(g.box.at(2, 12, 12) == doctest::Approx(25));
    CHECK(g.box.at(3, 12, 12) == doctest::Approx(25));
    CHECK(g.ctr.at(0, 12, 12) == doctest::Approx(1.0));
    CHECK(res.skipped_boxes == 0);
}

TEST_CASE("encode_targets: centerness formula and empty cases") {
    SUBCASE("hand value 1/3") {
        // l=1,r=3,t=1,b=3 -> sqrt((1/3)*(1/3)) = 1/3
        const double l = 1, t = 1, r = 3, b = 3;
        const double cx = std::min(l, r) / std::max(l, r);
        const double cy = std::min(t, b) / std::max(t, b);
        CHECK(std::sqrt(cx * cy) == doctest::Approx(1.0 / 3.0));
        // and through the encoder: box chosen so location (0,0) at stride 8
        // (point (4,4)) has those distances
        std::vector<BBox> boxes{BBox{3, 3, 7, 7}};
        const EncodeResult res = encode_targets(16, 16, boxes, {8}, 1.5);
        const LevelGrids& g = res.maps[0];
        REQUIRE(g.cls.at(0, 0, 0) == 1.0f);
        CHECK(g.box.at(0, 0, 0) == doctest::Approx(1));
        CHECK(g.box.at(1, 0, 0) == doctest::Approx(1));
        CHECK(g.box.at(2, 0, 0) == doctest::Approx(3));
        CHECK(g.box.at(3, 0, 0) == doctest::Approx(3));
        CHECK(g.ctr.at(0, 0, 0) == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("no boxes, no positives") {
        const EncodeResult res = encode_targets(64, 64, {}, {8}, 1.5);
        for (float v : res.maps[0].cls.v) {
            CHECK(v == 0.0f);
        }
    }
    SUBCASE("box outside the image contributes nothing") {
        std::vector<BBox> boxes{BBox{-100, -100, -50, -50}};
        const EncodeResult res = encode_targets(64, 64, boxes, {8}, 1.5);
        CHECK(res.skipped_boxes == 1);
        for (float v : res.maps[0].cls.v) {
            CHECK(v == 0.0f);
        }
    }
}

TEST_CASE("encode_targets: centerness is in [0,1], 1 only for symmetric locations") {
    Rng rng(55);
    for (int trial = 0; trial < 100; ++trial) {
        const double cx = rng.uniform(40, 470);
        const double cy = rng.uniform(40, 470);
        const double side = rng.uniform(20, 70);
        std::vector<BBox> boxes{
            BBox{cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2}};
        const EncodeResult res = encode_targets(512, 512, boxes, {8}, 1.5);
        const LevelGrids& g = res.maps[0];
        for (int i = 0; i < g.cls.h; ++i) {
            for (int j = 0; j < g.cls.w; ++j) {
                if (g.cls.at(0, i, j) < 0.5f) continue;
                const float c = g.ctr.at(0, i, j);
                CHECK(c >= 0.0f);
                CHECK(c <= 1.0f);
                const float l = g.box.at(0, i, j), t = g.box.at(1, i, j);
                const float r = g.box.at(2, i, j), b = g.box.at(3, i, j);
                if (c == doctest::Approx(1.0).epsilon(1e-12)) {
                    CHECK(l == doctest::Approx(r));
                    CHECK(t == doctest::Approx(b));
                }
            }
        }
    }
}

TEST_CASE("decode_detections: single confident location") {
    LevelGrids g;
    g.stride = 8;
    g.cls = Tensor(1, 32, 32);
    g.box = Tensor(4, 32, 32);
    g.ctr = Tensor(1, 32, 32);
    g.cls.fill(-10.0f);
    g.ctr.fill(-10.0f);
    // location (12,12) = image point (100,100)
    g.cls.at(0, 12, 12) = 10.0f;
    g.ctr.at(0, 12, 12) = 10.0f;
    g.box.at(0, 12, 12) = 25.0f;
    g.box.at(1, 12, 12) = 25.0f;
    g.box.at(2, 12, 12) = 25.0f;
    g.box.at(3, 12, 12) = 25.0f;

    FeatureGrids maps;
    maps.push_back(g);
    const auto dets = decode_detections(maps, 0.05, 1000, "im");
    REQUIRE(dets.size() == 1);
    CHECK(dets[0].box.x_min == doctest::Approx(75));
    CHECK(dets[0].box.y_min == doctest::Approx(75));
    CHECK(dets[0].box.x_max == doctest::Approx(125));
    CHECK(dets[0].box.y_max == doctest::Approx(125));
    const double s = 1.0 / (1.0 + std::exp(-10.0));
    CHECK(dets[0].score == doctest::Approx(s * s).epsilon(1e-9));
    CHECK(dets[0].image_id == "im");

    SUBCASE("all low logits decode to nothing") {
        g.cls.fill(-10.0f);
        g.ctr.fill(-10.0f);
        FeatureGrids low{g};
        CHECK(decode_detections(low, 0.05, 1000).empty());
    }

    SUBCASE("shape mismatch is rejected") {
        LevelGrids bad = g;
        bad.ctr = Tensor(1, 16, 32);
        FeatureGrids maps2{bad};
        CHECK_THROWS_AS(decode_detections(maps2, 0.05, 1000), std::invalid_argument);
    }
}

TEST_CASE("decode is monotone in the score threshold") {
    Rng rng(66);
    LevelGrids g;
    g.stride = 8;
    g.cls = Tensor(1, 16, 16);
    g.box = Tensor(4, 16, 16);
    g.ctr = Tensor(1, 16, 16);
    for (std::size_t i = 0; i < g.cls.size(); ++i) {
        g.cls.v[i] = static_cast<float>(rng.uniform(-6, 6));
        g.ctr.v[i] = static_cast<float>(rng.uniform(-6, 6));
    }
    for (std::size_t i = 0; i < g.box.size(); ++i) {
        g.box.v[i] = static_cast<float>(rng.uniform(5, 30));
    }
    FeatureGrids maps{g};
    std::size_t prev = decode_detections(maps, 0.0001, 0).size();
    for (double thresh : {0.01, 0.05, 0.2, 0.5, 0.9}) {
        const std::size_t count = decode_detections(maps, thresh, 0).size();
        CHECK(count <= prev);
        prev = count;
    }
}

TEST_CASE("encode->decode round trip recovers boxes within 1e-4 px") {
    Rng rng(77);
    int tested = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const double side = rng.uniform(24, 64);
        const double cx = rng.uniform(side / 2 + 2, 512 - side / 2 - 2);
        const double cy = rng.uniform(side / 2 + 2, 512 - side / 2 - 2);
        const BBox want{cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2};
        const EncodeResult enc = encode_targets(512, 512, {want}, {8}, 1.5);
        if (enc.skipped_boxes != 0) continue;

        FeatureGrids pred{targets_as_predictions(enc.maps[0])};
        auto dets = decode_detections(pred, 0.05, 1000);
        REQUIRE(!dets.empty());
        dets = nms(std::move(dets), 0.5);
        REQUIRE(dets.size() == 1);
        CHECK(std::abs(dets[0].box.x_min - want.x_min) < 1e-4);
        CHECK(std::abs(dets[0].box.y_min - want.y_min) < 1e-4);
        CHECK(std::abs(dets[0].box.x_max - want.x_max) < 1e-4);
        CHECK(std::abs(dets[0].box.y_max - want.y_max) < 1e-4);
        ++tested;
    }
    CHECK(tested >= 95);  // nearly every random box must actually round-trip
}

TEST_CASE("nms: duplicates, disjoint boxes, reference equivalence, order invariance") {
    SUBCASE("duplicate suppression") {
        std::vector<Detection> dets{make_det(0, 0, 10, 10, 0.9), make_det(0, 0, 10, 10, 0.8)};
        const auto kept = nms(dets, 0.5);
        REQUIRE(kept.size() == 1);
        CHECK(kept[0].score == doctest::Approx(0.9));
    }
    SUBCASE("disjoint boxes all survive") {
        std::vector<Detection> dets{make_det(0, 0, 10, 10, 0.9), make_det(20, 20, 30, 30, 0.8),
                                    make_det(40, 0, 50, 10, 0.7)};
        CHECK(nms(dets, 0.5).size() == 3);
    }
    SUBCASE("random sets match the quadratic reference and ignore input order") {
        Rng rng(88);
        for (int trial = 0; trial < 100; ++trial) {
            std::vector<Detection> dets;
            const int n = static_cast<int>(rng.uniform_int(1, 12));
            for (int i = 0; i < n; ++i) {
                const double x0 = rng.uniform(0, 80);
                const double y0 = rng.uniform(0, 80);
                dets.push_back(make_det(x0, y0, x0 + rng.uniform(5, 30), y0 + rng.uniform(5, 30),
                                        rng.uniform(0.01, 1.0)));
            }
            const double thresh = rng.uniform(0.2, 0.8);
            const auto kept = nms(dets, thresh);
            const auto want = nms_reference(dets, thresh);
            CHECK(same_boxes(kept, want));

            std::vector<Detection> shuffled = dets;
            std::reverse(shuffled.begin(), shuffled.end());
            CHECK(same_boxes(nms(shuffled, thresh), kept));

            // postcondition: no surviving pair overlaps above threshold
            for (std::size_t i = 0; i < kept.size(); ++i) {
                for (std::size_t j = i + 1; j < kept.size(); ++j) {
                    CHECK(iou(kept[i].box, kept[j].box) <= thresh + 1e-12);
                }
            }
        }
    }
    SUBCASE("threshold bounds are validated") {
        std::vector<Detection> dets{make_det(0, 0, 1, 1, 0.5)};
        CHECK_THROWS_AS(nms(dets, 0.0), std::invalid_argument);
        CHECK_THROWS_AS(nms(dets, 1.0), std::invalid_argument);
    }
}

TEST_CASE("detector_loss gradients match finite differences") {
    Rng rng(99);
    LevelGrids target;
    target.stride = 8;
    target.cls = Tensor(1, 4, 4);
    target.box = Tensor(4, 4, 4);
    target.ctr = Tensor(1, 4, 4);
    // two positives with plausible distances
    for (const int idx : {5, 10}) {
        target.cls.v[idx] = 1.0f;
        target.box.at(0, idx / 4, idx % 4) = 12.0f;
        target.box.at(1, idx / 4, idx % 4) = 9.0f;
        target.box.at(2, idx / 4, idx % 4) = 15.0f;
        target.box.at(3, idx / 4, idx % 4) = 11.0f;
        target.ctr.v[idx] = 0.7f;
    }

    LevelGrids pred;
    pred.stride = 8;
    pred.cls = Tensor(1, 4, 4);
    pred.box = Tensor(4, 4, 4);
    pred.ctr = Tensor(1, 4, 4);
    for (std::size_t i = 0; i < pred.cls.size(); ++i) {
        pred.cls.v[i] = static_cast<float>(rng.uniform(-2, 2));
        pred.ctr.v[i] = static_cast<float>(rng.uniform(-2, 2));
    }
    for (std::size_t i = 0; i < pred.box.size(); ++i) {
        pred.box.v[i] = static_cast<float>(rng.uniform(6, 20));
    }

    Tensor dcls, dbox, dctr;
    const DetectorLossTerms terms = detector_loss(pred, target, &dcls, &dbox, &dctr);
    CHECK(terms.positives == 2);
    CHECK(std::isfinite(terms.total()));

    const double eps = 1e-3;
    auto loss_at = [&](Tensor LevelGrids::*field, std::size_t i, float delta) {
        LevelGrids p2 = pred;
        (p2.*field).v[i] += delta;
        return detector_loss(p2, target, nullptr, nullptr, nullptr).total();
    };
    for (std::size_t i = 0; i < pred.cls.size(); ++i) {
        const double fd = (loss_at(&LevelGrids::cls, i, static_cast<float>(eps)) -
                           loss_at(&LevelGrids::cls, i, -static_cast<float>(eps))) /
                          (2 * eps);
        CHECK(dcls.v[i] == doctest::Approx(fd).epsilon(2e-2).scale(1e-3));
    }
    for (std::size_t i = 0; i < pred.box.size(); ++i) {
        const double fd = (loss_at(&LevelGrids::box, i, static_cast<float>(eps)) -
                           loss_at(&LevelGrids::box, i, -static_cast<float>(eps))) /
                          (2 * eps);
        CHECK(dbox.v[i] == doctest::Approx(fd).epsilon(2e-2).scale(1e-3));
    }
    for (std::size_t i = 0; i < pred.ctr.size(); ++i) {
        const double fd = (loss_at(&LevelGrids::ctr, i, static_cast<float>(eps)) -
                           loss_at(&LevelGrids::ctr, i, -static_cast<float>(eps))) /
                          (2 * eps);
        CHECK(dctr.v[i] == doctest::Approx(fd).epsilon(2e-2).scale(1e-3));
    }
}

TEST_CASE("detector model: forward shapes, determinism, checkpoint round trip") {
    DetectorConfig cfg;
    cfg.channels1 = 4;
    cfg.channels2 = 6;
    cfg.channels3 = 8;
    cfg.seed = 5;
    DetectorModel model(cfg);

    Tensor x(3, 64, 64);
    Rng rng(123);
    for (float& v : x.v) {
        v = static_cast<float>(rng.uniform(-1, 1));
    }
    const FeatureGrids a = model.forward(x);
    const FeatureGrids b = model.forward(x);
    REQUIRE(a.size() == 1);
    CHECK(a[0].cls.h == 8);
    CHECK(a[0].cls.w == 8);
    CHECK(a[0].box.c == 4);
    CHECK(a[0].cls.v == b[0].cls.v);  // evaluation forward is pure
    for (float d : a[0].box.v) {
        CHECK(d > 0.0f);  // distances are positive by construction
    }

    const auto dir = std::filesystem::temp_directory_path() / "mito_det_ckpt";
    std::filesystem::remove_all(dir);
    model.save(dir.string());
    DetectorModel loaded = DetectorModel::load(dir.string());
    const FeatureGrids c = loaded.forward(x);
    CHECK(c[0].cls.v == a[0].cls.v);
    CHECK(c[0].box.v == a[0].box.v);

    // corrupting params.bin must be caught by the checksum
    {
        std::fstream f(dir / "params.bin",
                       std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        const char junk = 0x5a;
        f.write(&junk, 1);
    }
    CHECK_THROWS(DetectorModel::load(dir.string()));
    std::filesystem::remove_all(dir);
}

TEST_CASE("train_detector: zero epochs is a no-op; empty training set rejected") {
    synth::SceneConfig scfg;
    scfg.width = 128;
    scfg.height = 128;
    scfg.mitoses_min = 1;
    scfg.mitoses_max = 2;
    scfg.impostors_min = 0;
    scfg.impostors_max = 1;
    scfg.smudges_min = 0;
    scfg.smudges_max = 1;
    scfg.min_separation = 40;
    const synth::SynthDataset ds = synth::make_dataset(scfg, 2, 31);

    det::ImageCache cache;
    for (const auto& s : ds.scenes) {
        cache.put(s.record.image_id, s.image);
    }
    const AnnotationSet set = ds.annotation_set();

    DetectorTrainConfig cfg;
    cfg.epochs = 0;
    cfg.model.channels1 = 4;
    cfg.model.channels2 = 4;
    cfg.model.channels3 = 4;
    cfg.crop = 64;
    const TrainedDetector out = train_detector(set, set, cfg, &cache);
    CHECK(out.log.empty());

    // untouched parameters: identical to a freshly initialized model
    DetectorModel fresh(cfg.model);
    CHECK(nn::dump_params(fresh.params()) == nn::dump_params(out.model.params()));

    AnnotationSet empty;
    CHECK_THROWS_AS(train_detector(empty, set, cfg, &cache), std::invalid_argument);
}

#ifndef MITO_SKIP_SLOW_TESTS
TEST_CASE("train_detector overfits a tiny synthetic batch") {
    synth::SceneConfig scfg;
    scfg.width = 128;
    scfg.height = 128;
    scfg.mitoses_min = 2;
    scfg.mitoses_max = 3;
    scfg.impostors_min = 0;
    scfg.impostors_max = 0;
    scfg.smudges_min = 0;
    scfg.smudges_max = 0;
    scfg.min_separation = 45;
    const synth::SynthDataset ds = synth::make_dataset(scfg, 8, 77);
    det::ImageCache cache;
    for (const auto& s : ds.scenes) {
        cache.put(s.record.image_id, s.image);
    }
    const AnnotationSet set = ds.annotation_set();

    DetectorTrainConfig cfg;
    cfg.epochs = 100;  // 8 images, batch 4 -> 200 steps
    cfg.batch_size = 4;
    cfg.crop = 128;
    cfg.lr = 2e-3;
    cfg.model.channels1 = 6;
    cfg.model.channels2 = 8;
    cfg.model.channels3 = 12;
    cfg.hflip = false;
    const TrainedDetector out = train_detector(set, set, cfg, &cache);
    REQUIRE(out.log.size() == 100);
    const double first = out.log.front().train_loss;
    const double last = out.log.back().train_loss;
    CHECK(last < first * 0.1);  // >= 90% drop on the overfit batch
    CHECK(out.log.back().val_metric > 0.9);
}
#endif

#include <cmath>
#include <filesystem>
#include <memory>

#include <doctest.h>

#include "mito/classifier.hpp"
#include "mito/detector.hpp"
#include "mito/nn.hpp"
#include "mito/rng.hpp"

using namespace mito;
using namespace mito::cls;

namespace {

/// Naive direct evaluation of the loss definition, in extended precision so
/// the oracle itself does not suffer the cancellation the stable form
/// avoids. Test-side, independent of the library path.
double bce_naive(const LogitBatch& b) {
    long double total = 0.0L;
    for (std::size_t i = 0; i < b.z.size(); ++i) {
        const long double p = 1.0L / (1.0L + expl(-static_cast<long double>(b.z[i])));
        const long double y = b.y[i];
        total += -(y * logl(p) + (1.0L - y) * logl(1.0L - p));
    }
    return static_cast<double>(total / static_cast<long double>(b.z.size()));
}

/// Stable per-sample term in extended precision, for finite differences.
long double bce_term_ref(long double z, long double y) {
    return fmaxl(z, 0.0L) - z * y + log1pl(expl(-fabsl(z)));
}

struct StubScorer : PatchScorer {
    double value;
    explicit StubScorer(double v) : value(v) {}
    double score(const Image&) const override { return value; }
};

EnsembleSpec stub_ensemble(const std::vector<double>& probs) {
    EnsembleSpec spec;
    for (double p : probs) {
        spec.members.push_back(std::make_shared<StubScorer>(p));
    }
    return spec;
}

Image uniform_patch(std::uint8_t r, std::uint8_t g, std::uint8_t b, int side = 224) {
    Image img(side, side);
    for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
            std::uint8_t* p = img.px(x, y);
            p[0] = r;
            p[1] = g;
            p[2] = b;
        }
    }
    return img;
}

std::vector<PatchSample> separable_patches(int n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<PatchSample> out;
    for (int i = 0; i < n; ++i) {
        const bool positive = i % 2 == 0;
        PatchSample s;
        s.pixels = Image(50, 50);
        for (std::uint8_t& b : s.pixels.data) {
            const double base = positive ? 190.0 : 70.0;
            b = static_cast<std::uint8_t>(
                std::clamp(base + rng.uniform(-25.0, 25.0), 0.0, 255.0));
        }
        s.label = positive ? 1 : 0;
        s.source_image_id = "img" + std::to_string(i);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("sigmoid: exact points, stability, complement identity") {
    CHECK(sigmoid(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(sigmoid(-1000.0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
    CHECK(sigmoid(1000.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::isfinite(sigmoid(-1e6)));
    CHECK(std::isfinite(sigmoid(1e6)));
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const double z = rng.uniform(-40, 40);
        CHECK(sigmoid(z) + sigmoid(-z) == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK_THROWS_AS(sigmoid(std::nan("")), std::invalid_argument);
    CHECK_THROWS_AS(sigmoid(INFINITY), std::invalid_argument);
}

TEST_CASE("bce_with_logits: pinned values") {
    CHECK(bce_with_logits({{0.0}, {1.0}}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // stable form at z = -1000, y = 1: max(z,0) - z*y + log1p(exp(-|z|)) = 1000
    const double big = bce_with_logits({{-1000.0}, {1.0}});
    CHECK(std::isfinite(big));
    CHECK(big == doctest::Approx(1000.0).epsilon(1e-12));
    // two-sample hand evaluation
    const double want = (std::log1p(std::exp(-3.0)) + std::log1p(std::exp(-2.0))) / 2.0;
    CHECK(bce_with_logits({{3.0, -2.0}, {1.0, 0.0}}) == doctest::Approx(want).epsilon(1e-12));
    CHECK(want == doctest::Approx(0.087758).epsilon(1e-5));

    CHECK_THROWS_AS(bce_with_logits({{1.0}, {0.5}}), std::invalid_argument);
    CHECK_THROWS_AS(bce_with_logits({{}, {}}), std::invalid_argument);
    CHECK_THROWS_AS(bce_with_logits({{1.0, 2.0}, {1.0}}), std::invalid_argument);
}

TEST_CASE("bce_with_logits equals the naive form within 1e-9 for |z|<=20") {
    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const int n = static_cast<int>(rng.uniform_int(1, 16));
        LogitBatch b;
        for (int j = 0; j < n; ++j) {
            b.z.push_back(rng.uniform(-20, 20));
            b.y.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
        }
        CHECK(std::abs(bce_with_logits(b) - bce_naive(b)) < 1e-9);
    }
    // finiteness at extreme logits
    CHECK(std::isfinite(bce_with_logits({{1e6}, {0.0}})));
    CHECK(std::isfinite(bce_with_logits({{-1e6}, {0.0}})));
    CHECK(std::isfinite(bce_with_logits({{1e6, -1e6}, {1.0, 0.0}})));
}

TEST_CASE("bce gradient matches central finite differences within 1e-5 relative") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 8));
        LogitBatch b;
        for (int j = 0; j < n; ++j) {
            b.z.push_back(rng.uniform(-10, 10));
            b.y.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
        }
        const std::vector<double> g = bce_with_logits_grad(b);
        const long double eps = 1e-6L;
        for (int j = 0; j < n; ++j) {
            // difference only the term that depends on z_j; the other batch
            // terms cancel exactly and cannot poison the quotient
            const long double up = bce_term_ref(b.z[j] + eps, b.y[j]);
            const long double dn = bce_term_ref(b.z[j] - eps, b.y[j]);
            const double fd = static_cast<double>((up - dn) / (2 * eps)) / n;
            CHECK(std::abs(g[j] - fd) / std::abs(fd) < 1e-5);
        }
    }
}

TEST_CASE("loss is driven down by saturating the correct side") {
    // y=1: larger z must decrease the loss; y=0 the reverse
    double prev = bce_with_logits({{-5.0}, {1.0}});
    for (double z : {-2.0, 0.0, 2.0, 5.0, 20.0}) {
        const double cur = bce_with_logits({{z}, {1.0}});
        CHECK(cur < prev);
        prev = cur;
    }
    prev = bce_with_logits({{5.0}, {0.0}});
    for (double z : {2.0, 0.0, -2.0, -5.0, -20.0}) {
        const double cur = bce_with_logits({{z}, {0.0}});
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("classify_patch: zero-parameter model gives 0.5; shape is enforced") {
    ClassifierConfig cfg;
    cfg.channels1 = 2;
    cfg.channels2 = 2;
    cfg.channels3 = 2;
    PatchClassifier model(cfg);
    // zero every parameter: logit must be exactly 0
    std::vector<nn::ParamRef> params = model.params();
    for (nn::ParamRef& p : params) {
        std::fill(p.value->begin(), p.value->end(), 0.0f);
    }
    const Image patch = uniform_patch(120, 90, 160);
    CHECK(classify_patch(model, patch) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(model.classify(patch) == model.classify(patch));  // deterministic

    CHECK_THROWS_AS(model.classify(uniform_patch(1, 2, 3, 100)), std::invalid_argument);
}

TEST_CASE("classifier checkpoint round trip and kind check") {
    ClassifierConfig cfg;
    cfg.channels1 = 3;
    cfg.channels2 = 3;
    cfg.channels3 = 4;
    cfg.mean = {0.6f, 0.5f, 0.55f};
    cfg.stddev = {0.2f, 0.21f, 0.19f};
    cfg.seed = 17;
    PatchClassifier model(cfg);
    const Image patch = uniform_patch(44, 99, 180);
    const double p1 = model.classify(patch);

    const auto dir = std::filesystem::temp_directory_path() / "mito_cls_ckpt";
    std::filesystem::remove_all(dir);
    model.save(dir.string());
    const PatchClassifier loaded = PatchClassifier::load(dir.string());
    CHECK(loaded.classify(patch) == doctest::Approx(p1).epsilon(1e-15));
    CHECK(loaded.config().mean[0] == doctest::Approx(0.6));

    // a detector loader must refuse this checkpoint
    CHECK_THROWS(det::DetectorModel::load(dir.string()));
    std::filesystem::remove_all(dir);
}

TEST_CASE("ensemble_predict: means, identity, permutation invariance, bounds") {
    const Image patch = uniform_patch(10, 20, 30);
    CHECK(ensemble_predict(stub_ensemble({0.2, 0.8}), patch) == doctest::Approx(0.5));
    CHECK(ensemble_predict(stub_ensemble({0.1, 0.2, 0.9}), patch) == doctest::Approx(0.4));
    CHECK(ensemble_predict(stub_ensemble({0.37}), patch) == doctest::Approx(0.37));

    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = static_cast<int>(rng.uniform_int(1, 8));
        std::vector<double> probs;
        double sum = 0.0, lo = 1.0, hi = 0.0;
        for (int i = 0; i < n; ++i) {
            probs.push_back(rng.uniform());
            sum += probs.back();
            lo = std::min(lo, probs.back());
            hi = std::max(hi, probs.back());
        }
        const double mean = ensemble_predict(stub_ensemble(probs), patch);
        CHECK(std::abs(mean - sum / n) < 1e-12);
        CHECK(mean >= lo - 1e-12);
        CHECK(mean <= hi + 1e-12);
        std::vector<double> rev(probs.rbegin(), probs.rend());
        CHECK(ensemble_predict(stub_ensemble(rev), patch) == doctest::Approx(mean).epsilon(1e-15));
    }

    CHECK_THROWS_AS(ensemble_predict(EnsembleSpec{}, patch), std::invalid_argument);
}

TEST_CASE("train profiles carry the published recipes") {
    const auto refine = ClassifierTrainConfig::profile_defaults(TaskProfile::RefineCls);
    CHECK(refine.epochs == 100);
    CHECK(refine.batch_size == 16);
    CHECK(refine.optimizer == OptimizerKind::Sgd);
    const auto atyp = ClassifierTrainConfig::profile_defaults(TaskProfile::AtypicalCls);
    CHECK(atyp.epochs == 30);
    CHECK(atyp.batch_size == 32);
    CHECK(atyp.optimizer == OptimizerKind::Adam);
    CHECK(atyp.lr == doctest::Approx(3e-5));
    CHECK(atyp.cosine_schedule);
    // cosine midpoint from the recipe: lr0=3e-5, T=30, t=15 -> 1.5e-5
    CHECK(nn::cosine_lr(atyp.lr, 15, 30) == doctest::Approx(1.5e-5).epsilon(1e-12));
}

TEST_CASE("train_classifier: no-op epochs, single-class rejection") {
    const std::vector<PatchSample> patches = separable_patches(8, 21);
    ClassifierTrainConfig cfg = ClassifierTrainConfig::profile_defaults(TaskProfile::AtypicalCls);
    cfg.epochs = 0;
    cfg.model.channels1 = 2;
    cfg.model.channels2 = 2;
    cfg.model.channels3 = 2;
    const TrainedClassifier out = train_classifier(patches, patches, cfg);
    CHECK(out.log.empty());
    PatchClassifier fresh(cfg.model);
    CHECK(nn::dump_params(fresh.params()) ==
          nn::dump_params(const_cast<PatchClassifier&>(out.model).params()));

    std::vector<PatchSample> single;
    for (const PatchSample& s : patches) {
        if (*s.label == 1) single.push_back(s);
    }
    CHECK_THROWS_AS(train_classifier(single, patches, cfg), std::invalid_argument);
    CHECK_THROWS_AS(train_classifier({}, patches, cfg), std::invalid_argument);
}

#ifndef MITO_SKIP_SLOW_TESTS
TEST_CASE("train_classifier separates bright from dark patches") {
    const std::vector<PatchSample> train = separable_patches(24, 33);
    const std::vector<PatchSample> val = separable_patches(12, 34);
    ClassifierTrainConfig cfg = ClassifierTrainConfig::profile_defaults(TaskProfile::AtypicalCls);
    cfg.epochs = 12;
    cfg.batch_size = 8;
    cfg.lr = 5e-3;
    cfg.cosine_schedule = false;
    cfg.model.channels1 = 3;
    cfg.model.channels2 = 4;
    cfg.model.channels3 = 4;
    const TrainedClassifier out = train_classifier(train, val, cfg);
    REQUIRE(out.log.size() == 12);
    CHECK(out.log.back().val_balanced_accuracy >= 0.95);

    // overfit oracle: a confidently learned positive scores > 0.99
    const Image pos224 = resize_to_input(train[0]);
    CHECK(out.model.classify(pos224) > 0.99);
}
#endif

#include "mito/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mito/eval.hpp"

namespace mito::pipe {

void PipelineConfig::validate() const {
    if (!(tau_d > 0.0 && tau_d < 1.0) || !(tau_c > 0.0 && tau_c < 1.0)) {
        throw std::invalid_argument("pipeline: thresholds must lie in (0,1)");
    }
    if (tile_size <= 0 || tile_overlap < 0 || tile_overlap >= tile_size) {
        throw std::invalid_argument("pipeline: overlap must satisfy 0 <= overlap < tile_size");
    }
    if (patch_side <= 0 || dedupe_radius < 0.0) {
        throw std::invalid_argument("pipeline: bad patch_side/dedupe_radius");
    }
}

namespace {

std::vector<int> tile_starts(int image_dim, int tile, int overlap) {
    if (image_dim <= tile) {
        return {0};
    }
    const int stride = tile - overlap;
    std::vector<int> starts;
    for (int s = 0; s + tile < image_dim; s += stride) {
        starts.push_back(s);
    }
    starts.push_back(image_dim - tile);
    return starts;
}

bool det_order(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
    if (a.box.y_min != b.box.y_min) return a.box.y_min < b.box.y_min;
    if (a.box.x_max != b.box.x_max) return a.box.x_max < b.box.x_max;
    return a.box.y_max < b.box.y_max;
}

/// Stage 1 over all tiles: decode + per-tile NMS, shift to image frame,
/// filter by tau_d, dedupe across tiles on detector scores.
std::vector<Detection> detector_candidates(const Image& image, const det::DetectorModel& detector,
                                           const PipelineConfig& cfg,
                                           const std::string& image_id) {
    std::vector<Detection> all;
    for (const Tile& tile : tile_image(image, cfg.tile_size, cfg.tile_overlap)) {
        std::vector<Detection> dets =
            det::detect(detector, tile.pixels, detector.config().decoder, image_id);
        for (Detection& d : dets) {
            if (d.score < cfg.tau_d) {
                continue;
            }
            d.box.x_min += tile.offset_x;
            d.box.x_max += tile.offset_x;
            d.box.y_min += tile.offset_y;
            d.box.y_max += tile.offset_y;
            all.push_back(std::move(d));
        }
    }
    return dedupe_detections(std::move(all), cfg.dedupe_radius);
}

}  // namespace

std::vector<Detection> dedupe_detections(std::vector<Detection> dets, double radius) {
    std::sort(dets.begin(), dets.end(), det_order);
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        bool dup = false;
        for (const Detection& k : kept) {
            const double dx = d.box.center_x() - k.box.center_x();
            const double dy = d.box.center_y() - k.box.center_y();
            if (std::hypot(dx, dy) <= radius) {
                dup = true;
                break;
            }
        }
        if (!dup) {
            kept.push_back(d);
        }
    }
    return kept;
}

std::vector<Tile> tile_image(const Image& image, int tile_size, int overlap) {
    if (tile_size <= 0 || overlap < 0 || overlap >= tile_size) {
        throw std::invalid_argument("tile_image: need 0 <= overlap < tile_size");
    }
    if (image.empty()) {
        throw std::invalid_argument("tile_image: empty image");
    }
    std::vector<Tile> tiles;
    for (int y0 : tile_starts(image.height, tile_size, overlap)) {
        for (int x0 : tile_starts(image.width, tile_size, overlap)) {
            Tile t;
            t.offset_x = x0;
            t.offset_y = y0;
            t.pixels = crop_rect(image, x0, y0, std::min(tile_size, image.width),
                                 std::min(tile_size, image.height));
            tiles.push_back(std::move(t));
        }
    }
    return tiles;
}

std::vector<Detection> run_detector_only(const Image& image, const det::DetectorModel& detector,
                                         const PipelineConfig& cfg,
                                         const std::string& image_id) {
    cfg.validate();
    return detector_candidates(image, detector, cfg, image_id);
}

namespace {

/// Stage 2 over prepared candidates: confirm or drop each one.
std::vector<Detection> classify_candidates(const Image& image,
                                           const std::vector<Detection>& candidates,
                                           const cls::EnsembleSpec& classifier,
                                           const PipelineConfig& cfg) {
    std::vector<Detection> confirmed;
    for (const Detection& cand : candidates) {
        // crop from the full-resolution source at the detection center so
        // tile borders never truncate the patch
        const double cx = std::clamp(cand.box.center_x(), 0.0, static_cast<double>(image.width));
        const double cy = std::clamp(cand.box.center_y(), 0.0, static_cast<double>(image.height));
        const Image patch = crop_centered(image, cx, cy, cfg.patch_side);
        double prob = 0.0;
        try {
            prob = cls::ensemble_predict(classifier,
                                         resize_bilinear(patch, cls::kInputSide, cls::kInputSide));
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("run_two_stage: classifier failed on candidate at (") +
                                     std::to_string(cx) + ", " + std::to_string(cy) + "): " +
                                     e.what());
        }
        if (prob >= cfg.tau_c) {
            Detection d = cand;
            d.score = prob;
            d.stage = Stage::Pipeline;
            confirmed.push_back(std::move(d));
        }
    }
    return confirmed;
}

}  // namespace

std::vector<Detection> run_two_stage(const Image& image, const det::DetectorModel& detector,
                                     const cls::EnsembleSpec& classifier,
                                     const PipelineConfig& cfg, const std::string& image_id) {
    cfg.validate();
    if (classifier.members.empty()) {
        throw std::invalid_argument("run_two_stage: classifier ensemble has no members");
    }
    const std::vector<Detection> candidates = detector_candidates(image, detector, cfg, image_id);
    return classify_candidates(image, candidates, classifier, cfg);
}

CompareReport filter_pipeline_f1_gain(const AnnotationSet& val, const det::DetectorModel& detector,
                                      const cls::EnsembleSpec& classifier,
                                      const PipelineConfig& cfg, double match_radius,
                                      const det::ImageCache* cache) {
    if (val.images.empty()) {
        throw std::invalid_argument("filter_pipeline_f1_gain: empty validation set");
    }
    cfg.validate();

    std::vector<Detection> det_only, two_stage;
    std::vector<PointAnnotation> gts;
    for (const ImageRecord& rec : val.images) {
        const Image* cached = cache != nullptr ? cache->find(rec.image_id) : nullptr;
        const Image pixels = cached != nullptr ? *cached : load_image(rec.path);
        std::vector<Detection> d1 = detector_candidates(pixels, detector, cfg, rec.image_id);
        std::vector<Detection> d2 = classify_candidates(pixels, d1, classifier, cfg);
        det_only.insert(det_only.end(), d1.begin(), d1.end());
        two_stage.insert(two_stage.end(), d2.begin(), d2.end());
    }
    for (const PointAnnotation& a : val.annotations) {
        if (a.category == Category::Mitotic) {
            gts.push_back(a);
        }
    }

    auto stage_metrics = [&](const std::vector<Detection>& dets) {
        StageMetrics m;
        const eval::MatchResult r = eval::match_all(dets, gts, match_radius);
        m.tp = r.tp;
        m.fp = r.fp;
        m.fn = r.fn;
        m.f1 = eval::f1_from_counts(r.tp, r.fp, r.fn);
        m.precision = eval::precision_from_counts(r.tp, r.fp);
        m.recall = eval::recall_from_counts(r.tp, r.fn);
        m.ap = gts.empty() ? 0.0 : eval::average_precision(dets, gts, match_radius);
        return m;
    };

    CompareReport report;
    report.detector_only = stage_metrics(det_only);
    report.two_stage = stage_metrics(two_stage);
    return report;
}

}  // namespace mito::pipe

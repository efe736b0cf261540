#pragma once

#include <string>
#include <vector>

#include "mito/classifier.hpp"
#include "mito/dataset.hpp"
#include "mito/detector.hpp"
#include "mito/image.hpp"
#include "mito/types.hpp"

namespace mito::pipe {

struct PipelineConfig {
    double tau_d = 0.5;        // detector score threshold for candidates
    double tau_c = 0.5;        // classifier confirmation threshold
    int tile_size = 512;
    int tile_overlap = 64;
    double dedupe_radius = 7.5;
    int patch_side = 50;

    void validate() const;
};

struct Tile {
    Image pixels;
    int offset_x = 0;
    int offset_y = 0;
};

/// Cover the image with tile_size tiles at stride tile_size - overlap; the
/// last row/column is shifted inward so tiles never leave the image. Images
/// smaller than the tile yield a single whole-image tile.
std::vector<Tile> tile_image(const Image& image, int tile_size, int overlap);

/// Cross-tile duplicate removal: detections whose centers lie within
/// `radius` of a kept higher-ranked one collapse onto it. Rank is score
/// descending with box-corner tie-breaks, so the result does not depend on
/// tile enumeration order.
std::vector<Detection> dedupe_detections(std::vector<Detection> dets, double radius);

/// Stage 1 only: tile, detect, merge to image frame, dedupe across tiles.
/// Candidates below tau_d are dropped. Detections keep stage=detector.
std::vector<Detection> run_detector_only(const Image& image, const det::DetectorModel& detector,
                                         const PipelineConfig& cfg,
                                         const std::string& image_id = std::string());

/// Full cascade: detector candidates above tau_d are deduped, then each one
/// is confirmed by the classifier on a patch_side center crop resized to
/// 224. Kept detections carry stage=pipeline and score = classifier
/// probability. Dedupe happens before classification (on detector scores),
/// which makes the constant-1-classifier case coincide exactly with
/// run_detector_only.
std::vector<Detection> run_two_stage(const Image& image, const det::DetectorModel& detector,
                                     const cls::EnsembleSpec& classifier,
                                     const PipelineConfig& cfg,
                                     const std::string& image_id = std::string());

/// Detector-only vs. two-stage comparison over a labeled validation set.
struct StageMetrics {
    double f1 = 0.0;
    double ap = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    int tp = 0, fp = 0, fn = 0;
};

struct CompareReport {
    StageMetrics detector_only;
    StageMetrics two_stage;
};

CompareReport filter_pipeline_f1_gain(const AnnotationSet& val, const det::DetectorModel& detector,
                                      const cls::EnsembleSpec& classifier,
                                      const PipelineConfig& cfg, double match_radius,
                                      const det::ImageCache* cache = nullptr);

}  // namespace mito::pipe

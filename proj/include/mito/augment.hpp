#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mito/dataset.hpp"
#include "mito/rng.hpp"

namespace mito {

enum class AugTask { Detection, RefineCls, AtypicalCls };

/// Per-task augmentation recipe. The default transform list for each task
/// follows the training recipes the pipeline was tuned with:
///   detection    : perspective, color_jitter, defocus_blur
///   refine_cls   : random_resized_crop, horizontal_flip, normalization
///   atypical_cls : random_crop, flip, rotation, color_jitter, defocus_blur,
///                  elastic, grid_distortion
/// "normalization" is a marker consumed at tensor-conversion time (dataset
/// channel stats); it does not touch the 8-bit patch buffer.
struct AugmentationConfig {
    AugTask task = AugTask::RefineCls;
    std::vector<std::string> transforms;
    std::uint64_t seed = 0;

    static AugmentationConfig defaults(AugTask task, std::uint64_t seed = 0);
    bool has(const std::string& name) const;
};

/// All transform names augment() accepts; unknown names raise
/// std::invalid_argument.
const std::vector<std::string>& known_transforms();

/// Apply the configured transforms to one patch. Deterministic given
/// (cfg.seed, sample_index); the per-sample RNG stream is derived with
/// Rng::mix so parallel workers can process samples in any order. Shape and
/// label are preserved.
PatchSample augment(const PatchSample& p, const AugmentationConfig& cfg,
                    std::uint64_t sample_index);

/// Individual transforms (exposed for tests). Each preserves image size.
Image flip_horizontal(const Image& img);
Image rotate_bilinear(const Image& img, double degrees);
Image color_jitter(const Image& img, double brightness, double contrast, double saturation,
                   double hue_degrees);
Image defocus_blur(const Image& img, int radius);
Image perspective_warp(const Image& img, const double src_quad[8], const double dst_quad[8]);
Image elastic_transform(const Image& img, double alpha_px, int grid, Rng& rng);
Image grid_distortion(const Image& img, int cells, double limit, Rng& rng);

}  // namespace mito

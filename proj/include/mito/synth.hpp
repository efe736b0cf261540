#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mito/dataset.hpp"
#include "mito/image.hpp"
#include "mito/types.hpp"

namespace mito::synth {

/// Synthetic stained-tissue scenes for desk-scale experiments: dark
/// basophilic blobs play mitotic figures, visually similar blobs with a
/// small bright core play impostors, plus faint smudge distractors. Object
/// centers keep min_separation so distance matching at the usual radius is
/// unambiguous. Mitoses are randomly tagged normal/atypical; atypical ones
/// are drawn elongated, which gives the subtype task a learnable signal.
struct SceneConfig {
    int width = 512;
    int height = 512;
    int mitoses_min = 3;
    int mitoses_max = 7;
    int impostors_min = 3;
    int impostors_max = 7;
    int smudges_min = 2;
    int smudges_max = 5;
    double min_separation = 70.0;
    double atypical_fraction = 0.35;
    double blob_sigma = 7.0;      // base Gaussian radius of blobs
    double core_radius = 2.0;     // impostor bright-core radius
    double hue_gap = 18.0;        // impostor hue offset, degrees
    double noise_sigma = 5.0;     // per-pixel additive noise
};

struct SynthScene {
    Image image;
    ImageRecord record;
    std::vector<PointAnnotation> annotations;
};

SynthScene make_scene(const SceneConfig& cfg, const std::string& image_id,
                      std::uint64_t seed);

/// n scenes with ids scene_0000...; deterministic in seed.
struct SynthDataset {
    std::vector<SynthScene> scenes;

    AnnotationSet annotation_set() const;
};

SynthDataset make_dataset(const SceneConfig& cfg, int n_images, std::uint64_t seed);

/// Write images (PNG) plus the annotation JSON to a directory layout the
/// CLI can consume: out/images/<id>.png, out/annotations.json.
void write_dataset(const SynthDataset& ds, const std::string& out_dir);

}  // namespace mito::synth

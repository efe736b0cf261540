#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mito/image.hpp"
#include "mito/types.hpp"

namespace mito {

/// Raised for malformed input files; carries enough context to name the
/// offending record.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AnnotationSet {
    std::vector<ImageRecord> images;
    std::vector<PointAnnotation> annotations;

    const ImageRecord* find_image(const std::string& image_id) const;
};

/// Fractions must be in (0,1) and sum to 1 within 1e-9. Splits are by image;
/// stratify_by = DomainTag balances each tumor-type stratum separately.
struct SplitSpec {
    std::vector<double> ratios;
    std::uint64_t seed = 0;
    enum class Stratify { None, Image, DomainTag } stratify_by = Stratify::None;
};

/// Fixed-size crop centered on an annotation or detection candidate.
struct PatchSample {
    Image pixels;
    double center_x = 0.0;
    double center_y = 0.0;
    std::optional<int> label;  // 0 or 1
    std::string source_image_id;
};

/// Parse the annotation JSON (see README for the schema). Category strings
/// are mapped bit-exactly: "mitotic figure" -> mitotic, "hard negative" ->
/// impostor. Violations report the offending record index.
AnnotationSet parse_annotations(const std::string& path);
AnnotationSet parse_annotations_text(const std::string& json_text);
void save_annotations(const AnnotationSet& set, const std::string& path);
std::string annotations_to_json(const AnnotationSet& set);

/// Partition images (and their annotations) by SplitSpec. Deterministic for
/// a fixed seed; sizes match ratios within one image per split.
std::vector<AnnotationSet> split_dataset(const AnnotationSet& set, const SplitSpec& spec);

/// k-fold partition by image: fold i is (train = rest, val = fold i).
std::vector<std::pair<AnnotationSet, AnnotationSet>> kfold_split(const AnnotationSet& set,
                                                                 int k, std::uint64_t seed);

/// Helper shared by split_dataset and the CLI: deterministic quota sizes for
/// n items under the given ratios (floor + largest-remainder).
std::vector<std::size_t> split_quotas(std::size_t n, const std::vector<double>& ratios);

/// extract_patch per the dataset contract: side x side, edge-replicated
/// borders, center pixel = source pixel at (round(x), round(y)).
PatchSample extract_patch(const ImageRecord& rec, const Image& pixels, double x, double y,
                          int side);

/// Classifier input: bilinear corner-aligned resize of a patch.
Image resize_to_input(const PatchSample& p, int side = 224);

/// On-disk labeled patch dataset: PNG files plus index.json.
struct PatchIndexEntry {
    std::string file;
    int label = 0;
    std::string source_image_id;
    double x = 0.0;
    double y = 0.0;
};

struct PatchDataset {
    std::vector<PatchIndexEntry> entries;
    std::string root;  // directory containing index.json

    std::vector<PatchSample> load_samples() const;
};

void write_patch_dataset(const std::vector<PatchSample>& samples, const std::string& out_dir);
PatchDataset open_patch_dataset(const std::string& dir);

}  // namespace mito

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mito/dataset.hpp"
#include "mito/image.hpp"
#include "mito/nn.hpp"
#include "mito/tensor.hpp"
#include "mito/types.hpp"

namespace mito::det {

/// One feature level of detector grids. `box` holds per-location distances
/// to the four box sides in pixels (l,t,r,b as channels 0..3); cls and ctr
/// hold raw logits when produced by a model and {0,1} / [0,1] targets when
/// produced by encode_targets.
struct LevelGrids {
    int stride = 8;
    Tensor cls;  // (1, gh, gw)
    Tensor box;  // (4, gh, gw)
    Tensor ctr;  // (1, gh, gw)
};

using FeatureGrids = std::vector<LevelGrids>;

/// Grid location (i,j) at stride s sits at image point ((j+0.5)s, (i+0.5)s).
inline double grid_x(int j, int stride) { return (j + 0.5) * stride; }
inline double grid_y(int i, int stride) { return (i + 0.5) * stride; }
inline int grid_dim(int image_dim, int stride) {
    return (image_dim + stride - 1) / stride;
}

struct EncodeResult {
    FeatureGrids maps;
    int skipped_boxes = 0;  // boxes that produced no positive location
};

/// FCOS-style target assignment. A location is positive for a box when it
/// lies inside the box and within center_radius*stride of the box center;
/// overlapping claims go to the smallest box. With several strides, a box
/// is routed to the level whose size range contains max(l,t,r,b). The
/// centerness target is sqrt((min(l,r)/max(l,r))*(min(t,b)/max(t,b))).
EncodeResult encode_targets(int image_w, int image_h, const std::vector<BBox>& boxes,
                            const std::vector<int>& strides, double center_radius);

/// Candidate extraction: score = sigmoid(cls)*sigmoid(ctr); keep locations
/// with score >= score_thresh, box (x-l, y-t, x+r, y+b), at most
/// pre_nms_topk best candidates. cls/ctr grids are logits here.
std::vector<Detection> decode_detections(const FeatureGrids& maps, double score_thresh,
                                         int pre_nms_topk,
                                         const std::string& image_id = std::string());

/// Greedy NMS: keep by descending score (ties by box corners lexicographic);
/// drop any detection with IoU > iou_thresh against a kept one. Output is
/// order-invariant in the input.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh);

struct DecoderConfig {
    double score_thresh = 0.05;
    int pre_nms_topk = 1000;
    double nms_iou = 0.5;
    int max_detections = 100;
};

/// Reference detector: a small convolutional trunk at stride 8 with 1x1
/// cls/box/ctr heads. The box head output is exp(raw)*stride, so decoded
/// grids always carry positive pixel distances.
struct DetectorConfig {
    int channels1 = 8;
    int channels2 = 16;
    int channels3 = 32;
    int stride = 8;
    double center_radius = 1.5;
    DecoderConfig decoder;
    std::uint64_t seed = 1;
};

class DetectorModel {
  public:
    explicit DetectorModel(const DetectorConfig& cfg);

    /// Evaluation-mode forward: grids with logits and pixel distances.
    FeatureGrids forward(const Tensor& image) const;

    const DetectorConfig& config() const { return cfg_; }
    std::vector<nn::ParamRef> params();
    std::vector<nn::ParamRef> params() const;

    void save(const std::string& dir) const;
    static DetectorModel load(const std::string& dir);

    /// Forward keeping layer caches + raw box activations, for training.
    struct TrainForward {
        FeatureGrids grids;  // box channel already exp(raw)*stride
        Tensor raw_box;      // pre-exp head output
    };
    TrainForward forward_train(const Tensor& image);
    /// Backprop from grid gradients (w.r.t. cls logit, box distance, ctr
    /// logit); accumulates parameter gradients.
    void backward(const TrainForward& fwd, const Tensor& dcls, const Tensor& dbox,
                  const Tensor& dctr);

  private:
    DetectorConfig cfg_;
    mutable nn::Conv2d c1_, c2_, c3_, c4_;
    mutable nn::Conv2d head_cls_, head_box_, head_ctr_;
    mutable nn::Relu r1_, r2_, r3_, r4_;
};

/// Full single-image inference: forward, decode, NMS, cap.
std::vector<Detection> detect(const DetectorModel& model, const Image& image,
                              const DecoderConfig& decoder,
                              const std::string& image_id = std::string());

struct DetectorTrainConfig {
    int epochs = 150;       // training recipe default
    int batch_size = 8;
    double lr = 1e-3;
    std::uint64_t seed = 1;
    int crop = 256;         // random training crop side
    double box_side = 50.0; // point annotation -> square box
    double val_score_thresh = 0.5;
    double val_match_radius = 30.0;
    bool hflip = true;      // random horizontal flips on training crops
    DetectorConfig model;
};

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_metric = 0.0;
};

struct TrainedDetector {
    DetectorModel model;
    std::vector<EpochLog> log;
};

/// Images are loaded through the records' paths unless a preloaded cache is
/// supplied (image_id -> pixels).
struct ImageCache {
    std::vector<std::pair<std::string, Image>> items;

    const Image* find(const std::string& id) const;
    void put(const std::string& id, Image img);
};

TrainedDetector train_detector(const AnnotationSet& train, const AnnotationSet& val,
                               const DetectorTrainConfig& cfg,
                               const ImageCache* cache = nullptr);

/// Loss over one image's grids: focal binary classification on cls
/// (alpha 0.25, gamma 2, normalized by positive count), -log(IoU) box
/// regression on positives, and centerness BCE-with-logits on positives
/// reported as the excess over the soft-target entropy so a perfect fit
/// reads 0. Terms are weighted 1:1:1. Fills gradient tensors when the out
/// pointers are given. Exposed for the gradient-check tests.
struct DetectorLossTerms {
    double cls = 0.0;
    double box = 0.0;
    double ctr = 0.0;
    double total() const { return cls + box + ctr; }
    int positives = 0;
};

DetectorLossTerms detector_loss(const LevelGrids& pred, const LevelGrids& target,
                                Tensor* dcls, Tensor* dbox, Tensor* dctr);

}  // namespace mito::det

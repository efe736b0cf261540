#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mito/types.hpp"

namespace mito::eval {

/// Greedy distance matching of detections to ground-truth points within one
/// image. Detections are taken in descending score order (ties by box
/// corners, then input index); each claims the nearest unmatched point
/// within `radius` (ties by point index). Detection position = box center.
struct MatchResult {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    struct Pair {
        int det_index;
        int gt_index;
        double distance;
    };
    std::vector<Pair> pairs;
};

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<PointAnnotation>& gts, double radius);

/// Same matcher over a multi-image corpus, grouping both sides by image_id.
MatchResult match_all(const std::vector<Detection>& dets,
                      const std::vector<PointAnnotation>& gts, double radius);

/// 2tp / (2tp + fp + fn); 0 when the denominator is 0.
double f1_from_counts(int tp, int fp, int fn);

double precision_from_counts(int tp, int fp);
double recall_from_counts(int tp, int fn);

/// Average precision by all-point interpolation: detections are ranked by
/// score (tie groups emit a single PR point), TP/FP assigned incrementally
/// with the greedy matcher, per image; AP = sum over groups of
/// (R_g - R_{g-1}) * max precision at recall >= R_g.
double average_precision(const std::vector<Detection>& dets,
                         const std::vector<PointAnnotation>& gts, double radius);

/// The precision-recall points average_precision integrates (one per score
/// group), for report/CSV output. Each entry is (recall, precision).
std::vector<std::pair<double, double>> precision_recall_curve(
    const std::vector<Detection>& dets, const std::vector<PointAnnotation>& gts,
    double radius);

/// Mann-Whitney statistic: (#(pos>neg) + 0.5*#ties) / (n_pos*n_neg).
/// Requires both classes.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

/// (sensitivity + specificity) / 2; requires both classes in labels.
double balanced_accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

/// (accuracy, recall on the positive class); requires >= 1 positive label.
std::pair<double, double> accuracy_and_recall(const std::vector<int>& preds,
                                              const std::vector<int>& labels);

/// (mean, sample std); std is Bessel-corrected and 0 for a single value.
std::pair<double, double> aggregate_folds(const std::vector<double>& values);

}  // namespace mito::eval

#include "mito/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace mito::eval {

namespace {

bool box_less(const BBox& a, const BBox& b) {
    if (a.x_min != b.x_min) return a.x_min < b.x_min;
    if (a.y_min != b.y_min) return a.y_min < b.y_min;
    if (a.x_max != b.x_max) return a.x_max < b.x_max;
    return a.y_max < b.y_max;
}

/// Deterministic ranking: score desc, then box corners, then input index.
std::vector<int> ranked_indices(const std::vector<Detection>& dets) {
    std::vector<int> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int i, int j) {
        if (dets[i].score != dets[j].score) return dets[i].score > dets[j].score;
        if (box_less(dets[i].box, dets[j].box)) return true;
        if (box_less(dets[j].box, dets[i].box)) return false;
        return i < j;
    });
    return order;
}

double center_distance(const Detection& d, const PointAnnotation& g) {
    const double dx = d.box.center_x() - g.x;
    const double dy = d.box.center_y() - g.y;
    return std::hypot(dx, dy);
}

/// Nearest unmatched ground-truth point within radius; -1 if none. Ties in
/// distance go to the lower point index.
int claim_nearest(const Detection& d, const std::vector<PointAnnotation>& gts,
                  const std::vector<char>& taken, double radius, double* dist_out) {
    int best = -1;
    double best_dist = radius;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
        if (taken[gi]) continue;
        const double dist = center_distance(d, gts[gi]);
        if (dist <= radius && (best == -1 || dist < best_dist)) {
            best = static_cast<int>(gi);
            best_dist = dist;
        }
    }
    if (best >= 0 && dist_out != nullptr) {
        *dist_out = best_dist;
    }
    return best;
}

}  // namespace

MatchResult match_detections(const std::vector<Detection>& dets,
                             const std::vector<PointAnnotation>& gts, double radius) {
    if (!(radius > 0.0)) {
        throw std::invalid_argument("match_detections: radius must be positive");
    }
    std::string image_id;
    bool have_id = false;
    auto check_id = [&](const std::string& id) {
        if (!have_id) {
            image_id = id;
            have_id = true;
        } else if (id != image_id) {
            throw std::invalid_argument("match_detections: mixed image_ids");
        }
    };
    for (const Detection& d : dets) check_id(d.image_id);
    for (const PointAnnotation& g : gts) check_id(g.image_id);

    MatchResult res;
    std::vector<char> taken(gts.size(), 0);
    for (int di : ranked_indices(dets)) {
        double dist = 0.0;
        const int gi = claim_nearest(dets[di], gts, taken, radius, &dist);
        if (gi >= 0) {
            taken[gi] = 1;
            res.pairs.push_back({di, gi, dist});
        }
    }
    res.tp = static_cast<int>(res.pairs.size());
    res.fp = static_cast<int>(dets.size()) - res.tp;
    res.fn = static_cast<int>(gts.size()) - res.tp;
    return res;
}

MatchResult match_all(const std::vector<Detection>& dets,
                      const std::vector<PointAnnotation>& gts, double radius) {
    std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> groups;
    for (std::size_t i = 0; i < dets.size(); ++i) {
        groups[dets[i].image_id].first.push_back(static_cast<int>(i));
    }
    for (std::size_t i = 0; i < gts.size(); ++i) {
        groups[gts[i].image_id].second.push_back(static_cast<int>(i));
    }
    MatchResult total;
    for (const auto& [id, idx] : groups) {
        std::vector<Detection> d;
        std::vector<PointAnnotation> g;
        for (int i : idx.first) d.push_back(dets[i]);
        for (int i : idx.second) g.push_back(gts[i]);
        const MatchResult r = match_detections(d, g, radius);
        total.tp += r.tp;
        total.fp += r.fp;
        total.fn += r.fn;
        for (const MatchResult::Pair& p : r.pairs) {
            total.pairs.push_back({idx.first[p.det_index], idx.second[p.gt_index], p.distance});
        }
    }
    return total;
}

double f1_from_counts(int tp, int fp, int fn) {
    if (tp < 0 || fp < 0 || fn < 0) {
        throw std::invalid_argument("f1_from_counts: negative count");
    }
    const double denom = 2.0 * tp + fp + fn;
    return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
}

double precision_from_counts(int tp, int fp) {
    return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
}

double recall_from_counts(int tp, int fn) {
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
}

namespace {

/// Ranked sweep shared by AP and the PR curve: walks score groups, greedily
/// claiming per-image ground truth, emitting one (recall, precision) point
/// per distinct score.
std::vector<std::pair<double, double>> pr_points(const std::vector<Detection>& dets,
                                                 const std::vector<PointAnnotation>& gts,
                                                 double radius) {
    if (gts.empty()) {
        throw std::invalid_argument("average_precision: no ground truth");
    }
    if (!(radius > 0.0)) {
        throw std::invalid_argument("average_precision: radius must be positive");
    }
    std::map<std::string, std::vector<int>> gt_by_image;
    for (std::size_t i = 0; i < gts.size(); ++i) {
        gt_by_image[gts[i].image_id].push_back(static_cast<int>(i));
    }
    std::vector<char> taken(gts.size(), 0);

    const std::vector<int> order = ranked_indices(dets);
    std::vector<std::pair<double, double>> points;
    int tp = 0, fp = 0;
    const double n_gt = static_cast<double>(gts.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && dets[order[j]].score == dets[order[i]].score) {
            ++j;
        }
        for (std::size_t k = i; k < j; ++k) {
            const Detection& d = dets[order[k]];
            const auto it = gt_by_image.find(d.image_id);
            int best = -1;
            double best_dist = radius;
            if (it != gt_by_image.end()) {
                for (int gi : it->second) {
                    if (taken[gi]) continue;
                    const double dist = center_distance(d, gts[gi]);
                    if (dist <= radius && (best == -1 || dist < best_dist)) {
                        best = gi;
                        best_dist = dist;
                    }
                }
            }
            if (best >= 0) {
                taken[best] = 1;
                ++tp;
            } else {
                ++fp;
            }
        }
        points.push_back({tp / n_gt, static_cast<double>(tp) / (tp + fp)});
        i = j;
    }
    return points;
}

}  // namespace

std::vector<std::pair<double, double>> precision_recall_curve(
    const std::vector<Detection>& dets, const std::vector<PointAnnotation>& gts,
    double radius) {
    return pr_points(dets, gts, radius);
}

double average_precision(const std::vector<Detection>& dets,
                         const std::vector<PointAnnotation>& gts, double radius) {
    const auto points = pr_points(dets, gts, radius);
    // precision envelope: best precision at recall >= r
    std::vector<double> envelope(points.size());
    double best = 0.0;
    for (std::size_t i = points.size(); i-- > 0;) {
        best = std::max(best, points[i].second);
        envelope[i] = best;
    }
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        ap += (points[i].first - prev_recall) * envelope[i];
        prev_recall = points[i].first;
    }
    return ap;
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw std::invalid_argument("roc_auc: size mismatch or empty input");
    }
    std::int64_t n_pos = 0, n_neg = 0;
    for (int y : labels) {
        if (y == 1) {
            ++n_pos;
        } else if (y == 0) {
            ++n_neg;
        } else {
            throw std::invalid_argument("roc_auc: labels must be 0 or 1");
        }
    }
    if (n_pos == 0 || n_neg == 0) {
        throw std::invalid_argument("roc_auc: both classes required");
    }
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return scores[i] < scores[j]; });

    // 2U accumulated in integers: 2*(#pos>neg) + #ties keeps the final
    // division exact and platform-stable.
    std::int64_t two_u = 0;
    std::int64_t neg_below = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        std::int64_t pos_in_group = 0, neg_in_group = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            if (labels[order[j]] == 1) {
                ++pos_in_group;
            } else {
                ++neg_in_group;
            }
            ++j;
        }
        two_u += 2 * pos_in_group * neg_below + pos_in_group * neg_in_group;
        neg_below += neg_in_group;
        i = j;
    }
    return static_cast<double>(two_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double balanced_accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size() || preds.empty()) {
        throw std::invalid_argument("balanced_accuracy: size mismatch or empty input");
    }
    std::int64_t tp = 0, tn = 0, pos = 0, neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) {
            ++pos;
            tp += preds[i] == 1;
        } else if (labels[i] == 0) {
            ++neg;
            tn += preds[i] == 0;
        } else {
            throw std::invalid_argument("balanced_accuracy: labels must be 0 or 1");
        }
    }
    if (pos == 0 || neg == 0) {
        throw std::invalid_argument("balanced_accuracy: both classes required in labels");
    }
    const double sens = static_cast<double>(tp) / static_cast<double>(pos);
    const double spec = static_cast<double>(tn) / static_cast<double>(neg);
    return 0.5 * (sens + spec);
}

std::pair<double, double> accuracy_and_recall(const std::vector<int>& preds,
                                              const std::vector<int>& labels) {
    if (preds.size() != labels.size() || preds.empty()) {
        throw std::invalid_argument("accuracy_and_recall: size mismatch or empty input");
    }
    std::int64_t correct = 0, tp = 0, pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        correct += preds[i] == labels[i];
        if (labels[i] == 1) {
            ++pos;
            tp += preds[i] == 1;
        }
    }
    if (pos == 0) {
        throw std::invalid_argument("accuracy_and_recall: no positive labels, recall undefined");
    }
    return {static_cast<double>(correct) / static_cast<double>(labels.size()),
            static_cast<double>(tp) / static_cast<double>(pos)};
}

std::pair<double, double> aggregate_folds(const std::vector<double>& values) {
    if (values.empty()) {
        throw std::invalid_argument("aggregate_folds: empty list");
    }
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                        static_cast<double>(values.size());
    if (values.size() == 1) {
        return {mean, 0.0};
    }
    double ss = 0.0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

}  // namespace mito::eval

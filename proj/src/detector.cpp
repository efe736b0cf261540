#include "mito/detector.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mito/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mito::det {

namespace {

constexpr double kBoxLogClamp = 12.0;  // exp clamp for the box head

/// score desc, then box corners lexicographic: the deterministic detection
/// order used by decode top-k and NMS.
bool detail_det_order(const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.box.x_min != b.box.x_min) return a.box.x_min < b.box.x_min;
    if (a.box.y_min != b.box.y_min) return a.box.y_min < b.box.y_min;
    if (a.box.x_max != b.box.x_max) return a.box.x_max < b.box.x_max;
    return a.box.y_max < b.box.y_max;
}

double stable_sigmoid(double z) {
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

/// Size-of-interest bounds per level, FCOS convention (8*stride); a single
/// level accepts every box.
void level_ranges(const std::vector<int>& strides, std::vector<double>& lo,
                  std::vector<double>& hi) {
    const std::size_t n = strides.size();
    lo.assign(n, 0.0);
    hi.assign(n, std::numeric_limits<double>::infinity());
    if (n <= 1) {
        return;
    }
    for (std::size_t i = 0; i < n; ++i) {
        lo[i] = i == 0 ? 0.0 : 8.0 * strides[i - 1];
        hi[i] = i + 1 == n ? std::numeric_limits<double>::infinity() : 8.0 * strides[i];
    }
}

}  // namespace

EncodeResult encode_targets(int image_w, int image_h, const std::vector<BBox>& boxes,
                            const std::vector<int>& strides, double center_radius) {
    if (strides.empty()) {
        throw std::invalid_argument("encode_targets: no strides");
    }
    for (int s : strides) {
        if (s <= 0) {
            throw std::invalid_argument("encode_targets: strides must be positive");
        }
    }
    for (const BBox& b : boxes) {
        if (!b.valid()) {
            throw std::invalid_argument("encode_targets: invalid box");
        }
    }

    std::vector<double> lo, hi;
    level_ranges(strides, lo, hi);

    EncodeResult res;
    std::vector<char> box_hit(boxes.size(), 0);
    for (std::size_t li = 0; li < strides.size(); ++li) {
        const int s = strides[li];
        LevelGrids g;
        g.stride = s;
        const int gh = grid_dim(image_h, s);
        const int gw = grid_dim(image_w, s);
        g.cls = Tensor(1, gh, gw);
        g.box = Tensor(4, gh, gw);
        g.ctr = Tensor(1, gh, gw);

        for (int i = 0; i < gh; ++i) {
            const double y = grid_y(i, s);
            for (int j = 0; j < gw; ++j) {
                const double x = grid_x(j, s);
                int best = -1;
                double best_area = std::numeric_limits<double>::infinity();
                for (std::size_t bi = 0; bi < boxes.size(); ++bi) {
                    const BBox& b = boxes[bi];
                    const double l = x - b.x_min;
                    const double t = y - b.y_min;
                    const double r = b.x_max - x;
                    const double bt = b.y_max - y;
                    const double m = std::min(std::min(l, r), std::min(t, bt));
                    if (m <= 0.0) {
                        continue;  // outside the box
                    }
                    const double max_dist = std::max(std::max(l, r), std::max(t, bt));
                    if (max_dist <= lo[li] || max_dist > hi[li]) {
                        continue;  // routed to another level
                    }
                    const double cr = center_radius * s;
                    if (std::abs(x - b.center_x()) > cr || std::abs(y - b.center_y()) > cr) {
                        continue;  // outside the center-sampling window
                    }
                    if (b.area() < best_area) {
                        best_area = b.area();
                        best = static_cast<int>(bi);
                    }
                }
                if (best < 0) {
                    continue;
                }
                const BBox& b = boxes[best];
                const double l = x - b.x_min;
                const double t = y - b.y_min;
                const double r = b.x_max - x;
                const double bt = b.y_max - y;
                g.cls.at(0, i, j) = 1.0f;
                g.box.at(0, i, j) = static_cast<float>(l);
                g.box.at(1, i, j) = static_cast<float>(t);
                g.box.at(2, i, j) = static_cast<float>(r);
                g.box.at(3, i, j) = static_cast<float>(bt);
                const double cx = std::min(l, r) / std::max(l, r);
                const double cy = std::min(t, bt) / std::max(t, bt);
                g.ctr.at(0, i, j) = static_cast<float>(std::sqrt(cx * cy));
                box_hit[best] = 1;
            }
        }
        res.maps.push_back(std::move(g));
    }
    for (char h : box_hit) {
        if (!h) {
            ++res.skipped_boxes;
        }
    }
    return res;
}

std::vector<Detection> decode_detections(const FeatureGrids& maps, double score_thresh,
                                         int pre_nms_topk, const std::string& image_id) {
    std::vector<Detection> out;
    for (const LevelGrids& g : maps) {
        if (g.cls.c != 1 || g.ctr.c != 1 || g.box.c != 4 || g.cls.h != g.box.h ||
            g.cls.w != g.box.w || g.cls.h != g.ctr.h || g.cls.w != g.ctr.w) {
            throw std::invalid_argument("decode_detections: grid shape mismatch");
        }
        const int s = g.stride;
        for (int i = 0; i < g.cls.h; ++i) {
            for (int j = 0; j < g.cls.w; ++j) {
                const double score = stable_sigmoid(g.cls.at(0, i, j)) *
                                     stable_sigmoid(g.ctr.at(0, i, j));
                if (score < score_thresh) {
                    continue;
                }
                const double x = grid_x(j, s);
                const double y = grid_y(i, s);
                Detection d;
                d.image_id = image_id;
                d.box = BBox{x - g.box.at(0, i, j), y - g.box.at(1, i, j),
                             x + g.box.at(2, i, j), y + g.box.at(3, i, j)};
                d.score = score;
                d.stage = Stage::Detector;
                if (d.box.valid()) {
                    out.push_back(std::move(d));
                }
            }
        }
    }
    if (pre_nms_topk > 0 && static_cast<int>(out.size()) > pre_nms_topk) {
        // full deterministic order; ties at the cutoff must not depend on
        // traversal order
        std::sort(out.begin(), out.end(), detail_det_order);
        out.resize(pre_nms_topk);
    }
    return out;
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
    if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) {
        throw std::invalid_argument("nms: iou_thresh must lie in (0,1)");
    }
    std::sort(dets.begin(), dets.end(), detail_det_order);
    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (iou(d.box, k.box) > iou_thresh) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            kept.push_back(d);
        }
    }
    return kept;
}

DetectorModel::DetectorModel(const DetectorConfig& cfg)
    : cfg_(cfg),
      c1_(3, cfg.channels1, 3, 2, 1),
      c2_(cfg.channels1, cfg.channels2, 3, 2, 1),
      c3_(cfg.channels2, cfg.channels3, 3, 2, 1),
      c4_(cfg.channels3, cfg.channels3, 3, 1, 1),
      head_cls_(cfg.channels3, 1, 1, 1, 0),
      head_box_(cfg.channels3, 4, 1, 1, 0),
      head_ctr_(cfg.channels3, 1, 1, 1, 0) {
    if (cfg.stride != 8) {
        throw std::invalid_argument("DetectorModel: reference trunk is stride 8");
    }
    Rng rng(cfg.seed);
    c1_.init_he(rng);
    c2_.init_he(rng);
    c3_.init_he(rng);
    c4_.init_he(rng);
    head_cls_.init_he(rng);
    head_box_.init_he(rng);
    head_ctr_.init_he(rng);
    // prior-probability bias (pi = 0.01) keeps early focal loss from being
    // dominated by the sea of negatives
    head_cls_.fill_bias(-4.59511985013459f);
}

std::vector<nn::ParamRef> DetectorModel::params() {
    std::vector<nn::ParamRef> out;
    c1_.collect_params(out);
    c2_.collect_params(out);
    c3_.collect_params(out);
    c4_.collect_params(out);
    head_cls_.collect_params(out);
    head_box_.collect_params(out);
    head_ctr_.collect_params(out);
    return out;
}

std::vector<nn::ParamRef> DetectorModel::params() const {
    return const_cast<DetectorModel*>(this)->params();
}

DetectorModel::TrainForward DetectorModel::forward_train(const Tensor& image) {
    Tensor f = r1_.forward(c1_.forward(image));
    f = r2_.forward(c2_.forward(f));
    f = r3_.forward(c3_.forward(f));
    f = r4_.forward(c4_.forward(f));

    TrainForward out;
    LevelGrids g;
    g.stride = cfg_.stride;
    g.cls = head_cls_.forward(f);
    out.raw_box = head_box_.forward(f);
    g.ctr = head_ctr_.forward(f);

    g.box = Tensor(4, out.raw_box.h, out.raw_box.w);
    for (std::size_t i = 0; i < out.raw_box.size(); ++i) {
        const float raw = std::clamp(out.raw_box.v[i], -static_cast<float>(kBoxLogClamp),
                                     static_cast<float>(kBoxLogClamp));
        g.box.v[i] = std::exp(raw) * static_cast<float>(cfg_.stride);
    }
    out.grids.push_back(std::move(g));
    return out;
}

FeatureGrids DetectorModel::forward(const Tensor& image) const {
    return const_cast<DetectorModel*>(this)->forward_train(image).grids;
}

void DetectorModel::backward(const TrainForward& fwd, const Tensor& dcls, const Tensor& dbox,
                             const Tensor& dctr) {
    // chain through dist = exp(clamp(raw)) * stride
    Tensor draw(4, fwd.raw_box.h, fwd.raw_box.w);
    const LevelGrids& g = fwd.grids.front();
    for (std::size_t i = 0; i < draw.size(); ++i) {
        const float raw = fwd.raw_box.v[i];
        const bool clamped = raw < -kBoxLogClamp || raw > kBoxLogClamp;
        draw.v[i] = clamped ? 0.0f : dbox.v[i] * g.box.v[i];
    }
    Tensor df = head_cls_.backward(dcls);
    {
        Tensor t = head_box_.backward(draw);
        for (std::size_t i = 0; i < df.size(); ++i) df.v[i] += t.v[i];
        t = head_ctr_.backward(dctr);
        for (std::size_t i = 0; i < df.size(); ++i) df.v[i] += t.v[i];
    }
    Tensor dx = c4_.backward(r4_.backward(df));
    dx = c3_.backward(r3_.backward(dx));
    dx = c2_.backward(r2_.backward(dx));
    (void)c1_.backward(r1_.backward(dx));
}

void DetectorModel::save(const std::string& dir) const {
    fs::create_directories(dir);
    const std::vector<float> flat = nn::dump_params(params());
    write_params_bin((fs::path(dir) / "params.bin").string(), flat);
    json manifest{
        {"kind", "detector"},
        {"format_version", 1},
        {"seed", cfg_.seed},
        {"strides", json::array({cfg_.stride})},
        {"channels", {cfg_.channels1, cfg_.channels2, cfg_.channels3}},
        {"center_radius", cfg_.center_radius},
        {"decoder",
         {{"score_thresh", cfg_.decoder.score_thresh},
          {"pre_nms_topk", cfg_.decoder.pre_nms_topk},
          {"nms_iou", cfg_.decoder.nms_iou},
          {"max_detections", cfg_.decoder.max_detections}}},
        {"params_fnv1a64", fnv1a64(flat.data(), flat.size() * sizeof(float))},
    };
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!out) {
        throw std::runtime_error("DetectorModel::save: cannot write manifest in " + dir);
    }
    out << manifest.dump(2) << "\n";
}

DetectorModel DetectorModel::load(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!in) {
        throw std::runtime_error("DetectorModel::load: cannot open manifest in " + dir);
    }
    json manifest;
    in >> manifest;
    if (manifest.value("kind", "") != "detector") {
        throw std::runtime_error("DetectorModel::load: checkpoint kind mismatch in " + dir);
    }
    DetectorConfig cfg;
    cfg.seed = manifest.value("seed", 1ULL);
    const auto& ch = manifest.at("channels");
    cfg.channels1 = ch.at(0).get<int>();
    cfg.channels2 = ch.at(1).get<int>();
    cfg.channels3 = ch.at(2).get<int>();
    cfg.stride = manifest.at("strides").at(0).get<int>();
    cfg.center_radius = manifest.value("center_radius", 1.5);
    const auto& dec = manifest.at("decoder");
    cfg.decoder.score_thresh = dec.at("score_thresh").get<double>();
    cfg.decoder.pre_nms_topk = dec.at("pre_nms_topk").get<int>();
    cfg.decoder.nms_iou = dec.at("nms_iou").get<double>();
    cfg.decoder.max_detections = dec.at("max_detections").get<int>();

    DetectorModel model(cfg);
    const std::vector<float> flat = read_params_bin((fs::path(dir) / "params.bin").string());
    const std::uint64_t want = manifest.at("params_fnv1a64").get<std::uint64_t>();
    const std::uint64_t got = fnv1a64(flat.data(), flat.size() * sizeof(float));
    if (want != got) {
        throw std::runtime_error("DetectorModel::load: params checksum mismatch in " + dir);
    }
    nn::load_params(model.params(), flat);
    return model;
}

std::vector<Detection> detect(const DetectorModel& model, const Image& image,
                              const DecoderConfig& decoder, const std::string& image_id) {
    const Tensor x = to_tensor(image, {0.5f, 0.5f, 0.5f}, {0.25f, 0.25f, 0.25f});
    const FeatureGrids grids = model.forward(x);
    std::vector<Detection> dets =
        decode_detections(grids, decoder.score_thresh, decoder.pre_nms_topk, image_id);
    dets = nms(std::move(dets), decoder.nms_iou);
    if (decoder.max_detections > 0 && static_cast<int>(dets.size()) > decoder.max_detections) {
        dets.resize(decoder.max_detections);
    }
    return dets;
}

DetectorLossTerms detector_loss(const LevelGrids& pred, const LevelGrids& target,
                                Tensor* dcls, Tensor* dbox, Tensor* dctr) {
    if (!pred.cls.same_shape(target.cls) || !pred.box.same_shape(target.box) ||
        !pred.ctr.same_shape(target.ctr)) {
        throw std::invalid_argument("detector_loss: prediction/target shape mismatch");
    }
    constexpr double kFocalAlpha = 0.25;
    constexpr double kFocalGamma = 2.0;

    if (dcls != nullptr) *dcls = Tensor(1, pred.cls.h, pred.cls.w);
    if (dbox != nullptr) *dbox = Tensor(4, pred.box.h, pred.box.w);
    if (dctr != nullptr) *dctr = Tensor(1, pred.ctr.h, pred.ctr.w);

    DetectorLossTerms terms;
    const int plane = pred.cls.plane();
    int n_pos = 0;
    for (int idx = 0; idx < plane; ++idx) {
        n_pos += target.cls.v[idx] > 0.5f;
    }
    terms.positives = n_pos;
    const double cls_norm = 1.0 / std::max(1, n_pos);
    const double pos_norm = n_pos > 0 ? 1.0 / n_pos : 0.0;

    for (int idx = 0; idx < plane; ++idx) {
        const double z = pred.cls.v[idx];
        const bool positive = target.cls.v[idx] > 0.5f;
        const double p = stable_sigmoid(z);
        // log(p) and log(1-p) via softplus for saturation safety
        const double log_p = -(std::log1p(std::exp(-std::abs(z))) + std::max(-z, 0.0));
        const double log_1mp = -(std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0));
        double loss, dz;
        if (positive) {
            const double w = std::pow(1.0 - p, kFocalGamma);
            loss = -kFocalAlpha * w * log_p;
            // d/dz [-a (1-p)^g log p] = a (1-p)^g (g p log p - (1-p))
            dz = kFocalAlpha * w * (kFocalGamma * p * log_p - (1.0 - p));
        } else {
            const double w = std::pow(p, kFocalGamma);
            loss = -(1.0 - kFocalAlpha) * w * log_1mp;
            dz = (1.0 - kFocalAlpha) * w * (p - kFocalGamma * (1.0 - p) * log_1mp);
        }
        terms.cls += loss * cls_norm;
        if (dcls != nullptr) {
            dcls->v[idx] = static_cast<float>(dz * cls_norm);
        }

        if (!positive) {
            continue;
        }

        // -log IoU regression; predicted and target boxes share the anchor
        // point, so intersection extents are mins of paired distances.
        const double pl = pred.box.at(0, idx / pred.box.w, idx % pred.box.w);
        const double pt = pred.box.at(1, idx / pred.box.w, idx % pred.box.w);
        const double pr = pred.box.at(2, idx / pred.box.w, idx % pred.box.w);
        const double pb = pred.box.at(3, idx / pred.box.w, idx % pred.box.w);
        const double tl = target.box.at(0, idx / pred.box.w, idx % pred.box.w);
        const double tt = target.box.at(1, idx / pred.box.w, idx % pred.box.w);
        const double tr = target.box.at(2, idx / pred.box.w, idx % pred.box.w);
        const double tb = target.box.at(3, idx / pred.box.w, idx % pred.box.w);

        const double iw = std::min(pl, tl) + std::min(pr, tr);
        const double ih = std::min(pt, tt) + std::min(pb, tb);
        const double inter = iw * ih;
        const double area_p = (pl + pr) * (pt + pb);
        const double area_t = (tl + tr) * (tt + tb);
        const double uni = area_p + area_t - inter;
        const double iou_v = std::max(inter / uni, 1e-9);
        terms.box += -std::log(iou_v) * pos_norm;

        if (dbox != nullptr) {
            // dL/dq = dU/dq / U - dI/dq / I for each distance q
            const double dq[4][2] = {{pl < tl ? ih : 0.0, pt + pb},
                                     {pt < tt ? iw : 0.0, pl + pr},
                                     {pr < tr ? ih : 0.0, pt + pb},
                                     {pb < tb ? iw : 0.0, pl + pr}};
            for (int ch = 0; ch < 4; ++ch) {
                const double di = dq[ch][0];
                const double da = dq[ch][1];
                const double du = da - di;
                const double g = (du / uni - di / inter) * pos_norm;
                dbox->at(ch, idx / pred.box.w, idx % pred.box.w) = static_cast<float>(g);
            }
        }

        // centerness BCE with a soft target in [0,1], reported as the
        // excess over the target entropy (a KL divergence): the gradient is
        // unchanged and a perfect fit reads 0 instead of the entropy floor
        const double zc = pred.ctr.v[idx];
        const double yc = target.ctr.v[idx];
        const double bce = std::max(zc, 0.0) - zc * yc + std::log1p(std::exp(-std::abs(zc)));
        double entropy = 0.0;
        if (yc > 0.0 && yc < 1.0) {
            entropy = -(yc * std::log(yc) + (1.0 - yc) * std::log(1.0 - yc));
        }
        terms.ctr += (bce - entropy) * pos_norm;
        if (dctr != nullptr) {
            dctr->v[idx] = static_cast<float>((stable_sigmoid(zc) - yc) * pos_norm);
        }
    }
    return terms;
}

const Image* ImageCache::find(const std::string& id) const {
    for (const auto& [key, img] : items) {
        if (key == id) {
            return &img;
        }
    }
    return nullptr;
}

void ImageCache::put(const std::string& id, Image img) {
    items.emplace_back(id, std::move(img));
}

}  // namespace mito::det

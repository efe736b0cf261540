#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mito/augment.hpp"
#include "mito/detector.hpp"
#include "mito/eval.hpp"
#include "mito/rng.hpp"

namespace mito::det {

namespace {

struct TrainImage {
    std::string image_id;
    Image pixels;
    std::vector<BBox> boxes;  // mitotic annotations as squares
};

std::vector<TrainImage> load_training_images(const AnnotationSet& set, double box_side,
                                             const ImageCache* cache) {
    std::vector<TrainImage> out;
    for (const ImageRecord& rec : set.images) {
        TrainImage ti;
        ti.image_id = rec.image_id;
        const Image* cached = cache != nullptr ? cache->find(rec.image_id) : nullptr;
        ti.pixels = cached != nullptr ? *cached : load_image(rec.path);
        for (const PointAnnotation& a : set.annotations) {
            if (a.image_id == rec.image_id && a.category == Category::Mitotic) {
                ti.boxes.push_back(point_to_box(a, box_side));
            }
        }
        out.push_back(std::move(ti));
    }
    return out;
}

struct CropSample {
    Image pixels;
    std::vector<BBox> boxes;
};

CropSample make_crop(const TrainImage& src, int crop, bool flip, Rng& rng) {
    CropSample s;
    const int cw = std::min(crop, src.pixels.width);
    const int ch = std::min(crop, src.pixels.height);
    const int x0 = cw < src.pixels.width
                       ? static_cast<int>(rng.uniform_int(0, src.pixels.width - cw))
                       : 0;
    const int y0 = ch < src.pixels.height
                       ? static_cast<int>(rng.uniform_int(0, src.pixels.height - ch))
                       : 0;
    s.pixels = crop_rect(src.pixels, x0, y0, cw, ch);
    for (const BBox& b : src.boxes) {
        BBox shifted{b.x_min - x0, b.y_min - y0, b.x_max - x0, b.y_max - y0};
        // keep boxes whose center lies in the crop; clipped remainders of
        // others would only add ambiguous positives
        const double cx = shifted.center_x();
        const double cy = shifted.center_y();
        if (cx < 0.0 || cy < 0.0 || cx >= cw || cy >= ch) {
            continue;
        }
        s.boxes.push_back(shifted);
    }
    if (flip) {
        s.pixels = flip_horizontal(s.pixels);
        for (BBox& b : s.boxes) {
            const double x_min = cw - b.x_max;
            const double x_max = cw - b.x_min;
            b.x_min = x_min;
            b.x_max = x_max;
        }
    }
    return s;
}

double validation_f1(const DetectorModel& model, const std::vector<TrainImage>& val_images,
                     const DetectorTrainConfig& cfg) {
    std::vector<Detection> dets;
    std::vector<PointAnnotation> gts;
    DecoderConfig dec = model.config().decoder;
    dec.score_thresh = cfg.val_score_thresh;
    for (const TrainImage& ti : val_images) {
        std::vector<Detection> d = detect(model, ti.pixels, dec, ti.image_id);
        dets.insert(dets.end(), d.begin(), d.end());
        for (const BBox& b : ti.boxes) {
            PointAnnotation g;
            g.image_id = ti.image_id;
            g.x = b.center_x();
            g.y = b.center_y();
            gts.push_back(std::move(g));
        }
    }
    const eval::MatchResult m = eval::match_all(dets, gts, cfg.val_match_radius);
    return eval::f1_from_counts(m.tp, m.fp, m.fn);
}

}  // namespace

TrainedDetector train_detector(const AnnotationSet& train, const AnnotationSet& val,
                               const DetectorTrainConfig& cfg, const ImageCache* cache) {
    if (train.images.empty()) {
        throw std::invalid_argument("train_detector: empty training set");
    }
    if (cfg.batch_size <= 0 || cfg.epochs < 0) {
        throw std::invalid_argument("train_detector: bad epochs/batch configuration");
    }

    const std::vector<TrainImage> train_images =
        load_training_images(train, cfg.box_side, cache);
    const std::vector<TrainImage> val_images = load_training_images(val, cfg.box_side, cache);

    TrainedDetector result{DetectorModel(cfg.model), {}};
    DetectorModel& model = result.model;
    std::vector<nn::ParamRef> params = model.params();
    nn::Adam opt(cfg.lr);

    const std::vector<int> strides{cfg.model.stride};
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order(train_images.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);

        double epoch_loss = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            nn::zero_grads(params);
            double batch_loss = 0.0;
            for (std::size_t bi = start; bi < end; ++bi) {
                const TrainImage& ti = train_images[order[bi]];
                const bool flip = cfg.hflip && rng.bernoulli(0.5);
                const CropSample crop = make_crop(ti, cfg.crop, flip, rng);
                const EncodeResult targets =
                    encode_targets(crop.pixels.width, crop.pixels.height, crop.boxes, strides,
                                   cfg.model.center_radius);
                const Tensor x =
                    to_tensor(crop.pixels, {0.5f, 0.5f, 0.5f}, {0.25f, 0.25f, 0.25f});
                DetectorModel::TrainForward fwd = model.forward_train(x);
                Tensor dcls, dbox, dctr;
                const DetectorLossTerms terms =
                    detector_loss(fwd.grids.front(), targets.maps.front(), &dcls, &dbox, &dctr);
                batch_loss += terms.total();
                model.backward(fwd, dcls, dbox, dctr);
            }
            const double denom = static_cast<double>(end - start);
            batch_loss /= denom;
            if (!std::isfinite(batch_loss)) {
                std::ostringstream os;
                os << "train_detector: non-finite loss at epoch " << epoch << " step " << steps;
                throw NumericError(os.str());
            }
            nn::scale_grads(params, static_cast<float>(1.0 / denom));
            opt.step(params);
            epoch_loss += batch_loss;
            ++steps;
        }

        EpochLog log;
        log.epoch = epoch;
        log.train_loss = steps > 0 ? epoch_loss / steps : 0.0;
        log.val_metric = val_images.empty() ? 0.0 : validation_f1(model, val_images, cfg);
        result.log.push_back(log);
    }
    return result;
}

}  // namespace mito::det

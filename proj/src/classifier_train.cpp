#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mito/augment.hpp"
#include "mito/classifier.hpp"
#include "mito/eval.hpp"
#include "mito/rng.hpp"

namespace mito::cls {

namespace {

void require_both_classes(const std::vector<PatchSample>& samples, const char* which) {
    bool has_pos = false, has_neg = false;
    for (const PatchSample& s : samples) {
        if (!s.label.has_value()) {
            throw std::invalid_argument(std::string("train_classifier: unlabeled patch in ") +
                                        which + " set");
        }
        (*s.label == 1 ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
        throw std::invalid_argument(std::string("train_classifier: ") + which +
                                    " set must contain both classes");
    }
}

double validation_balanced_accuracy(const PatchClassifier& model,
                                    const std::vector<PatchSample>& val) {
    std::vector<int> preds, labels;
    preds.reserve(val.size());
    labels.reserve(val.size());
    for (const PatchSample& s : val) {
        const double p = model.classify(resize_to_input(s));
        preds.push_back(p >= 0.5 ? 1 : 0);
        labels.push_back(*s.label);
    }
    bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
    bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
    if (!has_pos || !has_neg) {
        // single-class validation folds still need a number in the log
        std::int64_t correct = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            correct += preds[i] == labels[i];
        }
        return static_cast<double>(correct) / static_cast<double>(preds.size());
    }
    return eval::balanced_accuracy(preds, labels);
}

AugTask profile_task(TaskProfile p) {
    return p == TaskProfile::RefineCls ? AugTask::RefineCls : AugTask::AtypicalCls;
}

}  // namespace

TrainedClassifier train_classifier(const std::vector<PatchSample>& train,
                                   const std::vector<PatchSample>& val,
                                   const ClassifierTrainConfig& cfg) {
    if (train.empty()) {
        throw std::invalid_argument("train_classifier: empty training set");
    }
    require_both_classes(train, "training");
    if (cfg.batch_size <= 0 || cfg.epochs < 0) {
        throw std::invalid_argument("train_classifier: bad epochs/batch configuration");
    }

    TrainedClassifier result{PatchClassifier(cfg.model), {}};
    PatchClassifier& model = result.model;
    std::vector<nn::ParamRef> params = model.params();

    nn::Adam adam(cfg.lr);
    nn::SgdMomentum sgd(cfg.lr, cfg.momentum);
    const bool use_adam = cfg.optimizer == OptimizerKind::Adam;

    const AugmentationConfig aug =
        AugmentationConfig::defaults(profile_task(cfg.profile), cfg.seed);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr =
            cfg.cosine_schedule ? nn::cosine_lr(cfg.lr, epoch, cfg.epochs) : cfg.lr;
        if (use_adam) {
            adam.set_lr(lr);
        } else {
            sgd.set_lr(lr);
        }

        Rng rng(Rng::mix(cfg.seed, 0x9000 + static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        rng.shuffle(order);

        double epoch_loss = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            nn::zero_grads(params);
            double batch_loss = 0.0;
            double weight_total = 0.0;
            for (std::size_t bi = start; bi < end; ++bi) {
                const PatchSample& s = train[order[bi]];
                PatchSample patch = s;
                if (cfg.augment_enabled) {
                    const std::uint64_t stream =
                        static_cast<std::uint64_t>(epoch) * train.size() + order[bi];
                    patch = augment(s, aug, stream);
                }
                const Image input = resize_to_input(patch);
                const double z = model.logit_train(input);
                const double y = static_cast<double>(*s.label);
                const double w = y == 1.0 ? cfg.positive_weight : 1.0;
                const double per =
                    std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
                batch_loss += w * per;
                weight_total += w;
                // per-sample backward right away: layer caches hold only the
                // latest sample
                const double dz = w * (sigmoid(z) - y);
                model.backward(dz);
            }
            batch_loss /= weight_total;
            if (!std::isfinite(batch_loss)) {
                std::ostringstream os;
                os << "train_classifier: non-finite loss at epoch " << epoch << " step " << steps;
                throw NumericError(os.str());
            }
            nn::scale_grads(params, static_cast<float>(1.0 / weight_total));
            if (use_adam) {
                adam.step(params);
            } else {
                sgd.step(params);
            }
            epoch_loss += batch_loss;
            ++steps;
        }

        ClassifierEpochLog log;
        log.epoch = epoch;
        log.train_loss = steps > 0 ? epoch_loss / steps : 0.0;
        log.val_balanced_accuracy =
            val.empty() ? 0.0 : validation_balanced_accuracy(model, val);
        result.log.push_back(log);
    }
    return result;
}

}  // namespace mito::cls

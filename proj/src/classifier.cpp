#include "mito/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mito/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mito::cls {

double sigmoid(double z) {
    if (!std::isfinite(z)) {
        throw std::invalid_argument("sigmoid: non-finite input");
    }
    if (z >= 0.0) {
        return 1.0 / (1.0 + std::exp(-z));
    }
    const double e = std::exp(z);
    return e / (1.0 + e);
}

namespace {

void validate_batch(const LogitBatch& batch) {
    if (batch.z.empty() || batch.z.size() != batch.y.size()) {
        throw std::invalid_argument("bce_with_logits: batch must be non-empty with |z| == |y|");
    }
    for (double y : batch.y) {
        if (y != 0.0 && y != 1.0) {
            throw std::invalid_argument("bce_with_logits: labels must be exactly 0 or 1");
        }
    }
}

}  // namespace

double bce_with_logits(const LogitBatch& batch) {
    validate_batch(batch);
    double total = 0.0;
    for (std::size_t i = 0; i < batch.z.size(); ++i) {
        const double z = batch.z[i];
        const double y = batch.y[i];
        total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
    return total / static_cast<double>(batch.z.size());
}

std::vector<double> bce_with_logits_grad(const LogitBatch& batch) {
    validate_batch(batch);
    const double inv_n = 1.0 / static_cast<double>(batch.z.size());
    std::vector<double> g(batch.z.size());
    for (std::size_t i = 0; i < batch.z.size(); ++i) {
        g[i] = (sigmoid(batch.z[i]) - batch.y[i]) * inv_n;
    }
    return g;
}

PatchClassifier::PatchClassifier(const ClassifierConfig& cfg)
    : cfg_(cfg),
      c1_(3, cfg.channels1, 3, 2, 1),
      c2_(cfg.channels1, cfg.channels2, 3, 2, 1),
      c3_(cfg.channels2, cfg.channels3, 3, 2, 1),
      fc_(2 * cfg.channels3, 1) {
    if (cfg.backbone != "tiny") {
        throw std::invalid_argument(
            "PatchClassifier: unknown backbone profile \"" + cfg.backbone +
            "\" (this build ships the \"tiny\" reference net; larger backbones plug in "
            "through PatchScorer)");
    }
    Rng rng(cfg.seed);
    c1_.init_he(rng);
    c2_.init_he(rng);
    c3_.init_he(rng);
    fc_.init_he(rng);
}

Tensor PatchClassifier::forward_net(const Tensor& x) const {
    Tensor f = r1_.forward(c1_.forward(x));
    f = r2_.forward(c2_.forward(f));
    f = r3_.forward(c3_.forward(f));
    const Tensor avg = gap_.forward(f);
    const Tensor mx = gmp_.forward(f);
    Tensor pooled(2 * f.c, 1, 1);
    std::copy(avg.v.begin(), avg.v.end(), pooled.v.begin());
    std::copy(mx.v.begin(), mx.v.end(), pooled.v.begin() + f.c);
    return fc_.forward(pooled);
}

double PatchClassifier::logit(const Image& patch224) const {
    if (patch224.width != kInputSide || patch224.height != kInputSide) {
        throw std::invalid_argument("PatchClassifier: input must be 224x224x3");
    }
    const Tensor x = to_tensor(patch224, cfg_.mean, cfg_.stddev);
    return forward_net(x).v[0];
}

double PatchClassifier::classify(const Image& patch224) const {
    return sigmoid(logit(patch224));
}

double PatchClassifier::logit_train(const Image& patch224) {
    return logit(patch224);
}

void PatchClassifier::backward(double dlogit) {
    Tensor dy(1, 1, 1);
    dy.v[0] = static_cast<float>(dlogit);
    const Tensor dpooled = fc_.backward(dy);
    const int c = cfg_.channels3;
    Tensor davg(c, 1, 1), dmax(c, 1, 1);
    std::copy(dpooled.v.begin(), dpooled.v.begin() + c, davg.v.begin());
    std::copy(dpooled.v.begin() + c, dpooled.v.end(), dmax.v.begin());
    Tensor dx = gap_.backward(davg);
    const Tensor dx_max = gmp_.backward(dmax);
    for (std::size_t i = 0; i < dx.size(); ++i) {
        dx.v[i] += dx_max.v[i];
    }
    dx = c3_.backward(r3_.backward(dx));
    dx = c2_.backward(r2_.backward(dx));
    (void)c1_.backward(r1_.backward(dx));
}

std::vector<nn::ParamRef> PatchClassifier::params() {
    std::vector<nn::ParamRef> out;
    c1_.collect_params(out);
    c2_.collect_params(out);
    c3_.collect_params(out);
    fc_.collect_params(out);
    return out;
}

void PatchClassifier::save(const std::string& dir) const {
    fs::create_directories(dir);
    const std::vector<float> flat =
        nn::dump_params(const_cast<PatchClassifier*>(this)->params());
    write_params_bin((fs::path(dir) / "params.bin").string(), flat);
    json manifest{
        {"kind", "classifier"},
        {"format_version", 1},
        {"seed", cfg_.seed},
        {"backbone", cfg_.backbone},
        {"channels", {cfg_.channels1, cfg_.channels2, cfg_.channels3}},
        {"input_side", kInputSide},
        {"normalization",
         {{"mean", {cfg_.mean[0], cfg_.mean[1], cfg_.mean[2]}},
          {"std", {cfg_.stddev[0], cfg_.stddev[1], cfg_.stddev[2]}}}},
        {"params_fnv1a64", fnv1a64(flat.data(), flat.size() * sizeof(float))},
    };
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!out) {
        throw std::runtime_error("PatchClassifier::save: cannot write manifest in " + dir);
    }
    out << manifest.dump(2) << "\n";
}

PatchClassifier PatchClassifier::load(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!in) {
        throw std::runtime_error("PatchClassifier::load: cannot open manifest in " + dir);
    }
    json manifest;
    in >> manifest;
    if (manifest.value("kind", "") != "classifier") {
        throw std::runtime_error("PatchClassifier::load: checkpoint kind mismatch in " + dir);
    }
    ClassifierConfig cfg;
    cfg.seed = manifest.value("seed", 1ULL);
    cfg.backbone = manifest.value("backbone", "tiny");
    const auto& ch = manifest.at("channels");
    cfg.channels1 = ch.at(0).get<int>();
    cfg.channels2 = ch.at(1).get<int>();
    cfg.channels3 = ch.at(2).get<int>();
    const auto& norm = manifest.at("normalization");
    for (int i = 0; i < 3; ++i) {
        cfg.mean[i] = norm.at("mean").at(i).get<float>();
        cfg.stddev[i] = norm.at("std").at(i).get<float>();
    }

    PatchClassifier model(cfg);
    const std::vector<float> flat = read_params_bin((fs::path(dir) / "params.bin").string());
    const std::uint64_t want = manifest.at("params_fnv1a64").get<std::uint64_t>();
    if (want != fnv1a64(flat.data(), flat.size() * sizeof(float))) {
        throw std::runtime_error("PatchClassifier::load: params checksum mismatch in " + dir);
    }
    nn::load_params(model.params(), flat);
    return model;
}

double classify_patch(const PatchClassifier& model, const Image& patch224) {
    return model.classify(patch224);
}

double ensemble_predict(const EnsembleSpec& spec, const Image& patch224) {
    if (spec.members.empty()) {
        throw std::invalid_argument("ensemble_predict: empty member list");
    }
    double total = 0.0;
    for (const auto& member : spec.members) {
        total += member->score(patch224);
    }
    return total / static_cast<double>(spec.members.size());
}

void save_ensemble_manifest(const std::vector<std::string>& member_dirs,
                            const std::string& path) {
    json doc{{"members", member_dirs}, {"aggregation", "mean_prob"}};
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("save_ensemble_manifest: cannot write " + path);
    }
    out << doc.dump(2) << "\n";
}

std::vector<std::string> load_ensemble_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("load_ensemble_manifest: cannot open " + path);
    }
    json doc;
    in >> doc;
    if (doc.value("aggregation", "") != "mean_prob") {
        throw std::runtime_error("load_ensemble_manifest: unsupported aggregation in " + path);
    }
    return doc.at("members").get<std::vector<std::string>>();
}

void write_patch_predictions_jsonl(const std::vector<PatchPrediction>& preds,
                                   const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_patch_predictions_jsonl: cannot write " + path);
    }
    for (const PatchPrediction& p : preds) {
        json obj{{"patch_file", p.patch_file}, {"prob", p.prob}};
        if (p.label) {
            obj["label"] = *p.label;
        }
        out << obj.dump() << "\n";
    }
}

std::vector<PatchPrediction> read_patch_predictions_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("read_patch_predictions_jsonl: cannot open " + path);
    }
    std::vector<PatchPrediction> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const json obj = json::parse(line);
        PatchPrediction p;
        p.patch_file = obj.at("patch_file").get<std::string>();
        p.prob = obj.at("prob").get<double>();
        if (obj.contains("label") && !obj["label"].is_null()) {
            p.label = obj["label"].get<int>();
        }
        out.push_back(std::move(p));
    }
    return out;
}

ClassifierTrainConfig ClassifierTrainConfig::profile_defaults(TaskProfile p) {
    ClassifierTrainConfig cfg;
    cfg.profile = p;
    if (p == TaskProfile::RefineCls) {
        cfg.epochs = 100;
        cfg.batch_size = 16;
        cfg.optimizer = OptimizerKind::Sgd;
        cfg.lr = 0.01;  // not pinned by the recipe; local default
        cfg.momentum = 0.9;
        cfg.cosine_schedule = false;
    } else {
        cfg.epochs = 30;
        cfg.batch_size = 32;
        cfg.optimizer = OptimizerKind::Adam;
        cfg.lr = 3e-5;
        cfg.cosine_schedule = true;
    }
    return cfg;
}

}  // namespace mito::cls

// mitodet: two-stage mitotic figure detection and atypical-mitosis
// classification. Subcommands cover the whole workflow: synth (demo data),
// prepare (patch datasets + splits), train-detector, train-classifier,
// infer, evaluate, crossval.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure during training/inference.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mito/augment.hpp"
#include "mito/checkpoint.hpp"
#include "mito/classifier.hpp"
#include "mito/dataset.hpp"
#include "mito/detector.hpp"
#include "mito/eval.hpp"
#include "mito/jsonio.hpp"
#include "mito/pipeline.hpp"
#include "mito/synth.hpp"
#include "mito/types.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mito;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

/// Applies --config file values to options the user did not set on the
/// command line (precedence: defaults < config file < flags).
class ConfigLayer {
  public:
    template <typename T>
    void track(CLI::Option* opt, const std::string& key, T* target) {
        entries_[key] = Entry{opt, [target](const json& value) {
            if constexpr (std::is_same_v<T, std::string>) {
                *target = value.get<std::string>();
            } else if constexpr (std::is_same_v<T, bool>) {
                *target = value.get<bool>();
            } else {
                if (value.is_string()) {
                    std::stringstream ss(value.get<std::string>());
                    ss >> *target;
                    if (ss.fail()) {
                        throw CLI::ValidationError("--config", "cannot parse value");
                    }
                } else {
                    *target = value.get<T>();
                }
            }
        }};
    }

    void apply(const std::string& config_path, CLI::App* cmd) const {
        if (config_path.empty()) {
            return;
        }
        std::ifstream in(config_path, std::ios::binary);
        if (!in) {
            throw CLI::ValidationError("--config", "cannot open " + config_path);
        }
        json doc;
        try {
            in >> doc;
        } catch (const json::exception& e) {
            throw CLI::ValidationError("--config", std::string("invalid JSON: ") + e.what());
        }
        if (!doc.is_object()) {
            throw CLI::ValidationError("--config", "expected a JSON object");
        }
        for (const auto& [key, value] : doc.items()) {
            const auto it = entries_.find(key);
            if (it == entries_.end()) {
                throw CLI::ValidationError("--config", "unknown key \"" + key + "\" for " +
                                                           cmd->get_name());
            }
            if (it->second.opt->count() > 0) {
                continue;  // explicit flag wins
            }
            try {
                it->second.set(value);
            } catch (const json::exception& e) {
                throw CLI::ValidationError("--config",
                                           "key \"" + key + "\": " + e.what());
            }
        }
    }

  private:
    struct Entry {
        CLI::Option* opt;
        std::function<void(const json&)> set;
    };
    std::map<std::string, Entry> entries_;
};

template <typename T>
CLI::Option* opt_cfg(CLI::App* cmd, ConfigLayer& layer, const std::string& flag,
                     const std::string& key, T& target, const std::string& desc) {
    CLI::Option* o = cmd->add_option(flag, target, desc);
    layer.track(o, key, &target);
    return o;
}

CLI::Option* flag_cfg(CLI::App* cmd, ConfigLayer& layer, const std::string& flag,
                      const std::string& key, bool& target, const std::string& desc) {
    CLI::Option* o = cmd->add_flag(flag, target, desc);
    layer.track(o, key, &target);
    return o;
}

std::uint64_t file_checksum_or_zero(const std::string& path) {
    try {
        return fnv1a64_file(path);
    } catch (...) {
        return 0;
    }
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& effective_config, const std::vector<std::string>& inputs) {
    json inputs_obj = json::object();
    for (const std::string& p : inputs) {
        std::ostringstream hex;
        hex << std::hex << std::setw(16) << std::setfill('0') << file_checksum_or_zero(p);
        inputs_obj[p] = hex.str();
    }
    json doc{{"command", command}, {"config", effective_config}, {"inputs", inputs_obj}};
    std::ofstream out(fs::path(out_dir) / "manifest.json", std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write manifest.json under " + out_dir);
    }
    out << doc.dump(2) << "\n";
}

std::string resolve_path(const std::string& base_dir, const std::string& p) {
    const fs::path path(p);
    if (path.is_absolute() || base_dir.empty()) {
        return p;
    }
    return (fs::path(base_dir) / path).string();
}

det::ImageCache load_images(const AnnotationSet& set, const std::string& base_dir) {
    det::ImageCache cache;
    for (const ImageRecord& rec : set.images) {
        const std::string path = resolve_path(base_dir, rec.path);
        Image img = load_image(path);
        if (img.width != rec.width || img.height != rec.height) {
            throw ParseError("image " + rec.image_id + ": decoded size " +
                             std::to_string(img.width) + "x" + std::to_string(img.height) +
                             " does not match annotation record " + std::to_string(rec.width) +
                             "x" + std::to_string(rec.height));
        }
        cache.put(rec.image_id, std::move(img));
    }
    return cache;
}

std::vector<double> parse_ratio_spec(const std::string& text) {
    // "7:1:2" -> {0.7, 0.1, 0.2}
    std::vector<double> parts;
    std::stringstream ss(text);
    std::string item;
    double total = 0.0;
    while (std::getline(ss, item, ':')) {
        const double v = std::stod(item);
        if (v <= 0) {
            throw CLI::ValidationError("--split", "ratio parts must be positive");
        }
        parts.push_back(v);
        total += v;
    }
    if (parts.size() < 2) {
        throw CLI::ValidationError("--split", "expected at least two ratio parts (e.g. 7:1:2)");
    }
    for (double& v : parts) {
        v /= total;
    }
    return parts;
}

void parse_channels(const std::string& text, int& c1, int& c2, int& c3) {
    int vals[3];
    std::stringstream ss(text);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',') && i < 3) {
        vals[i++] = std::stoi(item);
    }
    if (i != 3) {
        throw CLI::ValidationError("--channels", "expected three comma-separated values");
    }
    c1 = vals[0];
    c2 = vals[1];
    c3 = vals[2];
}

// ---------------------------------------------------------------- synth ---

struct SynthArgs {
    std::string out;
    int images = 24;
    int width = 512;
    int height = 512;
    std::uint64_t seed = 1;
};

int run_synth(const SynthArgs& a) {
    synth::SceneConfig cfg;
    cfg.width = a.width;
    cfg.height = a.height;
    // object counts are tuned for 512x512; scale with area so small scenes
    // stay placeable under the separation constraint
    const double area_scale =
        (static_cast<double>(a.width) * a.height) / (512.0 * 512.0);
    if (area_scale < 1.0) {
        auto scale = [&](int v) { return std::max(1, static_cast<int>(v * area_scale)); };
        cfg.mitoses_min = scale(cfg.mitoses_min);
        cfg.mitoses_max = scale(cfg.mitoses_max);
        cfg.impostors_min = scale(cfg.impostors_min);
        cfg.impostors_max = scale(cfg.impostors_max);
        cfg.smudges_min = std::max(0, static_cast<int>(cfg.smudges_min * area_scale));
        cfg.smudges_max = std::max(1, static_cast<int>(cfg.smudges_max * area_scale));
    }
    const synth::SynthDataset ds = synth::make_dataset(cfg, a.images, a.seed);
    fs::create_directories(a.out);
    synth::write_dataset(ds, a.out);
    write_manifest(a.out, "synth",
                   json{{"images", a.images},
                        {"width", a.width},
                        {"height", a.height},
                        {"seed", a.seed}},
                   {});
    std::cout << "wrote " << a.images << " scenes to " << a.out << "\n";
    return kExitOk;
}

// -------------------------------------------------------------- prepare ---

struct PrepareArgs {
    std::string ann;
    std::string images_dir;
    std::string out;
    std::string task = "refine";
    std::string split = "7:1:2";
    int patch_side = 50;
    std::uint64_t seed = 1;
};

int run_prepare(const PrepareArgs& a) {
    const AnnotationSet set = parse_annotations(a.ann);
    if (set.annotations.empty()) {
        throw ParseError(a.ann + ": no annotations");
    }
    const std::string base =
        a.images_dir.empty() ? fs::path(a.ann).parent_path().string() : a.images_dir;
    const det::ImageCache cache = load_images(set, base);

    const bool atypical = a.task == "atypical";
    std::vector<PatchSample> samples;
    for (const PointAnnotation& ann : set.annotations) {
        std::optional<int> label;
        if (atypical) {
            if (ann.category != Category::Mitotic || !ann.subtype.has_value()) {
                continue;
            }
            label = *ann.subtype == Subtype::Atypical ? 1 : 0;
        } else {
            label = ann.category == Category::Mitotic ? 1 : 0;
        }
        const ImageRecord* rec = set.find_image(ann.image_id);
        PatchSample s =
            extract_patch(*rec, *cache.find(ann.image_id), ann.x, ann.y, a.patch_side);
        s.label = label;
        samples.push_back(std::move(s));
    }
    if (samples.empty()) {
        throw ParseError(a.ann + ": no usable annotations for task " + a.task);
    }

    fs::create_directories(a.out);
    write_patch_dataset(samples, a.out);

    // image-level split; patches follow their source image
    SplitSpec spec;
    spec.ratios = parse_ratio_spec(a.split);
    spec.seed = a.seed;
    const std::vector<AnnotationSet> splits = split_dataset(set, spec);
    const char* names[3] = {"train", "val", "test"};
    json split_doc{{"seed", a.seed}, {"ratios", spec.ratios}};
    for (std::size_t i = 0; i < splits.size(); ++i) {
        std::vector<std::string> ids;
        for (const ImageRecord& r : splits[i].images) {
            ids.push_back(r.image_id);
        }
        std::sort(ids.begin(), ids.end());
        const std::string name =
            splits.size() <= 3 ? names[i] : "split" + std::to_string(i);
        split_doc[name] = ids;
    }
    {
        std::ofstream out(fs::path(a.out) / "splits.json", std::ios::binary);
        out << split_doc.dump(2) << "\n";
    }

    // per-channel stats over the emitted patches, for classifier normalization
    std::vector<Image> patch_images;
    patch_images.reserve(samples.size());
    for (const PatchSample& s : samples) {
        patch_images.push_back(s.pixels);
    }
    const ChannelStats stats = compute_channel_stats(patch_images);
    {
        json stats_doc{{"mean", {stats.mean[0], stats.mean[1], stats.mean[2]}},
                       {"std", {stats.stddev[0], stats.stddev[1], stats.stddev[2]}}};
        std::ofstream out(fs::path(a.out) / "stats.json", std::ios::binary);
        out << stats_doc.dump(2) << "\n";
    }

    write_manifest(a.out, "prepare",
                   json{{"ann", a.ann},
                        {"task", a.task},
                        {"split", a.split},
                        {"patch_side", a.patch_side},
                        {"seed", a.seed}},
                   {a.ann});
    std::cout << "wrote " << samples.size() << " patches to " << a.out << "\n";
    return kExitOk;
}

// ------------------------------------------------------- train-detector ---

struct TrainDetectorArgs {
    std::string ann;
    std::string images_dir;
    std::string out;
    int epochs = 150;
    int batch = 8;
    double lr = 1e-3;
    double val_frac = 0.2;
    int crop = 256;
    double box_side = 50.0;
    std::string channels = "8,16,32";
    std::uint64_t seed = 1;
};

int run_train_detector(const TrainDetectorArgs& a) {
    const AnnotationSet set = parse_annotations(a.ann);
    const std::string base =
        a.images_dir.empty() ? fs::path(a.ann).parent_path().string() : a.images_dir;
    const det::ImageCache cache = load_images(set, base);

    det::DetectorTrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.lr = a.lr;
    cfg.seed = a.seed;
    cfg.crop = a.crop;
    cfg.box_side = a.box_side;
    cfg.model.seed = a.seed;
    parse_channels(a.channels, cfg.model.channels1, cfg.model.channels2, cfg.model.channels3);

    SplitSpec spec;
    spec.ratios = {1.0 - a.val_frac, a.val_frac};
    spec.seed = a.seed;
    const std::vector<AnnotationSet> splits = split_dataset(set, spec);

    const det::TrainedDetector trained = det::train_detector(splits[0], splits[1], cfg, &cache);

    fs::create_directories(a.out);
    trained.model.save((fs::path(a.out) / "checkpoint").string());
    {
        std::ofstream log(fs::path(a.out) / "train_log.csv", std::ios::binary);
        log << "epoch,train_loss,val_f1\n";
        for (const det::EpochLog& row : trained.log) {
            log << row.epoch << "," << row.train_loss << "," << row.val_metric << "\n";
        }
    }
    write_manifest(a.out, "train-detector",
                   json{{"ann", a.ann},
                        {"epochs", a.epochs},
                        {"batch_size", a.batch},
                        {"optimizer", "adam"},
                        {"lr", a.lr},
                        {"val_frac", a.val_frac},
                        {"crop", a.crop},
                        {"box_side", a.box_side},
                        {"channels", a.channels},
                        {"seed", a.seed}},
                   {a.ann});
    if (!trained.log.empty()) {
        std::cout << "final epoch " << trained.log.back().epoch << ": loss "
                  << trained.log.back().train_loss << ", val F1 "
                  << trained.log.back().val_metric << "\n";
    }
    std::cout << "checkpoint written to " << (fs::path(a.out) / "checkpoint").string() << "\n";
    return kExitOk;
}

// ----------------------------------------------------- train-classifier ---

struct TrainClassifierArgs {
    std::string data;
    std::string out;
    std::string profile = "atypical";
    int epochs = -1;  // -1: profile default
    int batch = -1;
    double lr = 0.0;  // 0: profile default
    bool augment = false;
    std::string channels = "6,12,24";
    std::uint64_t seed = 1;
};

std::array<float, 3> stats_mean(const json& stats) {
    return {stats.at("mean").at(0).get<float>(), stats.at("mean").at(1).get<float>(),
            stats.at("mean").at(2).get<float>()};
}

std::array<float, 3> stats_std(const json& stats) {
    return {stats.at("std").at(0).get<float>(), stats.at("std").at(1).get<float>(),
            stats.at("std").at(2).get<float>()};
}

cls::ClassifierTrainConfig classifier_config(const TrainClassifierArgs& a) {
    const cls::TaskProfile profile =
        a.profile == "refine" ? cls::TaskProfile::RefineCls : cls::TaskProfile::AtypicalCls;
    cls::ClassifierTrainConfig cfg = cls::ClassifierTrainConfig::profile_defaults(profile);
    if (a.epochs >= 0) {
        cfg.epochs = a.epochs;
    }
    if (a.batch > 0) {
        cfg.batch_size = a.batch;
    }
    if (a.lr > 0) {
        cfg.lr = a.lr;
    }
    cfg.seed = a.seed;
    cfg.augment_enabled = a.augment;
    cfg.model.seed = a.seed;
    parse_channels(a.channels, cfg.model.channels1, cfg.model.channels2, cfg.model.channels3);

    const fs::path stats_path = fs::path(a.data) / "stats.json";
    if (fs::exists(stats_path)) {
        std::ifstream in(stats_path, std::ios::binary);
        json stats;
        in >> stats;
        cfg.model.mean = stats_mean(stats);
        cfg.model.stddev = stats_std(stats);
    }
    return cfg;
}

/// train/val membership from splits.json; falls back to an 8:2 image split.
void split_patches(const std::string& data_dir, const std::vector<PatchSample>& all,
                   std::uint64_t seed, std::vector<PatchSample>& train,
                   std::vector<PatchSample>& val) {
    std::set<std::string> train_ids, val_ids;
    const fs::path splits_path = fs::path(data_dir) / "splits.json";
    if (fs::exists(splits_path)) {
        std::ifstream in(splits_path, std::ios::binary);
        json doc;
        in >> doc;
        for (const auto& id : doc.value("train", json::array())) {
            train_ids.insert(id.get<std::string>());
        }
        for (const auto& id : doc.value("val", json::array())) {
            val_ids.insert(id.get<std::string>());
        }
    } else {
        std::set<std::string> ids;
        for (const PatchSample& s : all) {
            ids.insert(s.source_image_id);
        }
        std::vector<std::string> ordered(ids.begin(), ids.end());
        Rng rng(seed);
        rng.shuffle(ordered);
        const std::size_t n_val = std::max<std::size_t>(1, ordered.size() / 5);
        for (std::size_t i = 0; i < ordered.size(); ++i) {
            (i < ordered.size() - n_val ? train_ids : val_ids).insert(ordered[i]);
        }
    }
    for (const PatchSample& s : all) {
        if (train_ids.count(s.source_image_id) != 0) {
            train.push_back(s);
        } else if (val_ids.count(s.source_image_id) != 0) {
            val.push_back(s);
        }
    }
}

int run_train_classifier(const TrainClassifierArgs& a) {
    const PatchDataset ds = open_patch_dataset(a.data);
    const std::vector<PatchSample> all = ds.load_samples();
    std::vector<PatchSample> train, val;
    split_patches(a.data, all, a.seed, train, val);
    if (train.empty()) {
        throw ParseError(a.data + ": no training patches after applying splits");
    }

    const cls::ClassifierTrainConfig cfg = classifier_config(a);
    const cls::TrainedClassifier trained = cls::train_classifier(train, val, cfg);

    fs::create_directories(a.out);
    trained.model.save((fs::path(a.out) / "checkpoint").string());
    {
        std::ofstream log(fs::path(a.out) / "train_log.csv", std::ios::binary);
        log << "epoch,train_loss,val_balanced_accuracy\n";
        for (const cls::ClassifierEpochLog& row : trained.log) {
            log << row.epoch << "," << row.train_loss << "," << row.val_balanced_accuracy
                << "\n";
        }
    }
    {
        std::vector<cls::PatchPrediction> preds;
        for (const PatchSample& s : val) {
            cls::PatchPrediction p;
            p.patch_file = s.source_image_id;
            p.prob = trained.model.classify(resize_to_input(s));
            p.label = s.label;
            preds.push_back(std::move(p));
        }
        cls::write_patch_predictions_jsonl(
            preds, (fs::path(a.out) / "val_predictions.jsonl").string());
    }
    write_manifest(a.out, "train-classifier",
                   json{{"data", a.data},
                        {"profile", a.profile},
                        {"epochs", cfg.epochs},
                        {"batch_size", cfg.batch_size},
                        {"optimizer", cfg.optimizer == cls::OptimizerKind::Adam ? "adam" : "sgd"},
                        {"lr", cfg.lr},
                        {"schedule", cfg.cosine_schedule ? "cosine" : "constant"},
                        {"augment", a.augment},
                        {"channels", a.channels},
                        {"seed", a.seed}},
                   {(fs::path(a.data) / "index.json").string()});
    if (!trained.log.empty()) {
        std::cout << "final epoch " << trained.log.back().epoch << ": loss "
                  << trained.log.back().train_loss << ", val balanced accuracy "
                  << trained.log.back().val_balanced_accuracy << "\n";
    }
    std::cout << "checkpoint written to " << (fs::path(a.out) / "checkpoint").string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------- infer ---

struct InferArgs {
    std::string images_dir;
    std::string detector;
    std::vector<std::string> classifiers;
    std::string ensemble_manifest;
    std::string out;
    std::string stage = "two-stage";
    double tau_d = 0.5;
    double tau_c = 0.5;
    int tile_size = 512;
    int overlap = 64;
    double dedupe_radius = 7.5;
    int patch_side = 50;
};

int run_infer(const InferArgs& a) {
    pipe::PipelineConfig cfg;
    cfg.tau_d = a.tau_d;
    cfg.tau_c = a.tau_c;
    cfg.tile_size = a.tile_size;
    cfg.tile_overlap = a.overlap;
    cfg.dedupe_radius = a.dedupe_radius;
    cfg.patch_side = a.patch_side;
    cfg.validate();

    const det::DetectorModel detector = det::DetectorModel::load(a.detector);

    cls::EnsembleSpec ensemble;
    std::vector<std::string> member_dirs = a.classifiers;
    if (!a.ensemble_manifest.empty()) {
        const std::vector<std::string> from_manifest =
            cls::load_ensemble_manifest(a.ensemble_manifest);
        const std::string base = fs::path(a.ensemble_manifest).parent_path().string();
        for (const std::string& dir : from_manifest) {
            member_dirs.push_back(resolve_path(base, dir));
        }
    }
    for (const std::string& dir : member_dirs) {
        ensemble.members.push_back(
            std::make_shared<cls::PatchClassifier>(cls::PatchClassifier::load(dir)));
    }
    const bool two_stage = a.stage == "two-stage";
    if (two_stage && ensemble.members.empty()) {
        throw CLI::ValidationError("--classifier",
                                   "two-stage inference needs at least one classifier "
                                   "(or use --stage detector-only)");
    }

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(a.images_dir)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        const std::string ext = entry.path().extension().string();
        if (ext == ".png" || ext == ".tif" || ext == ".tiff" || ext == ".jpg") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) {
        throw ParseError(a.images_dir + ": no image files");
    }

    std::vector<Detection> all;
    for (const fs::path& file : files) {
        const Image img = load_image(file.string());
        const std::string image_id = file.stem().string();
        std::vector<Detection> dets =
            two_stage ? pipe::run_two_stage(img, detector, ensemble, cfg, image_id)
                      : pipe::run_detector_only(img, detector, cfg, image_id);
        all.insert(all.end(), dets.begin(), dets.end());
    }

    fs::create_directories(a.out);
    write_detections_jsonl(all, (fs::path(a.out) / "predictions.jsonl").string());
    std::vector<std::string> inputs{(fs::path(a.detector) / "params.bin").string()};
    for (const std::string& dir : member_dirs) {
        inputs.push_back((fs::path(dir) / "params.bin").string());
    }
    write_manifest(a.out, "infer",
                   json{{"images", a.images_dir},
                        {"detector", a.detector},
                        {"classifiers", member_dirs},
                        {"stage", a.stage},
                        {"tau_d", a.tau_d},
                        {"tau_c", a.tau_c},
                        {"tile_size", a.tile_size},
                        {"overlap", a.overlap},
                        {"dedupe_radius", a.dedupe_radius},
                        {"patch_side", a.patch_side}},
                   inputs);
    std::cout << "wrote " << all.size() << " detections for " << files.size() << " images\n";
    return kExitOk;
}

// ------------------------------------------------------------- evaluate ---

struct EvaluateArgs {
    std::string pred;
    std::string compare;
    std::string gt;
    std::string out;
    double radius = 30.0;
    std::string threshold = "fixed:0.5";
};

struct ThresholdMode {
    bool best_f1 = false;
    double fixed = 0.5;
};

ThresholdMode parse_threshold(const std::string& text) {
    ThresholdMode mode;
    if (text == "best-f1") {
        mode.best_f1 = true;
        return mode;
    }
    if (text.rfind("fixed:", 0) == 0) {
        mode.fixed = std::stod(text.substr(6));
        if (!(mode.fixed >= 0.0 && mode.fixed <= 1.0)) {
            throw CLI::ValidationError("--threshold", "fixed threshold must lie in [0,1]");
        }
        return mode;
    }
    throw CLI::ValidationError("--threshold", "expected fixed:<v> or best-f1");
}

json evaluate_stage(const std::string& name, const std::vector<Detection>& dets,
                    const std::vector<PointAnnotation>& gts, double radius,
                    const ThresholdMode& mode,
                    std::vector<std::pair<double, double>>* curve) {
    double threshold = mode.fixed;
    if (mode.best_f1) {
        std::vector<double> scores;
        for (const Detection& d : dets) {
            scores.push_back(d.score);
        }
        std::sort(scores.begin(), scores.end(), std::greater<>());
        scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
        double best_f1 = -1.0;
        threshold = 1.0;
        for (double cand : scores) {
            std::vector<Detection> kept;
            for (const Detection& d : dets) {
                if (d.score >= cand) {
                    kept.push_back(d);
                }
            }
            const eval::MatchResult m = eval::match_all(kept, gts, radius);
            const double f1 = eval::f1_from_counts(m.tp, m.fp, m.fn);
            if (f1 > best_f1) {
                best_f1 = f1;
                threshold = cand;
            }
        }
    }

    std::vector<Detection> kept;
    for (const Detection& d : dets) {
        if (d.score >= threshold) {
            kept.push_back(d);
        }
    }
    const eval::MatchResult m = eval::match_all(kept, gts, radius);
    const double ap = dets.empty() ? 0.0 : eval::average_precision(dets, gts, radius);
    if (curve != nullptr && !dets.empty()) {
        *curve = eval::precision_recall_curve(dets, gts, radius);
    }
    return json{{"name", name},
                {"threshold", threshold},
                {"tp", m.tp},
                {"fp", m.fp},
                {"fn", m.fn},
                {"f1", eval::f1_from_counts(m.tp, m.fp, m.fn)},
                {"precision", eval::precision_from_counts(m.tp, m.fp)},
                {"recall", eval::recall_from_counts(m.tp, m.fn)},
                {"ap", ap}};
}

void check_pred_ids(const std::vector<Detection>& dets, const AnnotationSet& gt,
                    const std::string& pred_path) {
    std::set<std::string> known;
    for (const ImageRecord& r : gt.images) {
        known.insert(r.image_id);
    }
    std::set<std::string> offenders;
    for (const Detection& d : dets) {
        if (known.count(d.image_id) == 0) {
            offenders.insert(d.image_id);
        }
    }
    if (!offenders.empty()) {
        std::ostringstream os;
        os << pred_path << ": image_ids absent from ground truth:";
        for (const std::string& id : offenders) {
            os << " " << id;
        }
        throw ParseError(os.str());
    }
}

int run_evaluate(const EvaluateArgs& a) {
    const ThresholdMode mode = parse_threshold(a.threshold);
    const AnnotationSet gt_set = parse_annotations(a.gt);
    std::vector<PointAnnotation> gts;
    for (const PointAnnotation& p : gt_set.annotations) {
        if (p.category == Category::Mitotic) {
            gts.push_back(p);
        }
    }
    if (gts.empty()) {
        throw ParseError(a.gt + ": no mitotic ground-truth points");
    }

    const std::vector<Detection> preds = read_detections_jsonl(a.pred);
    check_pred_ids(preds, gt_set, a.pred);

    std::vector<std::pair<double, double>> curve;
    json stages = json::array();
    stages.push_back(evaluate_stage(a.compare.empty() ? "predictions" : "detector", preds, gts,
                                    a.radius, mode, &curve));
    if (!a.compare.empty()) {
        const std::vector<Detection> preds2 = read_detections_jsonl(a.compare);
        check_pred_ids(preds2, gt_set, a.compare);
        stages.push_back(evaluate_stage("pipeline", preds2, gts, a.radius, mode, nullptr));
    }

    json report{{"radius", a.radius},
                {"threshold_mode", a.threshold},
                {"n_ground_truth", gts.size()},
                {"stages", stages}};

    // all computation done; only now touch the output directory
    fs::create_directories(a.out);
    {
        std::ofstream out(fs::path(a.out) / "report.json", std::ios::binary);
        out << report.dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(a.out) / "pr_curve.csv", std::ios::binary);
        out << "recall,precision\n";
        for (const auto& [r, p] : curve) {
            out << r << "," << p << "\n";
        }
    }
    write_manifest(a.out, "evaluate",
                   json{{"pred", a.pred},
                        {"compare", a.compare},
                        {"gt", a.gt},
                        {"radius", a.radius},
                        {"threshold", a.threshold}},
                   {a.pred, a.gt});

    std::cout << std::left << std::setw(12) << "stage" << std::right << std::setw(8) << "F1"
              << std::setw(8) << "AP" << std::setw(10) << "prec" << std::setw(8) << "rec"
              << std::setw(6) << "tp" << std::setw(6) << "fp" << std::setw(6) << "fn"
              << "\n";
    for (const auto& s : stages) {
        std::cout << std::left << std::setw(12) << s["name"].get<std::string>() << std::right
                  << std::fixed << std::setprecision(4) << std::setw(8)
                  << s["f1"].get<double>() << std::setw(8) << s["ap"].get<double>()
                  << std::setw(10) << s["precision"].get<double>() << std::setw(8)
                  << s["recall"].get<double>() << std::setw(6) << s["tp"].get<int>()
                  << std::setw(6) << s["fp"].get<int>() << std::setw(6) << s["fn"].get<int>()
                  << "\n";
    }
    return kExitOk;
}

// ------------------------------------------------------------- crossval ---

struct CrossvalArgs {
    std::string data;
    std::string out;
    int k = 4;
    std::string profile = "atypical";
    int epochs = -1;
    int batch = -1;
    double lr = 0.0;
    bool augment = false;
    std::string channels = "6,12,24";
    std::uint64_t seed = 1;
};

int run_crossval(const CrossvalArgs& a) {
    if (a.k < 2) {
        throw CLI::ValidationError("--k", "k must be >= 2");
    }
    const PatchDataset ds = open_patch_dataset(a.data);
    const std::vector<PatchSample> all = ds.load_samples();

    // fold by source image, never by patch, to avoid same-slide leakage
    std::set<std::string> id_set;
    for (const PatchSample& s : all) {
        id_set.insert(s.source_image_id);
    }
    std::vector<std::string> ids(id_set.begin(), id_set.end());
    if (static_cast<int>(ids.size()) < a.k) {
        throw CLI::ValidationError("--k", "k exceeds the number of source images");
    }
    Rng rng(a.seed);
    rng.shuffle(ids);
    std::vector<std::set<std::string>> folds(a.k);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        folds[i % a.k].insert(ids[i]);
    }

    TrainClassifierArgs targs;
    targs.profile = a.profile;
    targs.epochs = a.epochs;
    targs.batch = a.batch;
    targs.lr = a.lr;
    targs.augment = a.augment;
    targs.channels = a.channels;
    targs.seed = a.seed;
    targs.data = a.data;

    std::vector<double> fold_scores;
    json fold_rows = json::array();
    fs::create_directories(a.out);
    for (int f = 0; f < a.k; ++f) {
        std::vector<PatchSample> train, val;
        for (const PatchSample& s : all) {
            (folds[f].count(s.source_image_id) != 0 ? val : train).push_back(s);
        }
        auto has_both = [](const std::vector<PatchSample>& v) {
            bool pos = false, neg = false;
            for (const PatchSample& s : v) {
                (s.label.value_or(0) == 1 ? pos : neg) = true;
            }
            return pos && neg;
        };
        if (!has_both(train) || !has_both(val)) {
            throw ParseError("crossval: fold " + std::to_string(f) +
                             " has a single class; cannot evaluate balanced accuracy");
        }
        cls::ClassifierTrainConfig cfg = classifier_config(targs);
        cfg.seed = Rng::mix(a.seed, static_cast<std::uint64_t>(f));
        cfg.model.seed = cfg.seed;
        const cls::TrainedClassifier trained = cls::train_classifier(train, val, cfg);

        std::vector<int> preds, labels;
        std::vector<cls::PatchPrediction> dump;
        for (const PatchSample& s : val) {
            const double p = trained.model.classify(resize_to_input(s));
            preds.push_back(p >= 0.5 ? 1 : 0);
            labels.push_back(*s.label);
            cls::PatchPrediction pp;
            pp.patch_file = s.source_image_id;
            pp.prob = p;
            pp.label = s.label;
            dump.push_back(std::move(pp));
        }
        const double bacc = eval::balanced_accuracy(preds, labels);
        fold_scores.push_back(bacc);
        fold_rows.push_back(json{{"fold", f}, {"balanced_accuracy", bacc}});
        cls::write_patch_predictions_jsonl(
            dump,
            (fs::path(a.out) / ("fold" + std::to_string(f) + "_predictions.jsonl")).string());
        std::cout << "fold " << f << ": balanced accuracy " << std::fixed
                  << std::setprecision(4) << bacc << "\n";
    }

    const auto [mean, stddev] = eval::aggregate_folds(fold_scores);
    std::cout << "aggregate: " << std::fixed << std::setprecision(4) << mean << " +/- "
              << stddev << "\n";

    json report{{"k", a.k}, {"folds", fold_rows}, {"mean", mean}, {"std", stddev}};
    {
        std::ofstream out(fs::path(a.out) / "crossval_report.json", std::ios::binary);
        out << report.dump(2) << "\n";
    }
    write_manifest(a.out, "crossval",
                   json{{"data", a.data},
                        {"k", a.k},
                        {"profile", a.profile},
                        {"epochs", a.epochs},
                        {"batch", a.batch},
                        {"lr", a.lr},
                        {"augment", a.augment},
                        {"channels", a.channels},
                        {"seed", a.seed}},
                   {(fs::path(a.data) / "index.json").string()});
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage mitotic figure detection and atypical mitosis classification"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    PrepareArgs prepare_args;
    TrainDetectorArgs td_args;
    TrainClassifierArgs tc_args;
    InferArgs infer_args;
    EvaluateArgs eval_args;
    CrossvalArgs cv_args;

    std::string config_path;
    ConfigLayer synth_cfg, prepare_cfg, td_cfg, tc_cfg, infer_cfg, eval_cfg, cv_cfg;

    CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic demo dataset");
    c_synth->add_option("--out", synth_args.out, "output directory")->required();
    opt_cfg(c_synth, synth_cfg, "--images", "images", synth_args.images, "number of scenes");
    opt_cfg(c_synth, synth_cfg, "--width", "width", synth_args.width, "scene width");
    opt_cfg(c_synth, synth_cfg, "--height", "height", synth_args.height, "scene height");
    opt_cfg(c_synth, synth_cfg, "--seed", "seed", synth_args.seed, "RNG seed");

    CLI::App* c_prepare =
        app.add_subcommand("prepare", "extract labeled patches and write splits");
    c_prepare->add_option("--ann", prepare_args.ann, "annotation JSON")->required();
    c_prepare->add_option("--images", prepare_args.images_dir,
                          "image directory (default: annotation file directory)");
    c_prepare->add_option("--out", prepare_args.out, "output directory")->required();
    opt_cfg(c_prepare, prepare_cfg, "--task", "task", prepare_args.task, "refine | atypical")
        ->check(CLI::IsMember({"refine", "atypical"}));
    opt_cfg(c_prepare, prepare_cfg, "--split", "split", prepare_args.split,
            "ratio spec, e.g. 7:1:2");
    opt_cfg(c_prepare, prepare_cfg, "--patch-side", "patch_side", prepare_args.patch_side,
            "patch side in pixels");
    opt_cfg(c_prepare, prepare_cfg, "--seed", "seed", prepare_args.seed, "RNG seed");

    CLI::App* c_td = app.add_subcommand("train-detector", "train the stage-1 detector");
    c_td->add_option("--ann", td_args.ann, "annotation JSON")->required();
    c_td->add_option("--images", td_args.images_dir, "image directory");
    c_td->add_option("--out", td_args.out, "output directory")->required();
    opt_cfg(c_td, td_cfg, "--epochs", "epochs", td_args.epochs, "training epochs");
    opt_cfg(c_td, td_cfg, "--batch", "batch_size", td_args.batch, "batch size");
    opt_cfg(c_td, td_cfg, "--lr", "lr", td_args.lr, "learning rate");
    opt_cfg(c_td, td_cfg, "--val-frac", "val_frac", td_args.val_frac, "validation fraction");
    opt_cfg(c_td, td_cfg, "--crop", "crop", td_args.crop, "training crop side");
    opt_cfg(c_td, td_cfg, "--box-side", "box_side", td_args.box_side,
            "square box side for point annotations");
    opt_cfg(c_td, td_cfg, "--channels", "channels", td_args.channels, "trunk widths c1,c2,c3");
    opt_cfg(c_td, td_cfg, "--seed", "seed", td_args.seed, "RNG seed");

    CLI::App* c_tc = app.add_subcommand("train-classifier", "train a patch classifier");
    c_tc->add_option("--data", tc_args.data, "prepared patch dataset directory")->required();
    c_tc->add_option("--out", tc_args.out, "output directory")->required();
    opt_cfg(c_tc, tc_cfg, "--profile", "profile", tc_args.profile, "refine | atypical")
        ->check(CLI::IsMember({"refine", "atypical"}));
    opt_cfg(c_tc, tc_cfg, "--epochs", "epochs", tc_args.epochs, "training epochs");
    opt_cfg(c_tc, tc_cfg, "--batch", "batch_size", tc_args.batch, "batch size");
    opt_cfg(c_tc, tc_cfg, "--lr", "lr", tc_args.lr, "learning rate");
    flag_cfg(c_tc, tc_cfg, "--augment", "augment", tc_args.augment,
             "enable training augmentation");
    opt_cfg(c_tc, tc_cfg, "--channels", "channels", tc_args.channels, "net widths c1,c2,c3");
    opt_cfg(c_tc, tc_cfg, "--seed", "seed", tc_args.seed, "RNG seed");

    CLI::App* c_infer = app.add_subcommand("infer", "run detection on a directory of images");
    c_infer->add_option("--images", infer_args.images_dir, "image directory")->required();
    c_infer->add_option("--detector", infer_args.detector, "detector checkpoint dir")
        ->required();
    c_infer->add_option("--classifier", infer_args.classifiers,
                        "classifier checkpoint dir (repeatable)");
    c_infer->add_option("--ensemble", infer_args.ensemble_manifest,
                        "ensemble manifest JSON listing member checkpoints");
    c_infer->add_option("--out", infer_args.out, "output directory")->required();
    opt_cfg(c_infer, infer_cfg, "--stage", "stage", infer_args.stage,
            "two-stage | detector-only")
        ->check(CLI::IsMember({"two-stage", "detector-only"}));
    opt_cfg(c_infer, infer_cfg, "--tau-d", "tau_d", infer_args.tau_d,
            "detector candidate threshold");
    opt_cfg(c_infer, infer_cfg, "--tau-c", "tau_c", infer_args.tau_c,
            "classifier confirmation threshold");
    opt_cfg(c_infer, infer_cfg, "--tile-size", "tile_size", infer_args.tile_size, "tile side");
    opt_cfg(c_infer, infer_cfg, "--overlap", "overlap", infer_args.overlap, "tile overlap");
    opt_cfg(c_infer, infer_cfg, "--dedupe-radius", "dedupe_radius", infer_args.dedupe_radius,
            "cross-tile dedupe radius");
    opt_cfg(c_infer, infer_cfg, "--patch-side", "patch_side", infer_args.patch_side,
            "classifier crop side");

    CLI::App* c_eval =
        app.add_subcommand("evaluate", "score predictions against ground truth");
    c_eval->add_option("--pred", eval_args.pred, "predictions JSONL")->required();
    c_eval->add_option("--compare", eval_args.compare,
                       "second predictions JSONL for a side-by-side table");
    c_eval->add_option("--gt", eval_args.gt, "ground-truth annotation JSON")->required();
    c_eval->add_option("--out", eval_args.out, "output directory")->required();
    opt_cfg(c_eval, eval_cfg, "--radius", "radius", eval_args.radius,
            "matching radius in px");
    opt_cfg(c_eval, eval_cfg, "--threshold", "threshold", eval_args.threshold,
            "fixed:<v> or best-f1");

    CLI::App* c_cv =
        app.add_subcommand("crossval", "k-fold cross-validation of a classifier");
    c_cv->add_option("--data", cv_args.data, "prepared patch dataset directory")->required();
    c_cv->add_option("--out", cv_args.out, "output directory")->required();
    opt_cfg(c_cv, cv_cfg, "--k", "k", cv_args.k, "number of folds");
    opt_cfg(c_cv, cv_cfg, "--profile", "profile", cv_args.profile, "refine | atypical")
        ->check(CLI::IsMember({"refine", "atypical"}));
    opt_cfg(c_cv, cv_cfg, "--epochs", "epochs", cv_args.epochs, "training epochs");
    opt_cfg(c_cv, cv_cfg, "--batch", "batch_size", cv_args.batch, "batch size");
    opt_cfg(c_cv, cv_cfg, "--lr", "lr", cv_args.lr, "learning rate");
    flag_cfg(c_cv, cv_cfg, "--augment", "augment", cv_args.augment,
             "enable training augmentation");
    opt_cfg(c_cv, cv_cfg, "--channels", "channels", cv_args.channels, "net widths c1,c2,c3");
    opt_cfg(c_cv, cv_cfg, "--seed", "seed", cv_args.seed, "RNG seed");

    for (CLI::App* sub : {c_synth, c_prepare, c_td, c_tc, c_infer, c_eval, c_cv}) {
        sub->add_option("--config", config_path,
                        "JSON config file (defaults < file < flags)");
    }

    try {
        app.parse(argc, argv);
        if (c_synth->parsed()) {
            synth_cfg.apply(config_path, c_synth);
            return run_synth(synth_args);
        }
        if (c_prepare->parsed()) {
            prepare_cfg.apply(config_path, c_prepare);
            return run_prepare(prepare_args);
        }
        if (c_td->parsed()) {
            td_cfg.apply(config_path, c_td);
            return run_train_detector(td_args);
        }
        if (c_tc->parsed()) {
            tc_cfg.apply(config_path, c_tc);
            return run_train_classifier(tc_args);
        }
        if (c_infer->parsed()) {
            infer_cfg.apply(config_path, c_infer);
            return run_infer(infer_args);
        }
        if (c_eval->parsed()) {
            eval_cfg.apply(config_path, c_eval);
            return run_evaluate(eval_args);
        }
        if (c_cv->parsed()) {
            cv_cfg.apply(config_path, c_cv);
            return run_crossval(cv_args);
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}

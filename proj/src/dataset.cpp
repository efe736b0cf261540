#include "mito/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mito/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mito {

namespace {

Category parse_category(const std::string& s, std::size_t record_index) {
    if (s == "mitotic figure") {
        return Category::Mitotic;
    }
    if (s == "hard negative") {
        return Category::Impostor;
    }
    std::ostringstream os;
    os << "annotation " << record_index << ": unknown category \"" << s << "\"";
    throw ParseError(os.str());
}

Subtype parse_subtype(const std::string& s, std::size_t record_index) {
    if (s == "normal") {
        return Subtype::Normal;
    }
    if (s == "atypical") {
        return Subtype::Atypical;
    }
    std::ostringstream os;
    os << "annotation " << record_index << ": unknown subtype \"" << s << "\"";
    throw ParseError(os.str());
}

/// Subset of `set` restricted to the images whose index is selected.
AnnotationSet take_images(const AnnotationSet& set, const std::vector<std::size_t>& idx) {
    AnnotationSet out;
    std::set<std::string> ids;
    for (std::size_t i : idx) {
        out.images.push_back(set.images[i]);
        ids.insert(set.images[i].image_id);
    }
    for (const PointAnnotation& a : set.annotations) {
        if (ids.count(a.image_id) != 0) {
            out.annotations.push_back(a);
        }
    }
    return out;
}

}  // namespace

const ImageRecord* AnnotationSet::find_image(const std::string& image_id) const {
    for (const ImageRecord& r : images) {
        if (r.image_id == image_id) {
            return &r;
        }
    }
    return nullptr;
}

AnnotationSet parse_annotations_text(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("annotation file: invalid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("images") || !doc.contains("annotations")) {
        throw ParseError("annotation file: expected object with \"images\" and \"annotations\"");
    }

    AnnotationSet set;
    std::set<std::string> seen_ids;
    for (std::size_t i = 0; i < doc["images"].size(); ++i) {
        const json& im = doc["images"][i];
        ImageRecord rec;
        try {
            rec.image_id = im.at("id").get<std::string>();
            rec.path = im.at("file_name").get<std::string>();
            rec.width = im.at("width").get<int>();
            rec.height = im.at("height").get<int>();
            if (im.contains("domain") && !im["domain"].is_null()) {
                rec.domain_tag = im["domain"].get<std::string>();
            }
        } catch (const json::exception& e) {
            std::ostringstream os;
            os << "image " << i << ": " << e.what();
            throw ParseError(os.str());
        }
        if (rec.width <= 0 || rec.height <= 0) {
            std::ostringstream os;
            os << "image " << i << ": non-positive dimensions";
            throw ParseError(os.str());
        }
        if (!seen_ids.insert(rec.image_id).second) {
            std::ostringstream os;
            os << "image " << i << ": duplicate image id \"" << rec.image_id << "\"";
            throw ParseError(os.str());
        }
        set.images.push_back(std::move(rec));
    }

    std::map<std::string, const ImageRecord*> by_id;
    for (const ImageRecord& r : set.images) {
        by_id[r.image_id] = &r;
    }

    for (std::size_t i = 0; i < doc["annotations"].size(); ++i) {
        const json& an = doc["annotations"][i];
        PointAnnotation p;
        try {
            p.image_id = an.at("image_id").get<std::string>();
            p.x = an.at("x").get<double>();
            p.y = an.at("y").get<double>();
            p.category = parse_category(an.at("category").get<std::string>(), i);
            if (an.contains("subtype") && !an["subtype"].is_null()) {
                p.subtype = parse_subtype(an["subtype"].get<std::string>(), i);
            }
        } catch (const ParseError&) {
            throw;
        } catch (const json::exception& e) {
            std::ostringstream os;
            os << "annotation " << i << ": " << e.what();
            throw ParseError(os.str());
        }
        const auto it = by_id.find(p.image_id);
        if (it == by_id.end()) {
            std::ostringstream os;
            os << "annotation " << i << ": unknown image_id \"" << p.image_id << "\"";
            throw ParseError(os.str());
        }
        if (p.x < 0 || p.y < 0 || p.x > it->second->width || p.y > it->second->height) {
            std::ostringstream os;
            os << "annotation " << i << ": point (" << p.x << ", " << p.y
               << ") outside image bounds";
            throw ParseError(os.str());
        }
        if (p.subtype && p.category != Category::Mitotic) {
            std::ostringstream os;
            os << "annotation " << i << ": subtype given for a non-mitotic annotation";
            throw ParseError(os.str());
        }
        set.annotations.push_back(std::move(p));
    }
    return set;
}

AnnotationSet parse_annotations(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("parse_annotations: cannot open " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_annotations_text(buf.str());
    } catch (const ParseError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

std::string annotations_to_json(const AnnotationSet& set) {
    json doc;
    doc["images"] = json::array();
    for (const ImageRecord& r : set.images) {
        json im{{"id", r.image_id},
                {"file_name", r.path},
                {"width", r.width},
                {"height", r.height}};
        if (r.domain_tag) {
            im["domain"] = *r.domain_tag;
        }
        doc["images"].push_back(std::move(im));
    }
    doc["annotations"] = json::array();
    for (const PointAnnotation& a : set.annotations) {
        json an{{"image_id", a.image_id},
                {"x", a.x},
                {"y", a.y},
                {"category", a.category == Category::Mitotic ? "mitotic figure" : "hard negative"}};
        if (a.subtype) {
            an["subtype"] = to_string(*a.subtype);
        }
        doc["annotations"].push_back(std::move(an));
    }
    return doc.dump(2) + "\n";
}

void save_annotations(const AnnotationSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("save_annotations: cannot write " + path);
    }
    out << annotations_to_json(set);
}

std::vector<std::size_t> split_quotas(std::size_t n, const std::vector<double>& ratios) {
    std::vector<std::size_t> sizes(ratios.size(), 0);
    std::vector<std::pair<double, std::size_t>> rema;  // (-fraction, index)
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        const double exact = ratios[i] * static_cast<double>(n);
        sizes[i] = static_cast<std::size_t>(std::floor(exact));
        assigned += sizes[i];
        rema.push_back({-(exact - std::floor(exact)), i});
    }
    std::sort(rema.begin(), rema.end());  // largest remainder first, ties by index
    std::size_t left = n - assigned;
    for (std::size_t j = 0; left > 0; ++j, --left) {
        sizes[rema[j % rema.size()].second] += 1;
    }
    return sizes;
}

namespace {

void validate_spec(const SplitSpec& spec) {
    if (spec.ratios.empty()) {
        throw std::invalid_argument("split: no ratios given");
    }
    double sum = 0.0;
    for (double r : spec.ratios) {
        if (!(r > 0.0) || !(r <= 1.0)) {
            throw std::invalid_argument("split: each ratio must lie in (0,1]");
        }
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split: ratios must sum to 1");
    }
}

/// Shuffle indices and deal them into |ratios| buckets by quota.
void deal_split(const std::vector<std::size_t>& pool, const std::vector<double>& ratios,
                Rng& rng, std::vector<std::vector<std::size_t>>& buckets) {
    std::vector<std::size_t> order = pool;
    rng.shuffle(order);
    const std::vector<std::size_t> sizes = split_quotas(order.size(), ratios);
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        for (std::size_t j = 0; j < sizes[i]; ++j) {
            buckets[i].push_back(order[off + j]);
        }
        off += sizes[i];
    }
}

}  // namespace

std::vector<AnnotationSet> split_dataset(const AnnotationSet& set, const SplitSpec& spec) {
    validate_spec(spec);
    if (set.images.empty()) {
        throw std::invalid_argument("split_dataset: empty dataset");
    }
    if (spec.ratios.size() > set.images.size()) {
        throw std::invalid_argument("split_dataset: more splits than images");
    }

    std::vector<std::vector<std::size_t>> buckets(spec.ratios.size());
    Rng rng(spec.seed);
    if (spec.stratify_by == SplitSpec::Stratify::DomainTag) {
        std::map<std::string, std::vector<std::size_t>> strata;
        for (std::size_t i = 0; i < set.images.size(); ++i) {
            strata[set.images[i].domain_tag.value_or("")].push_back(i);
        }
        for (auto& [tag, pool] : strata) {
            deal_split(pool, spec.ratios, rng, buckets);
        }
    } else {
        // Stratify::Image is the identity at image granularity: splits are
        // already by image.
        std::vector<std::size_t> pool(set.images.size());
        std::iota(pool.begin(), pool.end(), 0);
        deal_split(pool, spec.ratios, rng, buckets);
    }

    std::vector<AnnotationSet> out;
    out.reserve(buckets.size());
    for (auto& b : buckets) {
        std::sort(b.begin(), b.end());
        out.push_back(take_images(set, b));
    }
    return out;
}

std::vector<std::pair<AnnotationSet, AnnotationSet>> kfold_split(const AnnotationSet& set,
                                                                 int k, std::uint64_t seed) {
    if (k < 2) {
        throw std::invalid_argument("kfold_split: k must be >= 2");
    }
    if (static_cast<std::size_t>(k) > set.images.size()) {
        throw std::invalid_argument("kfold_split: k exceeds image count");
    }
    std::vector<std::size_t> order(set.images.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    std::vector<std::vector<std::size_t>> folds(k);
    for (std::size_t i = 0; i < order.size(); ++i) {
        folds[i % k].push_back(order[i]);
    }

    std::vector<std::pair<AnnotationSet, AnnotationSet>> out;
    for (int f = 0; f < k; ++f) {
        std::vector<std::size_t> train_idx;
        for (int g = 0; g < k; ++g) {
            if (g != f) {
                train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
            }
        }
        std::vector<std::size_t> val_idx = folds[f];
        std::sort(train_idx.begin(), train_idx.end());
        std::sort(val_idx.begin(), val_idx.end());
        out.emplace_back(take_images(set, train_idx), take_images(set, val_idx));
    }
    return out;
}

PatchSample extract_patch(const ImageRecord& rec, const Image& pixels, double x, double y,
                          int side) {
    if (pixels.width != rec.width || pixels.height != rec.height) {
        throw std::invalid_argument("extract_patch: pixel buffer does not match record dims");
    }
    PatchSample p;
    p.pixels = crop_centered(pixels, x, y, side);
    p.center_x = x;
    p.center_y = y;
    p.source_image_id = rec.image_id;
    return p;
}

Image resize_to_input(const PatchSample& p, int side) {
    if (side <= 0) {
        throw std::invalid_argument("resize_to_input: side must be positive");
    }
    return resize_bilinear(p.pixels, side, side);
}

void write_patch_dataset(const std::vector<PatchSample>& samples, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "patches");
    json idx;
    idx["patches"] = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        std::ostringstream name;
        name << "patches/p" << std::setw(5) << std::setfill('0') << i << ".png";
        save_image(samples[i].pixels, (fs::path(out_dir) / name.str()).string());
        json entry{{"file", name.str()},
                   {"label", samples[i].label.value_or(0)},
                   {"source_image_id", samples[i].source_image_id},
                   {"x", samples[i].center_x},
                   {"y", samples[i].center_y}};
        idx["patches"].push_back(std::move(entry));
    }
    std::ofstream out(fs::path(out_dir) / "index.json", std::ios::binary);
    if (!out) {
        throw std::runtime_error("write_patch_dataset: cannot write index.json");
    }
    out << idx.dump(2) << "\n";
}

PatchDataset open_patch_dataset(const std::string& dir) {
    const fs::path index_path = fs::path(dir) / "index.json";
    std::ifstream in(index_path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("open_patch_dataset: cannot open " + index_path.string());
    }
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ParseError(index_path.string() + ": " + e.what());
    }
    if (!doc.contains("patches") || !doc["patches"].is_array()) {
        throw ParseError(index_path.string() + ": missing \"patches\" array");
    }
    PatchDataset ds;
    ds.root = dir;
    for (std::size_t i = 0; i < doc["patches"].size(); ++i) {
        const json& e = doc["patches"][i];
        PatchIndexEntry entry;
        try {
            entry.file = e.at("file").get<std::string>();
            entry.label = e.at("label").get<int>();
            entry.source_image_id = e.at("source_image_id").get<std::string>();
            entry.x = e.at("x").get<double>();
            entry.y = e.at("y").get<double>();
        } catch (const json::exception& ex) {
            std::ostringstream os;
            os << index_path.string() << ": patch " << i << ": " << ex.what();
            throw ParseError(os.str());
        }
        if (entry.label != 0 && entry.label != 1) {
            std::ostringstream os;
            os << index_path.string() << ": patch " << i << ": label must be 0 or 1";
            throw ParseError(os.str());
        }
        ds.entries.push_back(std::move(entry));
    }
    return ds;
}

std::vector<PatchSample> PatchDataset::load_samples() const {
    std::vector<PatchSample> out;
    out.reserve(entries.size());
    for (const PatchIndexEntry& e : entries) {
        PatchSample s;
        s.pixels = load_image((fs::path(root) / e.file).string());
        s.label = e.label;
        s.source_image_id = e.source_image_id;
        s.center_x = e.x;
        s.center_y = e.y;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace mito

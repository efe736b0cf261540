#include "mito/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "mito/rng.hpp"

namespace fs = std::filesystem;

namespace mito::synth {

namespace {

struct Splat {
    double cx, cy;
    double sx, sy;      // ellipse axes (std devs, px)
    double angle;       // radians
    double color[3];    // target color, 0..255
    double strength;    // blend weight at the center
};

void render_splat(Image& img, const Splat& s) {
    const double c = std::cos(s.angle);
    const double sn = std::sin(s.angle);
    const double reach = 3.2 * std::max(s.sx, s.sy);
    const int x0 = std::max(0, static_cast<int>(std::floor(s.cx - reach)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(s.cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(s.cy - reach)));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(s.cy + reach)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - s.cx;
            const double dy = y - s.cy;
            const double u = (c * dx + sn * dy) / s.sx;
            const double v = (-sn * dx + c * dy) / s.sy;
            const double w = s.strength * std::exp(-0.5 * (u * u + v * v));
            if (w < 1e-3) {
                continue;
            }
            std::uint8_t* p = img.px(x, y);
            for (int ch = 0; ch < 3; ++ch) {
                const double mixed = p[ch] + (s.color[ch] - p[ch]) * std::min(1.0, w);
                p[ch] = static_cast<std::uint8_t>(std::clamp(mixed, 0.0, 255.0));
            }
        }
    }
}

/// Rotate a color around the gray axis; used to derive the impostor tint
/// from the mitosis tint.
void hue_rotate(const double in[3], double degrees, double out[3]) {
    const double rad = degrees * M_PI / 180.0;
    const double ch = std::cos(rad);
    const double sh = std::sin(rad);
    const double k = 1.0 / 3.0;
    const double sq = std::sqrt(1.0 / 3.0);
    double rot[3][3];
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            rot[i][j] = k + (i == j ? (1.0 - k) * ch : -k * ch);
        }
    }
    rot[0][1] += -sq * sh;
    rot[0][2] += sq * sh;
    rot[1][0] += sq * sh;
    rot[1][2] += -sq * sh;
    rot[2][0] += -sq * sh;
    rot[2][1] += sq * sh;
    for (int i = 0; i < 3; ++i) {
        out[i] = std::clamp(rot[i][0] * in[0] + rot[i][1] * in[1] + rot[i][2] * in[2], 0.0, 255.0);
    }
}

struct PlacedPoint {
    double x, y;
};

bool far_enough(const std::vector<PlacedPoint>& placed, double x, double y, double min_dist) {
    for (const PlacedPoint& p : placed) {
        if (std::hypot(p.x - x, p.y - y) < min_dist) {
            return false;
        }
    }
    return true;
}

}  // namespace

SynthScene make_scene(const SceneConfig& cfg, const std::string& image_id, std::uint64_t seed) {
    Rng rng(seed);
    SynthScene scene;
    scene.image = Image(cfg.width, cfg.height);
    scene.record.image_id = image_id;
    scene.record.width = cfg.width;
    scene.record.height = cfg.height;
    scene.record.domain_tag = (seed % 2 == 0) ? "synth-a" : "synth-b";

    // eosin-like background with per-image tint and soft mottling
    const double base[3] = {232.0 + rng.uniform(-6, 6), 204.0 + rng.uniform(-6, 6),
                            214.0 + rng.uniform(-6, 6)};
    for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
            std::uint8_t* p = scene.image.px(x, y);
            for (int ch = 0; ch < 3; ++ch) {
                p[ch] = static_cast<std::uint8_t>(std::clamp(base[ch], 0.0, 255.0));
            }
        }
    }
    const int n_mottle = static_cast<int>(rng.uniform_int(6, 12));
    for (int i = 0; i < n_mottle; ++i) {
        Splat m;
        m.cx = rng.uniform(0, cfg.width);
        m.cy = rng.uniform(0, cfg.height);
        m.sx = rng.uniform(25, 70);
        m.sy = rng.uniform(25, 70);
        m.angle = rng.uniform(0, M_PI);
        const double shade = rng.uniform(-14, 10);
        m.color[0] = base[0] + shade;
        m.color[1] = base[1] + shade * 1.2;
        m.color[2] = base[2] + shade;
        m.strength = rng.uniform(0.25, 0.5);
        render_splat(scene.image, m);
    }

    std::vector<PlacedPoint> placed;
    auto place = [&](double min_dist, double margin) -> PlacedPoint {
        for (int attempt = 0; attempt < 2000; ++attempt) {
            const double x = rng.uniform(margin, cfg.width - margin);
            const double y = rng.uniform(margin, cfg.height - margin);
            if (far_enough(placed, x, y, min_dist)) {
                placed.push_back({x, y});
                return {x, y};
            }
        }
        // separation is a hard guarantee (keeps distance matching
        // unambiguous); a config too dense to satisfy it is an error
        throw std::invalid_argument("make_scene: cannot place objects at min_separation; "
                                    "reduce object counts or separation");
    };

    const double mito_color[3] = {96.0, 58.0, 132.0};  // basophilic purple
    double impostor_color[3];
    hue_rotate(mito_color, cfg.hue_gap, impostor_color);

    auto render_cell = [&](double x, double y, bool impostor, bool atypical) {
        const double elong = atypical ? rng.uniform(2.1, 2.9) : rng.uniform(1.0, 1.35);
        const double s = cfg.blob_sigma * rng.uniform(0.85, 1.2);
        Splat body;
        body.cx = x;
        body.cy = y;
        body.sx = s * std::sqrt(elong);
        body.sy = s / std::sqrt(elong);
        body.angle = rng.uniform(0, M_PI);
        body.strength = rng.uniform(0.88, 0.98);
        const double* col = impostor ? impostor_color : mito_color;
        for (int ch = 0; ch < 3; ++ch) {
            body.color[ch] = col[ch] + rng.uniform(-10, 10);
        }
        render_splat(scene.image, body);
        // lumpy chromatin: two darker sub-splats
        for (int i = 0; i < 2; ++i) {
            Splat lump = body;
            lump.cx = x + rng.uniform(-s * 0.7, s * 0.7);
            lump.cy = y + rng.uniform(-s * 0.7, s * 0.7);
            lump.sx = s * rng.uniform(0.25, 0.45);
            lump.sy = lump.sx;
            lump.strength = rng.uniform(0.3, 0.5);
            for (int ch = 0; ch < 3; ++ch) {
                lump.color[ch] = std::max(0.0, body.color[ch] - 30.0);
            }
            render_splat(scene.image, lump);
        }
        if (impostor) {
            // the telltale bright core; small enough that only the
            // close-up classifier view resolves it reliably
            Splat core;
            core.cx = x + rng.uniform(-1.0, 1.0);
            core.cy = y + rng.uniform(-1.0, 1.0);
            core.sx = cfg.core_radius;
            core.sy = cfg.core_radius;
            core.angle = 0.0;
            core.strength = 0.95;
            core.color[0] = 228.0;
            core.color[1] = 206.0;
            core.color[2] = 224.0;
            render_splat(scene.image, core);
        }
    };

    const int n_mito = static_cast<int>(rng.uniform_int(cfg.mitoses_min, cfg.mitoses_max));
    const int n_imp = static_cast<int>(rng.uniform_int(cfg.impostors_min, cfg.impostors_max));
    const int n_smudge = static_cast<int>(rng.uniform_int(cfg.smudges_min, cfg.smudges_max));

    for (int i = 0; i < n_mito; ++i) {
        const PlacedPoint pt = place(cfg.min_separation, 30.0);
        const bool atypical = rng.bernoulli(cfg.atypical_fraction);
        render_cell(pt.x, pt.y, false, atypical);
        PointAnnotation a;
        a.image_id = image_id;
        a.x = pt.x;
        a.y = pt.y;
        a.category = Category::Mitotic;
        a.subtype = atypical ? Subtype::Atypical : Subtype::Normal;
        scene.annotations.push_back(std::move(a));
    }
    for (int i = 0; i < n_imp; ++i) {
        const PlacedPoint pt = place(cfg.min_separation, 30.0);
        render_cell(pt.x, pt.y, true, false);
        PointAnnotation a;
        a.image_id = image_id;
        a.x = pt.x;
        a.y = pt.y;
        a.category = Category::Impostor;
        scene.annotations.push_back(std::move(a));
    }
    for (int i = 0; i < n_smudge; ++i) {
        const PlacedPoint pt = place(cfg.min_separation * 0.7, 20.0);
        Splat smudge;
        smudge.cx = pt.x;
        smudge.cy = pt.y;
        smudge.sx = rng.uniform(5.0, 9.0);
        smudge.sy = rng.uniform(5.0, 9.0);
        smudge.angle = rng.uniform(0, M_PI);
        smudge.strength = rng.uniform(0.35, 0.6);
        smudge.color[0] = 150.0 + rng.uniform(-15, 15);
        smudge.color[1] = 110.0 + rng.uniform(-15, 15);
        smudge.color[2] = 160.0 + rng.uniform(-15, 15);
        render_splat(scene.image, smudge);
    }

    // sensor-style noise last
    for (int y = 0; y < cfg.height; ++y) {
        for (int x = 0; x < cfg.width; ++x) {
            std::uint8_t* p = scene.image.px(x, y);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = p[ch] + rng.normal(0.0, cfg.noise_sigma);
                p[ch] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
        }
    }
    return scene;
}

AnnotationSet SynthDataset::annotation_set() const {
    AnnotationSet set;
    for (const SynthScene& s : scenes) {
        set.images.push_back(s.record);
        set.annotations.insert(set.annotations.end(), s.annotations.begin(),
                               s.annotations.end());
    }
    return set;
}

SynthDataset make_dataset(const SceneConfig& cfg, int n_images, std::uint64_t seed) {
    if (n_images <= 0) {
        throw std::invalid_argument("make_dataset: n_images must be positive");
    }
    SynthDataset ds;
    for (int i = 0; i < n_images; ++i) {
        std::ostringstream id;
        id << "scene_" << std::setw(4) << std::setfill('0') << i;
        SynthScene scene = make_scene(cfg, id.str(), Rng::mix(seed, static_cast<std::uint64_t>(i)));
        scene.record.path = "images/" + id.str() + ".png";
        ds.scenes.push_back(std::move(scene));
    }
    return ds;
}

void write_dataset(const SynthDataset& ds, const std::string& out_dir) {
    fs::create_directories(fs::path(out_dir) / "images");
    AnnotationSet set;
    for (const SynthScene& s : ds.scenes) {
        save_image(s.image, (fs::path(out_dir) / s.record.path).string());
        set.images.push_back(s.record);
        set.annotations.insert(set.annotations.end(), s.annotations.begin(),
                               s.annotations.end());
    }
    save_annotations(set, (fs::path(out_dir) / "annotations.json").string());
}

}  // namespace mito::synth

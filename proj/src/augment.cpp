#include "mito/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mito {

namespace {

inline std::uint8_t round_u8(double x) {
    const double r = std::floor(x + 0.5);
    return static_cast<std::uint8_t>(std::clamp(r, 0.0, 255.0));
}

/// Bilinear sample with edge clamp; fractional source coordinates.
void sample_bilinear(const Image& img, double fx, double fy, double out[3]) {
    fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(fx);
    const int y0 = static_cast<int>(fy);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wx = fx - x0;
    const double wy = fy - y0;
    const std::uint8_t* p00 = img.px(x0, y0);
    const std::uint8_t* p10 = img.px(x1, y0);
    const std::uint8_t* p01 = img.px(x0, y1);
    const std::uint8_t* p11 = img.px(x1, y1);
    for (int ch = 0; ch < 3; ++ch) {
        const double top = p00[ch] + wx * (p10[ch] - p00[ch]);
        const double bot = p01[ch] + wx * (p11[ch] - p01[ch]);
        out[ch] = top + wy * (bot - top);
    }
}

/// Solve the 8x8 linear system for a homography mapping quad a -> quad b.
/// Quads are (x0,y0,...,x3,y3). Returns h[9] with h[8] = 1.
void solve_homography(const double a[8], const double b[8], double h[9]) {
    double m[8][9] = {};
    for (int i = 0; i < 4; ++i) {
        const double x = a[2 * i], y = a[2 * i + 1];
        const double u = b[2 * i], v = b[2 * i + 1];
        double* r0 = m[2 * i];
        double* r1 = m[2 * i + 1];
        r0[0] = x;
        r0[1] = y;
        r0[2] = 1;
        r0[6] = -u * x;
        r0[7] = -u * y;
        r0[8] = u;
        r1[3] = x;
        r1[4] = y;
        r1[5] = 1;
        r1[6] = -v * x;
        r1[7] = -v * y;
        r1[8] = v;
    }
    for (int col = 0; col < 8; ++col) {
        int piv = col;
        for (int r = col + 1; r < 8; ++r) {
            if (std::abs(m[r][col]) > std::abs(m[piv][col])) {
                piv = r;
            }
        }
        if (std::abs(m[piv][col]) < 1e-12) {
            throw std::invalid_argument("perspective_warp: degenerate quad");
        }
        std::swap_ranges(m[col], m[col] + 9, m[piv]);
        for (int r = 0; r < 8; ++r) {
            if (r == col) {
                continue;
            }
            const double f = m[r][col] / m[col][col];
            for (int c2 = col; c2 < 9; ++c2) {
                m[r][c2] -= f * m[col][c2];
            }
        }
    }
    for (int i = 0; i < 8; ++i) {
        h[i] = m[i][8] / m[i][i];
    }
    h[8] = 1.0;
}

Image remap(const Image& img, const std::vector<double>& src_x,
            const std::vector<double>& src_y) {
    Image out(img.width, img.height);
    double v[3];
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            sample_bilinear(img, src_x[i], src_y[i], v);
            std::uint8_t* d = out.px(x, y);
            d[0] = round_u8(v[0]);
            d[1] = round_u8(v[1]);
            d[2] = round_u8(v[2]);
        }
    }
    return out;
}

}  // namespace

Image flip_horizontal(const Image& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const std::uint8_t* s = img.px(img.width - 1 - x, y);
            std::uint8_t* d = out.px(x, y);
            d[0] = s[0];
            d[1] = s[1];
            d[2] = s[2];
        }
    }
    return out;
}

namespace {

Image flip_vertical(const Image& img) {
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        const std::uint8_t* s = img.px(0, img.height - 1 - y);
        std::uint8_t* d = out.px(0, y);
        std::copy(s, s + static_cast<std::size_t>(img.width) * 3, d);
    }
    return out;
}

}  // namespace

Image rotate_bilinear(const Image& img, double degrees) {
    const double rad = degrees * M_PI / 180.0;
    const double c = std::cos(rad);
    const double s = std::sin(rad);
    const double cx = 0.5 * (img.width - 1);
    const double cy = 0.5 * (img.height - 1);
    std::vector<double> sx(static_cast<std::size_t>(img.width) * img.height);
    std::vector<double> sy(sx.size());
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double dx = x - cx;
            const double dy = y - cy;
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            // inverse rotation: output pixel pulled from the source
            sx[i] = cx + c * dx + s * dy;
            sy[i] = cy - s * dx + c * dy;
        }
    }
    return remap(img, sx, sy);
}

Image color_jitter(const Image& img, double brightness, double contrast, double saturation,
                   double hue_degrees) {
    Image out(img.width, img.height);
    const double hr = hue_degrees * M_PI / 180.0;
    // hue rotation about the gray axis (Rodrigues form reduced for RGB)
    const double ch = std::cos(hr);
    const double sh = std::sin(hr);
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

    const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* p = img.data.data() + i * 3;
        double v[3];
        for (int chn = 0; chn < 3; ++chn) {
            v[chn] = p[chn] / 255.0;
        }
        double r = rot[0][0] * v[0] + rot[0][1] * v[1] + rot[0][2] * v[2];
        double g = rot[1][0] * v[0] + rot[1][1] * v[1] + rot[1][2] * v[2];
        double b = rot[2][0] * v[0] + rot[2][1] * v[1] + rot[2][2] * v[2];
        const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
        r = luma + (r - luma) * saturation;
        g = luma + (g - luma) * saturation;
        b = luma + (b - luma) * saturation;
        double rgb[3] = {r, g, b};
        std::uint8_t* d = out.data.data() + i * 3;
        for (int chn = 0; chn < 3; ++chn) {
            double x = rgb[chn] * brightness;
            x = (x - 0.5) * contrast + 0.5;
            d[chn] = round_u8(x * 255.0);
        }
    }
    return out;
}

Image defocus_blur(const Image& img, int radius) {
    if (radius <= 0) {
        return img;
    }
    // normalized disk kernel, edge-replicated borders
    const int r = radius;
    std::vector<std::pair<int, int>> taps;
    for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
            if (dx * dx + dy * dy <= r * r) {
                taps.push_back({dx, dy});
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(taps.size());
    Image out(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double acc[3] = {0, 0, 0};
            for (const auto& [dx, dy] : taps) {
                const int sx = std::clamp(x + dx, 0, img.width - 1);
                const int sy = std::clamp(y + dy, 0, img.height - 1);
                const std::uint8_t* s = img.px(sx, sy);
                acc[0] += s[0];
                acc[1] += s[1];
                acc[2] += s[2];
            }
            std::uint8_t* d = out.px(x, y);
            d[0] = round_u8(acc[0] * inv);
            d[1] = round_u8(acc[1] * inv);
            d[2] = round_u8(acc[2] * inv);
        }
    }
    return out;
}

Image perspective_warp(const Image& img, const double from_quad[8], const double to_quad[8]) {
    // Inverse mapping: for each output pixel find its source position, so we
    // solve the homography that takes to_quad back onto from_quad.
    double h[9];
    solve_homography(to_quad, from_quad, h);
    std::vector<double> sx(static_cast<std::size_t>(img.width) * img.height);
    std::vector<double> sy(sx.size());
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const double wdenom = h[6] * x + h[7] * y + 1.0;
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            sx[i] = (h[0] * x + h[1] * y + h[2]) / wdenom;
            sy[i] = (h[3] * x + h[4] * y + h[5]) / wdenom;
        }
    }
    return remap(img, sx, sy);
}

Image elastic_transform(const Image& img, double alpha_px, int grid, Rng& rng) {
    // coarse random displacement field, bilinearly upsampled to full size
    const int g = std::max(2, grid);
    std::vector<double> node_dx(static_cast<std::size_t>(g) * g);
    std::vector<double> node_dy(node_dx.size());
    for (std::size_t i = 0; i < node_dx.size(); ++i) {
        node_dx[i] = rng.normal(0.0, alpha_px);
        node_dy[i] = rng.normal(0.0, alpha_px);
    }
    auto field_at = [&](const std::vector<double>& f, double fx, double fy) {
        const int x0 = static_cast<int>(fx);
        const int y0 = static_cast<int>(fy);
        const int x1 = std::min(x0 + 1, g - 1);
        const int y1 = std::min(y0 + 1, g - 1);
        const double wx = fx - x0;
        const double wy = fy - y0;
        const double top = f[y0 * g + x0] + wx * (f[y0 * g + x1] - f[y0 * g + x0]);
        const double bot = f[y1 * g + x0] + wx * (f[y1 * g + x1] - f[y1 * g + x0]);
        return top + wy * (bot - top);
    };
    std::vector<double> sx(static_cast<std::size_t>(img.width) * img.height);
    std::vector<double> sy(sx.size());
    for (int y = 0; y < img.height; ++y) {
        const double gy = img.height > 1 ? static_cast<double>(y) * (g - 1) / (img.height - 1) : 0;
        for (int x = 0; x < img.width; ++x) {
            const double gx = img.width > 1 ? static_cast<double>(x) * (g - 1) / (img.width - 1) : 0;
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            sx[i] = x + field_at(node_dx, gx, gy);
            sy[i] = y + field_at(node_dy, gx, gy);
        }
    }
    return remap(img, sx, sy);
}

Image grid_distortion(const Image& img, int cells, double limit, Rng& rng) {
    const int n = std::max(1, cells);
    // per-axis piecewise-linear map: perturb cell extents, renormalize
    auto make_nodes = [&](int size) {
        std::vector<double> steps(n);
        double total = 0.0;
        for (int i = 0; i < n; ++i) {
            steps[i] = 1.0 + rng.uniform(-limit, limit);
            total += steps[i];
        }
        std::vector<double> nodes(n + 1, 0.0);
        for (int i = 0; i < n; ++i) {
            nodes[i + 1] = nodes[i] + steps[i] / total * (size - 1);
        }
        nodes[n] = size - 1;
        return nodes;
    };
    const std::vector<double> nx = make_nodes(img.width);
    const std::vector<double> ny = make_nodes(img.height);
    auto map_coord = [&](const std::vector<double>& nodes, double t, int size) {
        // output coordinate t (uniform grid) -> source coordinate
        const double cell = static_cast<double>(size - 1) / n;
        int i = std::min(static_cast<int>(t / cell), n - 1);
        const double frac = (t - i * cell) / cell;
        return nodes[i] + frac * (nodes[i + 1] - nodes[i]);
    };
    std::vector<double> sx(static_cast<std::size_t>(img.width) * img.height);
    std::vector<double> sy(sx.size());
    for (int y = 0; y < img.height; ++y) {
        const double my = map_coord(ny, y, img.height);
        for (int x = 0; x < img.width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
            sx[i] = map_coord(nx, x, img.width);
            sy[i] = my;
        }
    }
    return remap(img, sx, sy);
}

AugmentationConfig AugmentationConfig::defaults(AugTask task, std::uint64_t seed) {
    AugmentationConfig cfg;
    cfg.task = task;
    cfg.seed = seed;
    switch (task) {
        case AugTask::Detection:
            cfg.transforms = {"perspective", "color_jitter", "defocus_blur"};
            break;
        case AugTask::RefineCls:
            cfg.transforms = {"random_resized_crop", "horizontal_flip", "normalization"};
            break;
        case AugTask::AtypicalCls:
            cfg.transforms = {"random_crop", "flip",          "rotation",
                              "color_jitter", "defocus_blur", "elastic",
                              "grid_distortion"};
            break;
    }
    return cfg;
}

bool AugmentationConfig::has(const std::string& name) const {
    return std::find(transforms.begin(), transforms.end(), name) != transforms.end();
}

const std::vector<std::string>& known_transforms() {
    static const std::vector<std::string> names = {
        "perspective",  "color_jitter", "defocus_blur", "random_resized_crop",
        "horizontal_flip", "normalization", "random_crop", "flip",
        "rotation",     "elastic",      "grid_distortion"};
    return names;
}

PatchSample augment(const PatchSample& p, const AugmentationConfig& cfg,
                    std::uint64_t sample_index) {
    for (const std::string& t : cfg.transforms) {
        const auto& known = known_transforms();
        if (std::find(known.begin(), known.end(), t) == known.end()) {
            throw std::invalid_argument("augment: unknown transform \"" + t + "\"");
        }
    }

    Rng rng(Rng::mix(cfg.seed, sample_index));
    PatchSample out = p;
    const int w = out.pixels.width;
    const int h = out.pixels.height;

    for (const std::string& t : cfg.transforms) {
        if (t == "normalization") {
            // marker for the tensor-conversion stage; no-op on u8 pixels
            continue;
        }
        if (t == "horizontal_flip") {
            out.pixels = flip_horizontal(out.pixels);
        } else if (t == "flip") {
            // random axis, never identity: involution preserved per draw
            const int which = static_cast<int>(rng.uniform_int(0, 2));
            if (which == 0) {
                out.pixels = flip_horizontal(out.pixels);
            } else if (which == 1) {
                out.pixels = flip_vertical(out.pixels);
            } else {
                out.pixels = flip_vertical(flip_horizontal(out.pixels));
            }
        } else if (t == "rotation") {
            out.pixels = rotate_bilinear(out.pixels, rng.uniform(-180.0, 180.0));
        } else if (t == "color_jitter") {
            const double b = rng.uniform(0.8, 1.25);
            const double c = rng.uniform(0.8, 1.25);
            const double s = rng.uniform(0.8, 1.25);
            const double hue = rng.uniform(-18.0, 18.0);
            out.pixels = color_jitter(out.pixels, b, c, s, hue);
        } else if (t == "defocus_blur") {
            out.pixels = defocus_blur(out.pixels, static_cast<int>(rng.uniform_int(1, 3)));
        } else if (t == "random_resized_crop" || t == "random_crop") {
            const double lo = t == "random_crop" ? 0.8 : 0.6;
            const double area = rng.uniform(lo, 1.0);
            const double aspect =
                t == "random_crop" ? 1.0 : std::exp(rng.uniform(std::log(0.75), std::log(4.0 / 3.0)));
            int cw = std::clamp(static_cast<int>(std::lround(w * std::sqrt(area * aspect))), 1, w);
            int chh = std::clamp(static_cast<int>(std::lround(h * std::sqrt(area / aspect))), 1, h);
            const int x0 = static_cast<int>(rng.uniform_int(0, w - cw));
            const int y0 = static_cast<int>(rng.uniform_int(0, h - chh));
            out.pixels = resize_bilinear(crop_rect(out.pixels, x0, y0, cw, chh), w, h);
        } else if (t == "perspective") {
            const double jitter = 0.08 * std::min(w, h);
            const double corners[8] = {0, 0, double(w - 1), 0, double(w - 1), double(h - 1),
                                       0, double(h - 1)};
            double moved[8];
            for (int i = 0; i < 8; ++i) {
                moved[i] = corners[i] + rng.uniform(-jitter, jitter);
            }
            out.pixels = perspective_warp(out.pixels, corners, moved);
        } else if (t == "elastic") {
            out.pixels = elastic_transform(out.pixels, rng.uniform(2.0, 6.0), 4, rng);
        } else if (t == "grid_distortion") {
            out.pixels = grid_distortion(out.pixels, 4, 0.2, rng);
        }
    }
    return out;
}

}  // namespace mito

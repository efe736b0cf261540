#include "mito/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mito {

namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

inline std::uint8_t round_u8(float x) {
    const float r = std::floor(x + 0.5f);
    return static_cast<std::uint8_t>(clampi(static_cast<int>(r), 0, 255));
}

}  // namespace

Image resize_bilinear(const Image& src, int out_w, int out_h) {
    if (src.empty()) {
        throw std::invalid_argument("resize_bilinear: empty image");
    }
    if (out_w <= 0 || out_h <= 0) {
        throw std::invalid_argument("resize_bilinear: non-positive output size");
    }
    if (out_w == src.width && out_h == src.height) {
        return src;
    }
    Image dst(out_w, out_h);
    const double sx = out_w > 1 ? static_cast<double>(src.width - 1) / (out_w - 1) : 0.0;
    const double sy = out_h > 1 ? static_cast<double>(src.height - 1) / (out_h - 1) : 0.0;
    for (int oy = 0; oy < out_h; ++oy) {
        const double fy = oy * sy;
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const float wy = static_cast<float>(fy - y0);
        for (int ox = 0; ox < out_w; ++ox) {
            const double fx = ox * sx;
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const float wx = static_cast<float>(fx - x0);
            const std::uint8_t* p00 = src.px(x0, y0);
            const std::uint8_t* p10 = src.px(x1, y0);
            const std::uint8_t* p01 = src.px(x0, y1);
            const std::uint8_t* p11 = src.px(x1, y1);
            std::uint8_t* out = dst.px(ox, oy);
            for (int ch = 0; ch < 3; ++ch) {
                const float top = p00[ch] + wx * (p10[ch] - p00[ch]);
                const float bot = p01[ch] + wx * (p11[ch] - p01[ch]);
                out[ch] = round_u8(top + wy * (bot - top));
            }
        }
    }
    return dst;
}

Image crop_rect(const Image& img, int x0, int y0, int w, int h) {
    if (img.empty() || w <= 0 || h <= 0) {
        throw std::invalid_argument("crop_rect: bad arguments");
    }
    Image out(w, h);
    for (int y = 0; y < h; ++y) {
        const int sy = clampi(y0 + y, 0, img.height - 1);
        for (int x = 0; x < w; ++x) {
            const int sx = clampi(x0 + x, 0, img.width - 1);
            const std::uint8_t* s = img.px(sx, sy);
            std::uint8_t* d = out.px(x, y);
            d[0] = s[0];
            d[1] = s[1];
            d[2] = s[2];
        }
    }
    return out;
}

Image crop_centered(const Image& img, double x, double y, int side) {
    if (side <= 0) {
        throw std::invalid_argument("crop_centered: side must be positive");
    }
    if (x < 0.0 || y < 0.0 || x > img.width || y > img.height) {
        throw std::invalid_argument("crop_centered: center outside image bounds");
    }
    const int cx = static_cast<int>(std::llround(x));
    const int cy = static_cast<int>(std::llround(y));
    return crop_rect(img, cx - side / 2, cy - side / 2, side, side);
}

Tensor to_tensor(const Image& img, const std::array<float, 3>& mean,
                 const std::array<float, 3>& stddev) {
    Tensor t(3, img.height, img.width);
    const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    for (int ch = 0; ch < 3; ++ch) {
        const float m = mean[ch];
        const float inv = 1.0f / stddev[ch];
        float* dst = t.data() + ch * plane;
        const std::uint8_t* src = img.data.data() + ch;
        for (std::size_t i = 0; i < plane; ++i) {
            dst[i] = (static_cast<float>(src[i * 3]) * (1.0f / 255.0f) - m) * inv;
        }
    }
    return t;
}

ChannelStats compute_channel_stats(const std::vector<Image>& images) {
    ChannelStats st;
    double sum[3] = {0, 0, 0};
    double sumsq[3] = {0, 0, 0};
    double count = 0;
    for (const Image& img : images) {
        const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint8_t* p = img.data.data() + i * 3;
            for (int ch = 0; ch < 3; ++ch) {
                const double v = p[ch] / 255.0;
                sum[ch] += v;
                sumsq[ch] += v * v;
            }
        }
        count += static_cast<double>(n);
    }
    if (count <= 0) {
        throw std::invalid_argument("compute_channel_stats: no pixels");
    }
    for (int ch = 0; ch < 3; ++ch) {
        st.mean[ch] = sum[ch] / count;
        const double var = std::max(0.0, sumsq[ch] / count - st.mean[ch] * st.mean[ch]);
        st.stddev[ch] = std::max(1e-6, std::sqrt(var));
    }
    return st;
}

}  // namespace mito

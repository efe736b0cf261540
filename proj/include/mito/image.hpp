#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mito/tensor.hpp"

namespace mito {

/// Interleaved 8-bit RGB raster, row-major.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // height * width * 3

    Image() = default;
    Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0) {}

    std::uint8_t* px(int x, int y) {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    const std::uint8_t* px(int x, int y) const {
        return data.data() + (static_cast<std::size_t>(y) * width + x) * 3;
    }
    bool empty() const { return data.empty(); }
};

/// Bilinear resize with corner-aligned sampling: output index i maps to
/// source coordinate i*(src-1)/(dst-1). Identity sizes reproduce the input
/// bit-for-bit and constant images stay constant. Rounding is half-up.
Image resize_bilinear(const Image& src, int out_w, int out_h);

/// side x side crop centered on (round(x), round(y)); out-of-bounds pixels
/// are edge-replicated. The center must lie inside the image.
Image crop_centered(const Image& img, double x, double y, int side);

/// Rectangle copy with edge replication for out-of-bounds coordinates.
Image crop_rect(const Image& img, int x0, int y0, int w, int h);

/// (3,H,W) float tensor: t[c] = (px/255 - mean[c]) / std[c].
Tensor to_tensor(const Image& img, const std::array<float, 3>& mean,
                 const std::array<float, 3>& stddev);

/// Per-channel mean/std of pixel values scaled to [0,1].
struct ChannelStats {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

ChannelStats compute_channel_stats(const std::vector<Image>& images);

/// PNG/flat-TIFF file I/O (OpenCV imgcodecs behind the scenes). Throws
/// std::runtime_error on unreadable files.
Image load_image(const std::string& path);
void save_image(const Image& img, const std::string& path);

}  // namespace mito

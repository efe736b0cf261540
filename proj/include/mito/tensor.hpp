#pragma once

#include <cstddef>
#include <vector>

namespace mito {

/// Dense CHW float tensor. Batches are handled by looping samples; the nets
/// here are small enough that per-sample GEMMs already saturate the core.
struct Tensor {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_)
        : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, 0.0f) {}

    std::size_t size() const { return v.size(); }
    int plane() const { return h * w; }

    float& at(int ci, int yi, int xi) {
        return v[(static_cast<std::size_t>(ci) * h + yi) * w + xi];
    }
    float at(int ci, int yi, int xi) const {
        return v[(static_cast<std::size_t>(ci) * h + yi) * w + xi];
    }

    float* data() { return v.data(); }
    const float* data() const { return v.data(); }

    void fill(float x) { std::fill(v.begin(), v.end(), x); }

    bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

}  // namespace mito

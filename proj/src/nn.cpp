#include "mito/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "mito/kernels.hpp"

namespace mito::nn {

namespace {

// col buffer layout: (in_c*k*k) rows by (out_h*out_w) columns, so conv
// forward is one gemm_acc of the (out_c x in_c*k*k) weight matrix.
void im2col(const float* x, int c, int h, int w, int k, int stride, int pad,
            int out_h, int out_w, float* col) {
    const int plane = h * w;
    const int out_plane = out_h * out_w;
    std::size_t row = 0;
    for (int ci = 0; ci < c; ++ci) {
        const float* xc = x + static_cast<std::size_t>(ci) * plane;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                float* dst = col + row * out_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        for (int ox = 0; ox < out_w; ++ox) {
                            dst[oy * out_w + ox] = 0.0f;
                        }
                        continue;
                    }
                    const float* src = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        dst[oy * out_w + ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im_acc(const float* col, int c, int h, int w, int k, int stride, int pad,
                int out_h, int out_w, float* x) {
    const int plane = h * w;
    const int out_plane = out_h * out_w;
    std::size_t row = 0;
    for (int ci = 0; ci < c; ++ci) {
        float* xc = x + static_cast<std::size_t>(ci) * plane;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx, ++row) {
                const float* src = col + row * out_plane;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) {
                        continue;
                    }
                    float* dstrow = xc + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < w) {
                            dstrow[ix] += src[oy * out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Conv2d::Conv2d(int in_c, int out_c, int ksize, int stride, int pad)
    : in_c_(in_c),
      out_c_(out_c),
      k_(ksize),
      stride_(stride),
      pad_(pad),
      w_(static_cast<std::size_t>(out_c) * in_c * ksize * ksize, 0.0f),
      b_(out_c, 0.0f),
      dw_(w_.size(), 0.0f),
      db_(out_c, 0.0f) {
    if (in_c <= 0 || out_c <= 0 || ksize <= 0 || stride <= 0 || pad < 0) {
        throw std::invalid_argument("Conv2d: bad shape parameters");
    }
}

void Conv2d::init_he(Rng& rng) {
    const double fan_in = static_cast<double>(in_c_) * k_ * k_;
    const double sd = std::sqrt(2.0 / fan_in);
    for (float& x : w_) {
        x = static_cast<float>(rng.normal(0.0, sd));
    }
    std::fill(b_.begin(), b_.end(), 0.0f);
}

void Conv2d::fill_bias(float v) {
    std::fill(b_.begin(), b_.end(), v);
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.c != in_c_) {
        throw std::invalid_argument("Conv2d: channel mismatch");
    }
    x_h_ = x.h;
    x_w_ = x.w;
    y_h_ = out_dim(x.h, k_, stride_, pad_);
    y_w_ = out_dim(x.w, k_, stride_, pad_);
    if (y_h_ <= 0 || y_w_ <= 0) {
        throw std::invalid_argument("Conv2d: input smaller than kernel");
    }
    const int krows = in_c_ * k_ * k_;
    const int out_plane = y_h_ * y_w_;
    col_.assign(static_cast<std::size_t>(krows) * out_plane, 0.0f);
    im2col(x.data(), in_c_, x.h, x.w, k_, stride_, pad_, y_h_, y_w_, col_.data());

    Tensor y(out_c_, y_h_, y_w_);
    for (int oc = 0; oc < out_c_; ++oc) {
        std::fill_n(y.data() + static_cast<std::size_t>(oc) * out_plane, out_plane, b_[oc]);
    }
    kernels::gemm_acc(w_.data(), col_.data(), y.data(), out_c_, krows, out_plane);
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    if (dy.c != out_c_ || dy.h != y_h_ || dy.w != y_w_) {
        throw std::invalid_argument("Conv2d: backward shape mismatch");
    }
    const int krows = in_c_ * k_ * k_;
    const int out_plane = y_h_ * y_w_;

    // dW += dY * col^T ; db += row sums of dY
    kernels::gemm_abt_acc(dy.data(), col_.data(), dw_.data(), out_c_, out_plane, krows);
    for (int oc = 0; oc < out_c_; ++oc) {
        db_[oc] += kernels::sum(dy.data() + static_cast<std::size_t>(oc) * out_plane, out_plane);
    }

    // dcol = W^T * dY, then scatter back to input geometry.
    std::vector<float> dcol(static_cast<std::size_t>(krows) * out_plane, 0.0f);
    {
        // W^T built on the fly: gemm_acc wants row-major A(m x k); here
        // m=krows, k=out_c. Transpose once into a scratch buffer.
        std::vector<float> wt(static_cast<std::size_t>(krows) * out_c_);
        for (int oc = 0; oc < out_c_; ++oc) {
            for (int r = 0; r < krows; ++r) {
                wt[static_cast<std::size_t>(r) * out_c_ + oc] =
                    w_[static_cast<std::size_t>(oc) * krows + r];
            }
        }
        kernels::gemm_acc(wt.data(), dy.data(), dcol.data(), krows, out_c_, out_plane);
    }

    Tensor dx(in_c_, x_h_, x_w_);
    col2im_acc(dcol.data(), in_c_, x_h_, x_w_, k_, stride_, pad_, y_h_, y_w_, dx.data());
    return dx;
}

void Conv2d::collect_params(std::vector<ParamRef>& out) {
    out.push_back({&w_, &dw_});
    out.push_back({&b_, &db_});
}

Tensor Relu::forward(const Tensor& x) {
    x_ = x;
    Tensor y(x.c, x.h, x.w);
    kernels::relu(x.data(), y.data(), static_cast<int>(x.size()));
    return y;
}

Tensor Relu::backward(const Tensor& dy) {
    Tensor dx(dy.c, dy.h, dy.w);
    kernels::relu_backward(x_.data(), dy.data(), dx.data(), static_cast<int>(dy.size()));
    return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x) {
    c_ = x.c;
    h_ = x.h;
    w_ = x.w;
    Tensor y(x.c, 1, 1);
    const float inv = 1.0f / static_cast<float>(x.plane());
    for (int ci = 0; ci < x.c; ++ci) {
        y.v[ci] = kernels::sum(x.data() + static_cast<std::size_t>(ci) * x.plane(), x.plane()) * inv;
    }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
    Tensor dx(c_, h_, w_);
    const float inv = 1.0f / static_cast<float>(h_ * w_);
    for (int ci = 0; ci < c_; ++ci) {
        std::fill_n(dx.data() + static_cast<std::size_t>(ci) * dx.plane(), dx.plane(),
                    dy.v[ci] * inv);
    }
    return dx;
}

Tensor GlobalMaxPool::forward(const Tensor& x) {
    c_ = x.c;
    h_ = x.h;
    w_ = x.w;
    argmax_.assign(x.c, 0);
    Tensor y(x.c, 1, 1);
    const int plane = x.plane();
    for (int ci = 0; ci < x.c; ++ci) {
        const float* src = x.data() + static_cast<std::size_t>(ci) * plane;
        int best = 0;
        for (int i = 1; i < plane; ++i) {
            if (src[i] > src[best]) {
                best = i;
            }
        }
        argmax_[ci] = best;
        y.v[ci] = src[best];
    }
    return y;
}

Tensor GlobalMaxPool::backward(const Tensor& dy) {
    Tensor dx(c_, h_, w_);
    for (int ci = 0; ci < c_; ++ci) {
        dx.v[static_cast<std::size_t>(ci) * dx.plane() + argmax_[ci]] = dy.v[ci];
    }
    return dx;
}

Linear::Linear(int in_dim, int out_dim)
    : in_(in_dim),
      out_(out_dim),
      w_(static_cast<std::size_t>(in_dim) * out_dim, 0.0f),
      b_(out_dim, 0.0f),
      dw_(w_.size(), 0.0f),
      db_(out_dim, 0.0f) {}

void Linear::init_he(Rng& rng) {
    const double sd = std::sqrt(2.0 / static_cast<double>(in_));
    for (float& x : w_) {
        x = static_cast<float>(rng.normal(0.0, sd));
    }
    std::fill(b_.begin(), b_.end(), 0.0f);
}

Tensor Linear::forward(const Tensor& x) {
    if (static_cast<int>(x.size()) != in_) {
        throw std::invalid_argument("Linear: input size mismatch");
    }
    x_ = x;
    Tensor y(out_, 1, 1);
    for (int o = 0; o < out_; ++o) {
        y.v[o] = b_[o] + kernels::dot(w_.data() + static_cast<std::size_t>(o) * in_, x.data(), in_);
    }
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    Tensor dx(x_.c, x_.h, x_.w);
    for (int o = 0; o < out_; ++o) {
        const float g = dy.v[o];
        kernels::axpy(g, x_.data(), dw_.data() + static_cast<std::size_t>(o) * in_, in_);
        db_[o] += g;
        kernels::axpy(g, w_.data() + static_cast<std::size_t>(o) * in_, dx.data(), in_);
    }
    return dx;
}

void Linear::collect_params(std::vector<ParamRef>& out) {
    out.push_back({&w_, &dw_});
    out.push_back({&b_, &db_});
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<ParamRef>& params) {
    if (m_.size() != params.size()) {
        m_.clear();
        v_.clear();
        for (const ParamRef& p : params) {
            m_.emplace_back(p.value->size(), 0.0f);
            v_.emplace_back(p.value->size(), 0.0f);
        }
    }
    ++t_;
    const float bias1 = 1.0f - static_cast<float>(std::pow(beta1_, static_cast<double>(t_)));
    const float bias2 = 1.0f - static_cast<float>(std::pow(beta2_, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        kernels::adam_step(params[i].value->data(), m_[i].data(), v_[i].data(),
                           params[i].grad->data(), static_cast<int>(params[i].value->size()),
                           static_cast<float>(lr_), static_cast<float>(beta1_),
                           static_cast<float>(beta2_), static_cast<float>(eps_), bias1, bias2);
    }
}

SgdMomentum::SgdMomentum(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

void SgdMomentum::step(const std::vector<ParamRef>& params) {
    if (vel_.size() != params.size()) {
        vel_.clear();
        for (const ParamRef& p : params) {
            vel_.emplace_back(p.value->size(), 0.0f);
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        kernels::sgd_momentum_step(params[i].value->data(), vel_[i].data(),
                                   params[i].grad->data(),
                                   static_cast<int>(params[i].value->size()),
                                   static_cast<float>(lr_), static_cast<float>(momentum_));
    }
}

double cosine_lr(double lr0, std::int64_t t, std::int64_t total) {
    if (total <= 0) {
        return lr0;
    }
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(total)));
}

void zero_grads(const std::vector<ParamRef>& params) {
    for (const ParamRef& p : params) {
        std::fill(p.grad->begin(), p.grad->end(), 0.0f);
    }
}

void scale_grads(const std::vector<ParamRef>& params, float factor) {
    for (const ParamRef& p : params) {
        kernels::scale(p.grad->data(), factor, static_cast<int>(p.grad->size()));
    }
}

std::size_t param_count(const std::vector<ParamRef>& params) {
    std::size_t n = 0;
    for (const ParamRef& p : params) {
        n += p.value->size();
    }
    return n;
}

std::vector<float> dump_params(const std::vector<ParamRef>& params) {
    std::vector<float> flat;
    flat.reserve(param_count(params));
    for (const ParamRef& p : params) {
        flat.insert(flat.end(), p.value->begin(), p.value->end());
    }
    return flat;
}

void load_params(const std::vector<ParamRef>& params, const std::vector<float>& flat) {
    if (flat.size() != param_count(params)) {
        throw std::invalid_argument("load_params: size mismatch");
    }
    std::size_t off = 0;
    for (const ParamRef& p : params) {
        std::copy(flat.begin() + off, flat.begin() + off + p.value->size(), p.value->begin());
        off += p.value->size();
    }
}

}  // namespace mito::nn

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mito/rng.hpp"
#include "mito/tensor.hpp"

namespace mito::nn {

/// View over one learnable parameter buffer and its gradient accumulator.
struct ParamRef {
    std::vector<float>* value;
    std::vector<float>* grad;
};

/// 2-D convolution, square kernel, zero padding. Forward caches the im2col
/// buffer so a backward call may directly follow; layers are not reentrant.
class Conv2d {
  public:
    Conv2d(int in_c, int out_c, int ksize, int stride, int pad);

    void init_he(Rng& rng);
    void fill_bias(float v);

    Tensor forward(const Tensor& x);
    /// Returns dL/dx; accumulates dL/dw and dL/db. Requires a prior forward.
    Tensor backward(const Tensor& dy);

    void collect_params(std::vector<ParamRef>& out);

    static int out_dim(int in, int ksize, int stride, int pad) {
        return (in + 2 * pad - ksize) / stride + 1;
    }

    int in_channels() const { return in_c_; }
    int out_channels() const { return out_c_; }

  private:
    int in_c_, out_c_, k_, stride_, pad_;
    std::vector<float> w_, b_, dw_, db_;
    // forward cache
    std::vector<float> col_;
    int x_h_ = 0, x_w_ = 0, y_h_ = 0, y_w_ = 0;
};

/// ReLU; caches the input sign for the backward pass.
class Relu {
  public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    Tensor x_;
};

/// Mean over the spatial plane per channel: (C,H,W) -> (C,1,1).
class GlobalAvgPool {
  public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    int c_ = 0, h_ = 0, w_ = 0;
};

/// Max over the spatial plane per channel: (C,H,W) -> (C,1,1). The backward
/// pass routes each channel's gradient to its (first) argmax location.
class GlobalMaxPool {
  public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);

  private:
    int c_ = 0, h_ = 0, w_ = 0;
    std::vector<int> argmax_;
};

/// Fully connected (C,1,1) -> (out,1,1).
class Linear {
  public:
    Linear(int in_dim, int out_dim);

    void init_he(Rng& rng);
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void collect_params(std::vector<ParamRef>& out);

  private:
    int in_, out_;
    std::vector<float> w_, b_, dw_, db_;
    Tensor x_;
};

/// Adam with bias correction. State slots are keyed by parameter order, so
/// the same ParamRef list must be passed on every step.
class Adam {
  public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step(const std::vector<ParamRef>& params);

  private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<std::vector<float>> m_, v_;
};

class SgdMomentum {
  public:
    explicit SgdMomentum(double lr, double momentum = 0.9);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void step(const std::vector<ParamRef>& params);

  private:
    double lr_, momentum_;
    std::vector<std::vector<float>> vel_;
};

/// Cosine annealing: lr0 * 0.5 * (1 + cos(pi * t / total)).
double cosine_lr(double lr0, std::int64_t t, std::int64_t total);

void zero_grads(const std::vector<ParamRef>& params);
/// Scales every gradient buffer, e.g. by 1/batch.
void scale_grads(const std::vector<ParamRef>& params, float factor);
std::size_t param_count(const std::vector<ParamRef>& params);

/// Flatten / restore all parameter values, in declaration order. Used by the
/// checkpoint writer.
std::vector<float> dump_params(const std::vector<ParamRef>& params);
void load_params(const std::vector<ParamRef>& params, const std::vector<float>& flat);

}  // namespace mito::nn

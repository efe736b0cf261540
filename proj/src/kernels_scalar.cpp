#include <cmath>

#include "kernels_impl.hpp"

// Scalar reference kernels. These define the semantics the SIMD variants
// must reproduce; keep them simple enough to audit by eye.

namespace mito::kernels::detail {

namespace {

void gemm_acc_scalar(const float* a, const float* b, float* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * k;
        float* crow = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const float av = arow[p];
            const float* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

void gemm_abt_acc_scalar(const float* a, const float* b, float* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * n;
        float* crow = c + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const float* brow = b + static_cast<size_t>(p) * n;
            float acc = 0.0f;
            for (int j = 0; j < n; ++j) {
                acc += arow[j] * brow[j];
            }
            crow[p] += acc;
        }
    }
}

void relu_scalar(const float* x, float* y, int n) {
    for (int i = 0; i < n; ++i) {
        y[i] = x[i] > 0.0f ? x[i] : 0.0f;
    }
}

void relu_backward_scalar(const float* x, const float* dy, float* dx, int n) {
    for (int i = 0; i < n; ++i) {
        dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
    }
}

void axpy_scalar(float alpha, const float* x, float* y, int n) {
    for (int i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

void scale_scalar(float* x, float alpha, int n) {
    for (int i = 0; i < n; ++i) {
        x[i] *= alpha;
    }
}

float dot_scalar(const float* x, const float* y, int n) {
    float acc = 0.0f;
    for (int i = 0; i < n; ++i) {
        acc += x[i] * y[i];
    }
    return acc;
}

float sum_scalar(const float* x, int n) {
    float acc = 0.0f;
    for (int i = 0; i < n; ++i) {
        acc += x[i];
    }
    return acc;
}

void adam_step_scalar(float* p, float* m, float* v, const float* g, int n,
                      float lr, float beta1, float beta2, float eps,
                      float bias1, float bias2) {
    for (int i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
        const float mhat = m[i] / bias1;
        const float vhat = v[i] / bias2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void sgd_momentum_step_scalar(float* p, float* vel, const float* g, int n,
                              float lr, float momentum) {
    for (int i = 0; i < n; ++i) {
        vel[i] = momentum * vel[i] + g[i];
        p[i] -= lr * vel[i];
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table = [] {
        KernelTable t;
        t.gemm_acc = gemm_acc_scalar;
        t.gemm_abt_acc = gemm_abt_acc_scalar;
        t.relu = relu_scalar;
        t.relu_backward = relu_backward_scalar;
        t.axpy = axpy_scalar;
        t.scale = scale_scalar;
        t.dot = dot_scalar;
        t.sum = sum_scalar;
        t.adam_step = adam_step_scalar;
        t.sgd_momentum_step = sgd_momentum_step_scalar;
        return t;
    }();
    return table;
}

}  // namespace mito::kernels::detail

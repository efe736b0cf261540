#pragma once

#include <cstddef>

namespace mito::kernels {

/// Data-parallel inner loops used by the neural-net stack. Every kernel has
/// a scalar reference implementation and, on x86-64, an AVX2/FMA variant.
/// The active variant is chosen at runtime from CPU capabilities and can be
/// overridden with set_isa() or the MITO_KERNEL_ISA environment variable
/// ("scalar" or "avx2"). Scalar and SIMD variants are equivalence-tested.

enum class Isa { Scalar, Avx2 };

Isa active_isa();
bool isa_supported(Isa isa);
/// Override the dispatched variant. Throws std::invalid_argument if the
/// requested ISA is not supported on this machine.
void set_isa(Isa isa);
const char* isa_name(Isa isa);

/// C(m x n) += A(m x k) * B(k x n); row-major, no aliasing.
void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n);

/// C(m x k) += A(m x n) * B(k x n)^T; row-major, no aliasing.
void gemm_abt_acc(const float* a, const float* b, float* c, int m, int n, int k);

/// y[i] = max(x[i], 0)
void relu(const float* x, float* y, int n);

/// dx[i] = x[i] > 0 ? dy[i] : 0
void relu_backward(const float* x, const float* dy, float* dx, int n);

/// y[i] += alpha * x[i]
void axpy(float alpha, const float* x, float* y, int n);

/// x[i] *= alpha
void scale(float* x, float alpha, int n);

float dot(const float* x, const float* y, int n);
float sum(const float* x, int n);

/// In-place Adam update. bias1 = 1 - beta1^t, bias2 = 1 - beta2^t.
void adam_step(float* p, float* m, float* v, const float* g, int n,
               float lr, float beta1, float beta2, float eps,
               float bias1, float bias2);

/// In-place SGD with momentum: vel = momentum*vel + g; p -= lr*vel.
void sgd_momentum_step(float* p, float* vel, const float* g, int n,
                       float lr, float momentum);

}  // namespace mito::kernels

#include "mito/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "kernels_impl.hpp"

namespace mito::kernels {

namespace {

using detail::KernelTable;

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

struct Dispatch {
    const KernelTable* table;
    Isa isa;
};

Dispatch pick_default() {
    const char* env = std::getenv("MITO_KERNEL_ISA");
    if (env != nullptr && std::strcmp(env, "scalar") == 0) {
        return {&detail::scalar_table(), Isa::Scalar};
    }
    const KernelTable* avx2 = detail::avx2_table();
    const bool want_avx2 = env == nullptr || std::strcmp(env, "avx2") == 0;
    if (want_avx2 && avx2 != nullptr && cpu_has_avx2()) {
        return {avx2, Isa::Avx2};
    }
    return {&detail::scalar_table(), Isa::Scalar};
}

std::atomic<const KernelTable*> g_table{nullptr};
std::atomic<Isa> g_isa{Isa::Scalar};

const KernelTable& table() {
    const KernelTable* t = g_table.load(std::memory_order_acquire);
    if (t == nullptr) {
        const Dispatch d = pick_default();
        g_isa.store(d.isa, std::memory_order_relaxed);
        g_table.store(d.table, std::memory_order_release);
        t = d.table;
    }
    return *t;
}

}  // namespace

Isa active_isa() {
    table();
    return g_isa.load(std::memory_order_relaxed);
}

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::Scalar:
            return true;
        case Isa::Avx2:
            return detail::avx2_table() != nullptr && cpu_has_avx2();
    }
    return false;
}

void set_isa(Isa isa) {
    if (!isa_supported(isa)) {
        throw std::invalid_argument("kernels: requested ISA not supported on this machine");
    }
    const KernelTable* t =
        isa == Isa::Avx2 ? detail::avx2_table() : &detail::scalar_table();
    g_isa.store(isa, std::memory_order_relaxed);
    g_table.store(t, std::memory_order_release);
}

const char* isa_name(Isa isa) {
    return isa == Isa::Avx2 ? "avx2" : "scalar";
}

void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
    table().gemm_acc(a, b, c, m, k, n);
}

void gemm_abt_acc(const float* a, const float* b, float* c, int m, int n, int k) {
    table().gemm_abt_acc(a, b, c, m, n, k);
}

void relu(const float* x, float* y, int n) { table().relu(x, y, n); }

void relu_backward(const float* x, const float* dy, float* dx, int n) {
    table().relu_backward(x, dy, dx, n);
}

void axpy(float alpha, const float* x, float* y, int n) { table().axpy(alpha, x, y, n); }

void scale(float* x, float alpha, int n) { table().scale(x, alpha, n); }

float dot(const float* x, const float* y, int n) { return table().dot(x, y, n); }

float sum(const float* x, int n) { return table().sum(x, n); }

void adam_step(float* p, float* m, float* v, const float* g, int n,
               float lr, float beta1, float beta2, float eps,
               float bias1, float bias2) {
    table().adam_step(p, m, v, g, n, lr, beta1, beta2, eps, bias1, bias2);
}

void sgd_momentum_step(float* p, float* vel, const float* g, int n,
                       float lr, float momentum) {
    table().sgd_momentum_step(p, vel, g, n, lr, momentum);
}

}  // namespace mito::kernels

#include "kernels_impl.hpp"

// AVX2/FMA variants. Compiled with -mavx2 -mfma; only reachable when the
// running CPU reports AVX2 (see kernels.cpp). On non-x86 builds this file
// contributes a null table and the dispatcher stays on the scalar path.

#if defined(__AVX2__) && (defined(__x86_64__) || defined(_M_X64))
#define MITO_HAVE_AVX2_BUILD 1
#include <immintrin.h>
#else
#define MITO_HAVE_AVX2_BUILD 0
#endif

#include <cmath>

namespace mito::kernels::detail {

#if MITO_HAVE_AVX2_BUILD

namespace {

inline float hsum256(__m256 v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    lo = _mm_add_ps(lo, _mm_movehl_ps(lo, lo));
    lo = _mm_add_ss(lo, _mm_shuffle_ps(lo, lo, 1));
    return _mm_cvtss_f32(lo);
}

// C += A*B with a 4x24 register block: 12 accumulators, 3 B loads and
// 4 broadcasts per k step.
void gemm_acc_avx2(const float* a, const float* b, float* c, int m, int k, int n) {
    constexpr int MR = 4;
    constexpr int NR = 24;
    int i = 0;
    for (; i + MR <= m; i += MR) {
        const float* a0 = a + static_cast<size_t>(i) * k;
        const float* a1 = a0 + k;
        const float* a2 = a1 + k;
        const float* a3 = a2 + k;
        float* c0 = c + static_cast<size_t>(i) * n;
        float* c1 = c0 + n;
        float* c2 = c1 + n;
        float* c3 = c2 + n;
        int j = 0;
        for (; j + NR <= n; j += NR) {
            __m256 acc00 = _mm256_loadu_ps(c0 + j);
            __m256 acc01 = _mm256_loadu_ps(c0 + j + 8);
            __m256 acc02 = _mm256_loadu_ps(c0 + j + 16);
            __m256 acc10 = _mm256_loadu_ps(c1 + j);
            __m256 acc11 = _mm256_loadu_ps(c1 + j + 8);
            __m256 acc12 = _mm256_loadu_ps(c1 + j + 16);
            __m256 acc20 = _mm256_loadu_ps(c2 + j);
            __m256 acc21 = _mm256_loadu_ps(c2 + j + 8);
            __m256 acc22 = _mm256_loadu_ps(c2 + j + 16);
            __m256 acc30 = _mm256_loadu_ps(c3 + j);
            __m256 acc31 = _mm256_loadu_ps(c3 + j + 8);
            __m256 acc32 = _mm256_loadu_ps(c3 + j + 16);
            for (int p = 0; p < k; ++p) {
                const float* brow = b + static_cast<size_t>(p) * n + j;
                const __m256 b0 = _mm256_loadu_ps(brow);
                const __m256 b1 = _mm256_loadu_ps(brow + 8);
                const __m256 b2 = _mm256_loadu_ps(brow + 16);
                const __m256 av0 = _mm256_broadcast_ss(a0 + p);
                acc00 = _mm256_fmadd_ps(av0, b0, acc00);
                acc01 = _mm256_fmadd_ps(av0, b1, acc01);
                acc02 = _mm256_fmadd_ps(av0, b2, acc02);
                const __m256 av1 = _mm256_broadcast_ss(a1 + p);
                acc10 = _mm256_fmadd_ps(av1, b0, acc10);
                acc11 = _mm256_fmadd_ps(av1, b1, acc11);
                acc12 = _mm256_fmadd_ps(av1, b2, acc12);
                const __m256 av2 = _mm256_broadcast_ss(a2 + p);
                acc20 = _mm256_fmadd_ps(av2, b0, acc20);
                acc21 = _mm256_fmadd_ps(av2, b1, acc21);
                acc22 = _mm256_fmadd_ps(av2, b2, acc22);
                const __m256 av3 = _mm256_broadcast_ss(a3 + p);
                acc30 = _mm256_fmadd_ps(av3, b0, acc30);
                acc31 = _mm256_fmadd_ps(av3, b1, acc31);
                acc32 = _mm256_fmadd_ps(av3, b2, acc32);
            }
            _mm256_storeu_ps(c0 + j, acc00);
            _mm256_storeu_ps(c0 + j + 8, acc01);
            _mm256_storeu_ps(c0 + j + 16, acc02);
            _mm256_storeu_ps(c1 + j, acc10);
            _mm256_storeu_ps(c1 + j + 8, acc11);
            _mm256_storeu_ps(c1 + j + 16, acc12);
            _mm256_storeu_ps(c2 + j, acc20);
            _mm256_storeu_ps(c2 + j + 8, acc21);
            _mm256_storeu_ps(c2 + j + 16, acc22);
            _mm256_storeu_ps(c3 + j, acc30);
            _mm256_storeu_ps(c3 + j + 8, acc31);
            _mm256_storeu_ps(c3 + j + 16, acc32);
        }
        // n remainder: one 8-lane column strip at a time, then scalar tail.
        for (; j + 8 <= n; j += 8) {
            __m256 acc0 = _mm256_loadu_ps(c0 + j);
            __m256 acc1 = _mm256_loadu_ps(c1 + j);
            __m256 acc2 = _mm256_loadu_ps(c2 + j);
            __m256 acc3 = _mm256_loadu_ps(c3 + j);
            for (int p = 0; p < k; ++p) {
                const __m256 bv = _mm256_loadu_ps(b + static_cast<size_t>(p) * n + j);
                acc0 = _mm256_fmadd_ps(_mm256_broadcast_ss(a0 + p), bv, acc0);
                acc1 = _mm256_fmadd_ps(_mm256_broadcast_ss(a1 + p), bv, acc1);
                acc2 = _mm256_fmadd_ps(_mm256_broadcast_ss(a2 + p), bv, acc2);
                acc3 = _mm256_fmadd_ps(_mm256_broadcast_ss(a3 + p), bv, acc3);
            }
            _mm256_storeu_ps(c0 + j, acc0);
            _mm256_storeu_ps(c1 + j, acc1);
            _mm256_storeu_ps(c2 + j, acc2);
            _mm256_storeu_ps(c3 + j, acc3);
        }
        for (; j < n; ++j) {
            float s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
            for (int p = 0; p < k; ++p) {
                const float bv = b[static_cast<size_t>(p) * n + j];
                s0 += a0[p] * bv;
                s1 += a1[p] * bv;
                s2 += a2[p] * bv;
                s3 += a3[p] * bv;
            }
            c0[j] = s0;
            c1[j] = s1;
            c2[j] = s2;
            c3[j] = s3;
        }
    }
    // m remainder: single-row kernel.
    for (; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * k;
        float* crow = c + static_cast<size_t>(i) * n;
        int j = 0;
        for (; j + 8 <= n; j += 8) {
            __m256 acc = _mm256_loadu_ps(crow + j);
            for (int p = 0; p < k; ++p) {
                const __m256 bv = _mm256_loadu_ps(b + static_cast<size_t>(p) * n + j);
                acc = _mm256_fmadd_ps(_mm256_broadcast_ss(arow + p), bv, acc);
            }
            _mm256_storeu_ps(crow + j, acc);
        }
        for (; j < n; ++j) {
            float s = crow[j];
            for (int p = 0; p < k; ++p) {
                s += arow[p] * b[static_cast<size_t>(p) * n + j];
            }
            crow[j] = s;
        }
    }
}

void gemm_abt_acc_avx2(const float* a, const float* b, float* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const float* arow = a + static_cast<size_t>(i) * n;
        float* crow = c + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const float* brow = b + static_cast<size_t>(p) * n;
            __m256 acc = _mm256_setzero_ps();
            int j = 0;
            for (; j + 8 <= n; j += 8) {
                acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + j), _mm256_loadu_ps(brow + j), acc);
            }
            float s = hsum256(acc);
            for (; j < n; ++j) {
                s += arow[j] * brow[j];
            }
            crow[p] += s;
        }
    }
}

void relu_avx2(const float* x, float* y, int n) {
    const __m256 zero = _mm256_setzero_ps();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
    }
    for (; i < n; ++i) {
        y[i] = x[i] > 0.0f ? x[i] : 0.0f;
    }
}

void relu_backward_avx2(const float* x, const float* dy, float* dx, int n) {
    const __m256 zero = _mm256_setzero_ps();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
        _mm256_storeu_ps(dx + i, _mm256_and_ps(_mm256_loadu_ps(dy + i), mask));
    }
    for (; i < n; ++i) {
        dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
    }
}

void axpy_avx2(float alpha, const float* x, float* y, int n) {
    const __m256 av = _mm256_set1_ps(alpha);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 yv = _mm256_loadu_ps(y + i);
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), yv));
    }
    for (; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

void scale_avx2(float* x, float alpha, int n) {
    const __m256 av = _mm256_set1_ps(alpha);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(x + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), av));
    }
    for (; i < n; ++i) {
        x[i] *= alpha;
    }
}

float dot_avx2(const float* x, const float* y, int n) {
    __m256 acc = _mm256_setzero_ps();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
    }
    float s = hsum256(acc);
    for (; i < n; ++i) {
        s += x[i] * y[i];
    }
    return s;
}

float sum_avx2(const float* x, int n) {
    __m256 acc = _mm256_setzero_ps();
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
    }
    float s = hsum256(acc);
    for (; i < n; ++i) {
        s += x[i];
    }
    return s;
}

// Mul/add (no FMA) so lanes mirror the scalar reference op-for-op; any
// remaining drift comes from compiler contraction on the scalar side and
// stays within an ulp.
void adam_step_avx2(float* p, float* m, float* v, const float* g, int n,
                    float lr, float beta1, float beta2, float eps,
                    float bias1, float bias2) {
    const __m256 b1 = _mm256_set1_ps(beta1);
    const __m256 b2 = _mm256_set1_ps(beta2);
    const __m256 ob1 = _mm256_set1_ps(1.0f - beta1);
    const __m256 ob2 = _mm256_set1_ps(1.0f - beta2);
    const __m256 lr_v = _mm256_set1_ps(lr);
    const __m256 eps_v = _mm256_set1_ps(eps);
    const __m256 bias1_v = _mm256_set1_ps(bias1);
    const __m256 bias2_v = _mm256_set1_ps(bias2);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256 gv = _mm256_loadu_ps(g + i);
        __m256 mv = _mm256_loadu_ps(m + i);
        __m256 vv = _mm256_loadu_ps(v + i);
        mv = _mm256_add_ps(_mm256_mul_ps(b1, mv), _mm256_mul_ps(ob1, gv));
        vv = _mm256_add_ps(_mm256_mul_ps(b2, vv), _mm256_mul_ps(ob2, _mm256_mul_ps(gv, gv)));
        _mm256_storeu_ps(m + i, mv);
        _mm256_storeu_ps(v + i, vv);
        const __m256 mhat = _mm256_div_ps(mv, bias1_v);
        const __m256 vhat = _mm256_div_ps(vv, bias2_v);
        const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), eps_v);
        const __m256 upd = _mm256_div_ps(_mm256_mul_ps(lr_v, mhat), denom);
        _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
    }
    for (; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0f - beta2) * g[i] * g[i];
        const float mhat = m[i] / bias1;
        const float vhat = v[i] / bias2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void sgd_momentum_step_avx2(float* p, float* vel, const float* g, int n,
                            float lr, float momentum) {
    const __m256 mom = _mm256_set1_ps(momentum);
    const __m256 lr_v = _mm256_set1_ps(lr);
    int i = 0;
    for (; i + 8 <= n; i += 8) {
        __m256 vv = _mm256_loadu_ps(vel + i);
        vv = _mm256_add_ps(_mm256_mul_ps(mom, vv), _mm256_loadu_ps(g + i));
        _mm256_storeu_ps(vel + i, vv);
        const __m256 pv = _mm256_loadu_ps(p + i);
        _mm256_storeu_ps(p + i, _mm256_sub_ps(pv, _mm256_mul_ps(lr_v, vv)));
    }
    for (; i < n; ++i) {
        vel[i] = momentum * vel[i] + g[i];
        p[i] -= lr * vel[i];
    }
}

}  // namespace

const KernelTable* avx2_table() {
    static const KernelTable table = [] {
        KernelTable t;
        t.gemm_acc = gemm_acc_avx2;
        t.gemm_abt_acc = gemm_abt_acc_avx2;
        t.relu = relu_avx2;
        t.relu_backward = relu_backward_avx2;
        t.axpy = axpy_avx2;
        t.scale = scale_avx2;
        t.dot = dot_avx2;
        t.sum = sum_avx2;
        t.adam_step = adam_step_avx2;
        t.sgd_momentum_step = sgd_momentum_step_avx2;
        return t;
    }();
    return &table;
}

#else

const KernelTable* avx2_table() { return nullptr; }

#endif  // MITO_HAVE_AVX2_BUILD

}  // namespace mito::kernels::detail

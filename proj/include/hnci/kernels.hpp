#pragma once

#include <cstddef>

namespace hnci::kernels {

// Arithmetic inner loops shared by the solvers and the Monte Carlo samplers.
// Each operation has a scalar reference implementation and an AVX2 variant;
// the backend is chosen once at runtime (CPUID), overridable with
// HNCI_SIMD=scalar or force_backend(). The two backends agree to floating
// point reassociation error, which the kernel tests bound explicitly.

enum class Backend { scalar, avx2 };

Backend active_backend();
void force_backend(Backend b);
void reset_backend(); // back to auto-detection

double dot(const double* a, const double* b, std::size_t n);
double nrm2sq(const double* a, std::size_t n);
double sum(const double* a, std::size_t n);

// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);
// a -= b
void sub_inplace(double* a, const double* b, std::size_t n);
// a += c
void add_scalar(double* a, double c, std::size_t n);

// out[i] = sign(x[i]) * max(|x[i]| - thr, 0)
void soft_threshold(const double* x, double thr, double* out, std::size_t n);

// Pairwise difference operator over coefficient vectors: rows ordered
// (0,1),(0,2),...,(0,d-1),(1,2),...,(d-2,d-1). out has d*(d-1)/2 entries.
void pairwise_differences(const double* beta, std::size_t d, double* out);
// Adjoint of the pairwise difference operator: out[i] = sum_{j>i} v_(i,j) - sum_{j<i} v_(j,i).
void pairwise_adjoint(const double* v, std::size_t d, double* out);

inline std::size_t pair_count(std::size_t d) { return d * (d - 1) / 2; }

// Contiguous segment (group) reductions; offsets has d+1 entries.
void segment_means(const double* x, const std::size_t* offsets, std::size_t d, double* means);
void subtract_segment_means(double* x, const std::size_t* offsets, std::size_t d,
                            const double* means);

} // namespace hnci::kernels

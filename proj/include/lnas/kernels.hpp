#pragma once

#include <cstddef>
#include <span>

// Dense matrix kernels behind the tape. Each kernel has a serial reference and
// an OpenMP variant; both accumulate every output entry in ascending inner
// index order, so their results are bit-identical.
namespace lnas::kernels {

enum class Layout { normal, transposed };

// C[m x n] = op(A) * op(B) where op(A) is m x k and op(B) is k x n.
struct GemmDims {
    std::size_t m = 0;
    std::size_t n = 0;
    std::size_t k = 0;
    Layout a = Layout::normal;
    Layout b = Layout::normal;
};

void gemm_serial(const GemmDims& d, std::span<const double> a, std::span<const double> b, std::span<double> c);
void gemm_parallel(const GemmDims& d, std::span<const double> a, std::span<const double> b, std::span<double> c);

// Picks the parallel kernel above a work threshold when not already inside a
// parallel region.
void gemm(const GemmDims& d, std::span<const double> a, std::span<const double> b, std::span<double> c);

// Multiply-add count above which gemm() dispatches to gemm_parallel.
inline constexpr std::size_t parallel_threshold = 1u << 16;

// Caps OpenMP threads. Reads LAMBDA_NAS_THREADS when `limit` <= 0.
void configure_threads(int limit = 0);
int max_threads();

} // namespace lnas::kernels

#include "lnas/kernels.hpp"

#include "lnas/tensor.hpp"

#include <cstdlib>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lnas::kernels {
namespace {

void check_sizes(const GemmDims& d, std::span<const double> a, std::span<const double> b, std::span<double> c)
{
    if (a.size() != d.m * d.k || b.size() != d.k * d.n || c.size() != d.m * d.n)
        throw ShapeError("gemm: buffer sizes do not match dimensions");
}

// Row i of C. Shared by both variants so the accumulation order is identical.
inline void gemm_row(const GemmDims& d, std::size_t i, const double* a, const double* b, double* c)
{
    double* ci = c + i * d.n;
    for (std::size_t j = 0; j < d.n; ++j)
        ci[j] = 0.0;
    for (std::size_t p = 0; p < d.k; ++p) {
        const double aip = d.a == Layout::normal ? a[i * d.k + p] : a[p * d.m + i];
        if (d.b == Layout::normal) {
            const double* bp = b + p * d.n;
            for (std::size_t j = 0; j < d.n; ++j)
                ci[j] += aip * bp[j];
        } else {
            for (std::size_t j = 0; j < d.n; ++j)
                ci[j] += aip * b[j * d.k + p];
        }
    }
}

} // namespace

void gemm_serial(const GemmDims& d, std::span<const double> a, std::span<const double> b, std::span<double> c)
{
    check_sizes(d, a, b, c);
    for (std::size_t i = 0; i < d.m; ++i)
        gemm_row(d, i, a.data(), b.data(), c.data());
}

void gemm_parallel(const GemmDims& d, std::span<const double> a, std::span<const double> b, std::span<double> c)
{
    check_sizes(d, a, b, c);
    const auto rows = static_cast<long long>(d.m);
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < rows; ++i)
        gemm_row(d, static_cast<std::size_t>(i), a.data(), b.data(), c.data());
}

void gemm(const GemmDims& d, std::span<const double> a, std::span<const double> b, std::span<double> c)
{
    bool nested = false;
#ifdef _OPENMP
    nested = omp_in_parallel() != 0;
#endif
    if (!nested && d.m > 1 && d.m * d.n * d.k >= parallel_threshold)
        gemm_parallel(d, a, b, c);
    else
        gemm_serial(d, a, b, c);
}

void configure_threads(int limit)
{
    if (limit <= 0) {
        if (const char* env = std::getenv("LAMBDA_NAS_THREADS")) {
            try {
                limit = std::stoi(env);
            } catch (const std::exception&) {
                limit = 0;
            }
        }
    }
#ifdef _OPENMP
    if (limit > 0)
        omp_set_num_threads(limit);
#endif
}

int max_threads()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace lnas::kernels

#pragma once

// Dense vector kernels behind embedding similarity. Each kernel has a
// portable scalar reference and optional SIMD variants; the variant is picked
// once at startup from the CPU's capabilities (override with the
// STEPFORGE_ISA environment variable: scalar, avx2, neon).

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace stepforge::kernels {

enum class Isa { Scalar, Avx2, Neon };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_norm)(const double* a, std::size_t n);
  void (*scale)(double* a, std::size_t n, double factor);
};

std::string_view isa_name(Isa isa);

/// ISAs compiled into this binary and supported by the running CPU.
std::vector<Isa> available_isas();

/// Throws PreconditionError when `isa` is not available.
const KernelTable& table(Isa isa);

/// The table used by the free functions below.
Isa active_isa();

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
void scale(std::span<double> a, double factor);

/// out[k * cols + j] = dot(rows[k], cols_data[j]); both inputs are row-major
/// with `dim` entries per row.
void similarity_matrix(std::span<const double> rows, std::span<const double> cols,
                       std::size_t dim, std::span<double> out);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double squared_norm(const double* a, std::size_t n);
void scale(double* a, std::size_t n, double factor);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double squared_norm(const double* a, std::size_t n);
void scale(double* a, std::size_t n, double factor);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
double squared_norm(const double* a, std::size_t n);
void scale(double* a, std::size_t n, double factor);
}  // namespace neon
#endif

}  // namespace stepforge::kernels

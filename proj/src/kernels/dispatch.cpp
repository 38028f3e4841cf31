#include <cstdlib>
#include <string>

#include "stepforge/errors.hpp"
#include "stepforge/kernels.hpp"

namespace stepforge::kernels {

namespace {

constexpr KernelTable kScalar{&scalar::dot, &scalar::squared_norm, &scalar::scale};
#if defined(__x86_64__) || defined(_M_X64)
constexpr KernelTable kAvx2{&avx2::dot, &avx2::squared_norm, &avx2::scale};
#endif
#if defined(__aarch64__)
constexpr KernelTable kNeon{&neon::dot, &neon::squared_norm, &neon::scale};
#endif

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if (defined(__x86_64__) || defined(_M_X64)) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(__aarch64__)
      return true;  // mandatory on AArch64
#else
      return false;
#endif
  }
  return false;
}

Isa pick_isa() {
  if (const char* forced = std::getenv("STEPFORGE_ISA")) {
    const std::string want(forced);
    for (const Isa isa : available_isas()) {
      if (isa_name(isa) == want) return isa;
    }
  }
  const auto isas = available_isas();
  return isas.back();
}

const KernelTable& active_table() {
  static const KernelTable& t = table(pick_isa());
  return t;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
    case Isa::Neon:
      return "neon";
  }
  return "unknown";
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out{Isa::Scalar};
  for (const Isa isa : {Isa::Avx2, Isa::Neon}) {
    if (cpu_supports(isa)) out.push_back(isa);
  }
  return out;
}

const KernelTable& table(Isa isa) {
  if (!cpu_supports(isa)) {
    throw PreconditionError("kernel ISA not available: " + std::string(isa_name(isa)));
  }
  switch (isa) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::Avx2:
      return kAvx2;
#endif
#if defined(__aarch64__)
    case Isa::Neon:
      return kNeon;
#endif
    default:
      return kScalar;
  }
}

Isa active_isa() {
  static const Isa isa = pick_isa();
  return isa;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw PreconditionError("dot: dimension mismatch");
  return active_table().dot(a.data(), b.data(), a.size());
}

double squared_norm(std::span<const double> a) {
  return active_table().squared_norm(a.data(), a.size());
}

void scale(std::span<double> a, double factor) { active_table().scale(a.data(), a.size(), factor); }

void similarity_matrix(std::span<const double> rows, std::span<const double> cols,
                       std::size_t dim, std::span<double> out) {
  if (dim == 0 || rows.size() % dim != 0 || cols.size() % dim != 0) {
    throw PreconditionError("similarity_matrix: inputs are not whole rows of the given dimension");
  }
  const std::size_t k_rows = rows.size() / dim;
  const std::size_t j_cols = cols.size() / dim;
  if (out.size() != k_rows * j_cols) {
    throw PreconditionError("similarity_matrix: output has the wrong size");
  }
  const auto& t = active_table();
  for (std::size_t k = 0; k < k_rows; ++k) {
    for (std::size_t j = 0; j < j_cols; ++j) {
      out[k * j_cols + j] = t.dot(rows.data() + k * dim, cols.data() + j * dim, dim);
    }
  }
}

}  // namespace stepforge::kernels

#pragma once

#include <cstddef>
#include <vector>

namespace nnc {

// Squared ℓ2 distances between rows of a (n×d, flat row-major) and rows of
// b (m×d): out[i*m + j] = ‖a_i − b_j‖². Negative round-off is clamped to 0.
// Backed by a blocked matrix product so large scans hit BLAS-grade kernels.
void pairwise_sqdist(const double* a, std::size_t n, const double* b, std::size_t m,
                     std::size_t d, double* out);

// Distances from one query to each row of b (length m written to out).
void row_sqdist(const double* q, const double* b, std::size_t m, std::size_t d, double* out);

}  // namespace nnc

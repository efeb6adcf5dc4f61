#pragma once

#include <cstdint>
#include <vector>

namespace nnc {

// Cross-class ℓ2 distance table: entry(i, j) = ‖class0[i] − class1[j]‖.
// One instance per index; ~n0·n1 doubles, built once with blocked GEMM.
struct GeomCache {
    std::size_t n0 = 0;
    std::size_t n1 = 0;
    std::vector<double> cross;  // row-major n0 × n1
    double min_cross = 0.0;     // d0

    double at(std::size_t i0, std::size_t i1) const { return cross[i0 * n1 + i1]; }

    // distance between same-class point `a` and anchor `b` where `a` is of
    // class `same_class` and the anchor belongs to the other class
    double between(int same_class, std::size_t a, std::size_t b) const {
        return same_class == 0 ? at(a, b) : at(b, a);
    }
};

}  // namespace nnc

#include "linalg.hpp"

#include <Eigen/Core>

#include <algorithm>

namespace nnc {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
}  // namespace

void pairwise_sqdist(const double* a, std::size_t n, const double* b, std::size_t m,
                     std::size_t d, double* out) {
    ConstMap A(a, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    ConstMap B(b, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
    Eigen::VectorXd bn = B.rowwise().squaredNorm();

    // Row blocks keep the GEMM temporary small while the output may be huge.
    const std::size_t block = std::max<std::size_t>(1, (1u << 22) / std::max<std::size_t>(m, 1));
    for (std::size_t r0 = 0; r0 < n; r0 += block) {
        std::size_t rows = std::min(block, n - r0);
        auto Ab = A.middleRows(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(rows));
        MutMap O(out + r0 * m, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m));
        O.noalias() = (-2.0 * Ab) * B.transpose();
        O.colwise() += Ab.rowwise().squaredNorm();
        O.rowwise() += bn.transpose();
        O = O.cwiseMax(0.0);
    }
}

void row_sqdist(const double* q, const double* b, std::size_t m, std::size_t d, double* out) {
    pairwise_sqdist(q, 1, b, m, d, out);
}

}  // namespace nnc

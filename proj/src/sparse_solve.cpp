#include <klu.h>

#include <cmath>
#include <memory>

#include "mrsim/error.hpp"
#include "mrsim/pbvp.hpp"

namespace mrsim {

namespace {

struct KluFactors {
    klu_common common{};
    klu_symbolic* symbolic = nullptr;
    klu_numeric* numeric = nullptr;

    KluFactors() { klu_defaults(&common); }
    KluFactors(const KluFactors&) = delete;
    KluFactors& operator=(const KluFactors&) = delete;
    ~KluFactors() {
        if (numeric) klu_free_numeric(&numeric, &common);
        if (symbolic) klu_free_symbolic(&symbolic, &common);
    }
};

}  // namespace

// KLU with BTF and AMD ordering. Rows are scaled to unit max norm before
// pivoting, so the pivot threshold is relative to each row.
Eigen::VectorXd sparse_solve(const Eigen::SparseMatrix<double>& a, const Eigen::VectorXd& b) {
    if (a.rows() != a.cols() || a.rows() != b.size()) {
        throw Error(ErrorCode::InvalidParameter, "sparse_solve needs a square system matching the right-hand side");
    }
    const int n = static_cast<int>(a.rows());
    if (n == 0) return b;
    Eigen::SparseMatrix<double> ac = a;
    ac.prune(0.0);
    ac.makeCompressed();
    if (ac.nonZeros() == 0) throw Error(ErrorCode::SingularMatrix, "matrix is zero");

    KluFactors f;
    f.common.scale = 2;
    f.common.tol = 1.0;  // plain partial pivoting; diagonal preference loses accuracy on these systems
    f.symbolic = klu_analyze(n, ac.outerIndexPtr(), ac.innerIndexPtr(), &f.common);
    if (!f.symbolic) throw Error(ErrorCode::SingularMatrix, "symbolic analysis failed");
    if (f.symbolic->structural_rank < n) {
        throw Error(ErrorCode::SingularMatrix, "structurally singular matrix (rank " +
                                                   std::to_string(f.symbolic->structural_rank) + " of " +
                                                   std::to_string(n) + ")");
    }
    f.numeric = klu_factor(ac.outerIndexPtr(), ac.innerIndexPtr(), ac.valuePtr(), f.symbolic, &f.common);
    if (!f.numeric || f.common.status == KLU_SINGULAR) {
        throw Error(ErrorCode::SingularMatrix, "zero pivot in LU factorization");
    }
    const double* udiag = static_cast<const double*>(f.numeric->Udiag);
    double pivot = INFINITY;
    for (int k = 0; k < n; ++k) pivot = std::min(pivot, std::abs(udiag[k]));
    if (!(pivot > 1e-14)) throw Error(ErrorCode::SingularMatrix, "numerically zero pivot in LU factorization");

    Eigen::VectorXd x = b;
    if (!klu_solve(f.symbolic, f.numeric, n, 1, x.data(), &f.common) || !x.allFinite()) {
        throw Error(ErrorCode::SingularMatrix, "LU solve failed");
    }
    return x;
}

Eigen::VectorXd sparse_solve(const SparseSystem& system, const Eigen::VectorXd& rhs) {
    return sparse_solve(Eigen::SparseMatrix<double>(system.jacobian), rhs);
}

}  // namespace mrsim

#include "polydec/riccati.hpp"

#include <complex>

#include <Eigen/Eigenvalues>

namespace polydec {

double spectral_abscissa(const Matrix& A) {
    Eigen::EigenSolver<Matrix> es(A, /*computeEigenvectors=*/false);
    return es.eigenvalues().real().maxCoeff();
}

bool is_hurwitz(const Matrix& A, double tol) { return spectral_abscissa(A) < -tol; }

double care_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                     const Matrix& P) {
    const Matrix res =
        A.transpose() * P + P * A - P * B * R.llt().solve(B.transpose() * P) + Q;
    return res.norm();
}

double lyapunov_residual(const Matrix& A, const Matrix& C, const Matrix& P) {
    return (A.transpose() * P + P * A + C).norm();
}

Matrix solve_lyapunov(const Matrix& A, const Matrix& C) {
    const int n = static_cast<int>(A.rows());
    // vec(A^T P + P A) = (I (x) A^T + A^T (x) I) vec(P), columns stacked
    Matrix M = Matrix::Zero(n * n, n * n);
    const Matrix At = A.transpose();
    for (int c = 0; c < n; ++c)
        M.block(c * n, c * n, n, n) += At;
    for (int c = 0; c < n; ++c)
        for (int r = 0; r < n; ++r)
            for (int k = 0; k < n; ++k) M(c * n + k, r * n + k) += At(c, r);
    Eigen::VectorXd rhs(n * n);
    for (int c = 0; c < n; ++c) rhs.segment(c * n, n) = -C.col(c);
    const Eigen::VectorXd p = M.fullPivLu().solve(rhs);
    Matrix P(n, n);
    for (int c = 0; c < n; ++c) P.col(c) = p.segment(c * n, n);
    P = 0.5 * (P + P.transpose()).eval();
    if (!P.allFinite()) throw NumericalError("Lyapunov solve produced non-finite values");
    const double res = lyapunov_residual(A, C, P);
    if (res > 1e-8 * (1.0 + P.norm()))
        throw NumericalError("Lyapunov residual above tolerance: " + std::to_string(res));
    return P;
}

CareResult solve_care(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R) {
    const int n = static_cast<int>(A.rows());
    const Matrix Rinv_Bt = R.llt().solve(B.transpose());
    const Matrix G = B * Rinv_Bt;  // B R^{-1} B^T

    Matrix H(2 * n, 2 * n);
    H << A, -G, -Q, -A.transpose();

    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(H.cast<std::complex<double>>());
    if (es.info() != Eigen::Success)
        throw NumericalError("Hamiltonian eigendecomposition failed");

    std::vector<int> stable;
    for (int i = 0; i < 2 * n; ++i)
        if (es.eigenvalues()[i].real() < 0.0) stable.push_back(i);
    if (static_cast<int>(stable.size()) != n)
        throw UnstabilizableError("Hamiltonian has no n-dimensional stable subspace (pair not stabilizable)");

    Eigen::MatrixXcd X1(n, n), X2(n, n);
    for (int k = 0; k < n; ++k) {
        X1.col(k) = es.eigenvectors().col(stable[k]).head(n);
        X2.col(k) = es.eigenvectors().col(stable[k]).tail(n);
    }
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(X1);
    if (!lu.isInvertible())
        throw UnstabilizableError("stable subspace is not a graph over the state space");
    Matrix P = (X2 * lu.inverse()).real();
    P = 0.5 * (P + P.transpose()).eval();

    // Kleinman-Newton refinement: each step solves a closed-loop Lyapunov
    // equation, driving the residual toward machine precision.
    Matrix K = Rinv_Bt * P;
    for (int it = 0; it < 25; ++it) {
        const Matrix Acl = A - B * K;
        if (!is_hurwitz(Acl, 0.0))
            throw UnstabilizableError("Riccati iterate lost closed-loop stability");
        const Matrix Pn = solve_lyapunov(Acl, Q + K.transpose() * R * K);
        const Matrix Kn = Rinv_Bt * Pn;
        const double step = (Kn - K).norm();
        P = Pn;
        K = Kn;
        if (step <= 1e-13 * (1.0 + K.norm())) break;
    }

    CareResult out{K, P, care_residual(A, B, Q, R, P)};
    if (!is_hurwitz(A - B * K))
        throw UnstabilizableError("closed loop not Hurwitz after Riccati solve");
    if (out.residual > 1e-8 * (1.0 + P.norm()))
        throw NumericalError("CARE residual above tolerance: " + std::to_string(out.residual));
    return out;
}

}  // namespace polydec

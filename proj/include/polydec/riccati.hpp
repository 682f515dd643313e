#pragma once

#include "polydec/types.hpp"

namespace polydec {

struct CareResult {
    Matrix K;  // R^{-1} B^T P
    Matrix P;
    double residual = 0.0;
};

/// Stabilizing solution of A^T P + P A - P B R^{-1} B^T P + Q = 0 via the
/// Hamiltonian stable subspace, refined by Kleinman-Newton iterations.
/// Throws UnstabilizableError when no stabilizing solution exists and
/// NumericalError when the residual gate 1e-8 * (1 + ||P||) cannot be met.
CareResult solve_care(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R);

/// Unique solution of A^T P + P A + C = 0 for Hurwitz A (Kronecker solve).
Matrix solve_lyapunov(const Matrix& A, const Matrix& C);

double care_residual(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                     const Matrix& P);
double lyapunov_residual(const Matrix& A, const Matrix& C, const Matrix& P);

/// Largest real part over the spectrum.
double spectral_abscissa(const Matrix& A);

/// All eigenvalue real parts < -1e-9.
bool is_hurwitz(const Matrix& A, double tol = 1e-9);

}  // namespace polydec

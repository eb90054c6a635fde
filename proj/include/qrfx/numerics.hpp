#pragma once

#include <functional>
#include <vector>

#include "qrfx/matrix.hpp"

namespace qrfx {

// ---------------------------------------------------------------------------
// Derivative-free optimization
// ---------------------------------------------------------------------------

struct NelderMeadOptions {
    int max_iter = 500;
    // Convergence requires the simplex diameter below x_tol AND the spread of
    // vertex values below f_tol. Either test alone misfires: a symmetric
    // straddle of the minimum has zero value spread at finite width, and a
    // flat objective has zero width only in the limit of repeated shrinks.
    double x_tol = 1e-8;
    double f_tol = 1e-12;
};

struct OptResult {
    std::vector<double> argmin;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
};

// Nelder-Mead simplex search with the standard coefficients
// (reflect 1, expand 2, contract 0.5, shrink 0.5).
//
// The initial simplex is x0 plus a per-coordinate perturbation of
// max(0.05*|x0_j|, 0.01). Non-finite objective values away from x0 are treated
// as +inf so the simplex retreats from them; a non-finite value at x0 itself
// throws InvalidInput. The returned vertex is never worse than f(x0).
OptResult nelder_mead(const std::function<double(const std::vector<double>&)>& objective,
                      std::vector<double> x0,
                      const NelderMeadOptions& opts = {});

// ---------------------------------------------------------------------------
// Principal components
// ---------------------------------------------------------------------------

// Scores of the first principal component of the column-centered matrix
// (one score per row). The sign is fixed so the score vector correlates
// positively with the per-row mean across columns; if that correlation is
// exactly zero, the first nonzero score is made positive.
//
// Implemented via the covariance matrix and a cyclic Jacobi eigensolver;
// intended for narrow matrices (tens of columns).
std::vector<double> pca_first_scores(const Matrix& m, bool center = true);

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

struct Quadrature {
    std::vector<double> nodes;   // strictly increasing
    std::vector<double> weights; // positive, sum to 1
};

// Probabilists' Gauss-Hermite rule with K points: nodes and weights that
// integrate polynomials exactly against the standard normal density.
// Computed from the eigen-decomposition of the symmetric tridiagonal Jacobi
// matrix (off-diagonal entries sqrt(k)); weights are the squared first
// eigenvector components, normalized to sum 1, and the node/weight sets are
// symmetrized about 0 to remove rounding asymmetry.
Quadrature gauss_hermite(int k);

// ---------------------------------------------------------------------------
// Tail probabilities and least squares
// ---------------------------------------------------------------------------

// Survival function of the chi-square distribution: P(X > x) for X ~ chi2(df).
// Evaluated through the regularized upper incomplete gamma function Q(df/2, x/2)
// (series expansion below the a+1 crossover, Lentz continued fraction above),
// targeting 1e-12 accuracy.
double chi_square_sf(double x, int df);

// Least-squares coefficients minimizing ||y - X b||_2, via Householder QR.
// Throws SingularDesign when a diagonal pivot of R falls below 1e-10 relative
// to the largest pivot (rank-deficient design).
std::vector<double> ols_solve(const Matrix& X, const std::vector<double>& y);

namespace detail {

// Cyclic Jacobi eigensolver for a symmetric matrix. Returns eigenvalues in
// ascending order; `eigenvectors` holds the matching eigenvectors as columns.
// The input matrix is consumed.
void jacobi_eigen_symmetric(Matrix a, std::vector<double>& eigenvalues, Matrix& eigenvectors);

// Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a).
double regularized_gamma_q(double a, double x);

// Regularized incomplete beta I_x(a, b), used for Student-t quantiles.
double regularized_beta(double a, double b, double x);

} // namespace detail

} // namespace qrfx

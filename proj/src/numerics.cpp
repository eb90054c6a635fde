#include "qrfx/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qrfx/errors.hpp"

namespace qrfx {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

} // namespace

// ---------------------------------------------------------------------------
// Nelder-Mead
// ---------------------------------------------------------------------------

OptResult nelder_mead(const std::function<double(const std::vector<double>&)>& objective,
                      std::vector<double> x0,
                      const NelderMeadOptions& opts) {
    const std::size_t n = x0.size();
    if (n == 0) throw InvalidInput("nelder_mead: empty starting point");
    for (double v : x0)
        if (!std::isfinite(v)) throw InvalidInput("nelder_mead: non-finite starting point");

    // Values away from the start are clamped to +inf so the simplex backs away
    // from invalid regions instead of propagating NaNs through comparisons.
    auto eval = [&](const std::vector<double>& x) {
        const double v = objective(x);
        return std::isfinite(v) ? v : kInf;
    };

    const double f0 = objective(x0);
    if (!std::isfinite(f0)) throw InvalidInput("nelder_mead: objective non-finite at x0");

    std::vector<std::vector<double>> verts(n + 1, x0);
    std::vector<double> fv(n + 1);
    fv[0] = f0;
    for (std::size_t j = 0; j < n; ++j) {
        verts[j + 1][j] += std::max(0.05 * std::fabs(x0[j]), 0.01);
        fv[j + 1] = eval(verts[j + 1]);
    }

    std::vector<std::size_t> order(n + 1);
    auto sort_simplex = [&]() {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
        std::vector<std::vector<double>> v2(n + 1);
        std::vector<double> f2(n + 1);
        for (std::size_t i = 0; i <= n; ++i) {
            v2[i] = std::move(verts[order[i]]);
            f2[i] = fv[order[i]];
        }
        verts = std::move(v2);
        fv = std::move(f2);
    };

    OptResult result;
    result.converged = false;
    int it = 0;
    for (; it < opts.max_iter; ++it) {
        sort_simplex();

        std::vector<double> centroid(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) centroid[j] += verts[i][j];
        for (double& c : centroid) c /= static_cast<double>(n);

        auto blend = [&](double coef) {
            // centroid + coef * (centroid - worst)
            std::vector<double> x(n);
            for (std::size_t j = 0; j < n; ++j)
                x[j] = centroid[j] + coef * (centroid[j] - verts[n][j]);
            return x;
        };

        std::vector<double> xr = blend(1.0);
        const double fr = eval(xr);
        if (fr < fv[0]) {
            std::vector<double> xe = blend(2.0);
            const double fe = eval(xe);
            if (fe < fr) {
                verts[n] = std::move(xe);
                fv[n] = fe;
            } else {
                verts[n] = std::move(xr);
                fv[n] = fr;
            }
        } else if (fr < fv[n - 1]) {
            verts[n] = std::move(xr);
            fv[n] = fr;
        } else {
            bool shrink = false;
            if (fr < fv[n]) {
                std::vector<double> xc = blend(0.5); // outside contraction
                const double fc = eval(xc);
                if (fc <= fr) {
                    verts[n] = std::move(xc);
                    fv[n] = fc;
                } else {
                    shrink = true;
                }
            } else {
                std::vector<double> xc = blend(-0.5); // inside contraction
                const double fc = eval(xc);
                if (fc < fv[n]) {
                    verts[n] = std::move(xc);
                    fv[n] = fc;
                } else {
                    shrink = true;
                }
            }
            if (shrink) {
                for (std::size_t i = 1; i <= n; ++i) {
                    for (std::size_t j = 0; j < n; ++j)
                        verts[i][j] = verts[0][j] + 0.5 * (verts[i][j] - verts[0][j]);
                    fv[i] = eval(verts[i]);
                }
            }
        }

        // Converge only when the simplex is small in x AND flat in f. A
        // value-spread test alone would stop at symmetric straddles of the
        // minimum (two vertices with exactly equal values at finite width);
        // a diameter test alone never fires on flat objectives, where only
        // repeated shrinks collapse the simplex.
        sort_simplex();
        double diameter = 0.0;
        for (std::size_t i = 1; i <= n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                diameter = std::max(diameter, std::fabs(verts[i][j] - verts[0][j]));
        if (diameter < opts.x_tol && fv[n] - fv[0] < opts.f_tol) {
            result.converged = true;
            ++it;
            break;
        }
    }

    sort_simplex();
    result.argmin = verts[0];
    result.value = fv[0];
    result.iterations = it;
    return result;
}

// ---------------------------------------------------------------------------
// Symmetric eigensolver (cyclic Jacobi) and PCA
// ---------------------------------------------------------------------------

namespace detail {

void jacobi_eigen_symmetric(Matrix a, std::vector<double>& eigenvalues, Matrix& eigenvectors) {
    const std::size_t n = a.rows();
    if (n == 0 || a.cols() != n)
        throw InvalidInput("jacobi_eigen_symmetric: matrix must be square and nonempty");

    eigenvectors = Matrix(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) eigenvectors(i, i) = 1.0;

    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0, diag = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            diag += a(p, p) * a(p, p);
            for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        }
        if (std::sqrt(off) <= 1e-15 * std::max(1.0, std::sqrt(diag))) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::fabs(apq) <= 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                double t;
                if (std::fabs(theta) > 1e150) {
                    t = 1.0 / (2.0 * theta);
                } else {
                    t = 1.0 / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                    if (theta < 0.0) t = -t;
                }
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;

                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = a(i, p), aiq = a(i, q);
                    a(i, p) = c * aip - s * aiq;
                    a(i, q) = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double api = a(p, i), aqi = a(q, i);
                    a(p, i) = c * api - s * aqi;
                    a(q, i) = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = eigenvectors(i, p), viq = eigenvectors(i, q);
                    eigenvectors(i, p) = c * vip - s * viq;
                    eigenvectors(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    eigenvalues.resize(n);
    for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a(i, i);

    // Sort eigenpairs ascending by eigenvalue.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return eigenvalues[x] < eigenvalues[y]; });
    std::vector<double> w(n);
    Matrix v(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        w[j] = eigenvalues[order[j]];
        for (std::size_t i = 0; i < n; ++i) v(i, j) = eigenvectors(i, order[j]);
    }
    eigenvalues = std::move(w);
    eigenvectors = std::move(v);
}

} // namespace detail

std::vector<double> pca_first_scores(const Matrix& m, bool center) {
    const std::size_t n = m.rows(), p = m.cols();
    if (n < 2) throw InvalidInput("pca_first_scores: need at least 2 rows");
    if (p == 0) throw InvalidInput("pca_first_scores: no columns");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j)
            if (!std::isfinite(m(i, j)))
                throw InvalidInput("pca_first_scores: non-finite entry");

    Matrix x = m;
    if (center) {
        for (std::size_t j = 0; j < p; ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < n; ++i) mu += x(i, j);
            mu /= static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) x(i, j) -= mu;
        }
    }

    Matrix cov(p, p, 0.0);
    for (std::size_t a = 0; a < p; ++a) {
        for (std::size_t b = a; b < p; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += x(i, a) * x(i, b);
            s /= static_cast<double>(n - 1);
            cov(a, b) = s;
            cov(b, a) = s;
        }
    }

    std::vector<double> evals;
    Matrix evecs;
    detail::jacobi_eigen_symmetric(std::move(cov), evals, evecs);

    // Leading eigenvector is the last column after the ascending sort.
    std::vector<double> scores(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) scores[i] += x(i, j) * evecs(j, p - 1);

    // Sign convention: positive correlation with the per-row mean of the input.
    std::vector<double> row_mean(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < p; ++j) row_mean[i] += m(i, j);
        row_mean[i] /= static_cast<double>(p);
    }
    double s_bar = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(n);
    double m_bar = std::accumulate(row_mean.begin(), row_mean.end(), 0.0) / static_cast<double>(n);
    double cv = 0.0;
    for (std::size_t i = 0; i < n; ++i) cv += (scores[i] - s_bar) * (row_mean[i] - m_bar);

    bool flip = false;
    if (cv < 0.0) {
        flip = true;
    } else if (cv == 0.0) {
        for (double s : scores) {
            if (s != 0.0) {
                flip = s < 0.0;
                break;
            }
        }
    }
    if (flip)
        for (double& s : scores) s = -s;
    return scores;
}

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (probabilists' convention)
// ---------------------------------------------------------------------------

Quadrature gauss_hermite(int k) {
    if (k < 1) throw InvalidInput("gauss_hermite: K must be >= 1");
    const std::size_t n = static_cast<std::size_t>(k);

    if (n == 1) return {{0.0}, {1.0}};

    // Jacobi matrix for the Hermite recurrence with weight exp(-x^2/2):
    // zero diagonal, off-diagonal sqrt(j).
    Matrix jac(n, n, 0.0);
    for (std::size_t j = 0; j + 1 < n; ++j) {
        const double e = std::sqrt(static_cast<double>(j + 1));
        jac(j, j + 1) = e;
        jac(j + 1, j) = e;
    }

    std::vector<double> nodes;
    Matrix vecs;
    detail::jacobi_eigen_symmetric(std::move(jac), nodes, vecs);

    std::vector<double> weights(n);
    for (std::size_t j = 0; j < n; ++j) weights[j] = vecs(0, j) * vecs(0, j);

    // The rule is symmetric about 0; average mirrored pairs to remove the
    // rounding asymmetry the eigensolver leaves behind.
    for (std::size_t i = 0; i < n / 2; ++i) {
        const std::size_t m = n - 1 - i;
        const double mag = 0.5 * (std::fabs(nodes[i]) + std::fabs(nodes[m]));
        nodes[i] = -mag;
        nodes[m] = mag;
        const double w = 0.5 * (weights[i] + weights[m]);
        weights[i] = w;
        weights[m] = w;
    }
    if (n % 2 == 1) nodes[n / 2] = 0.0;

    const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
    for (double& w : weights) w /= wsum;
    return {std::move(nodes), std::move(weights)};
}

// ---------------------------------------------------------------------------
// Incomplete gamma / beta and chi-square tail
// ---------------------------------------------------------------------------

namespace detail {

double regularized_gamma_q(double a, double x) {
    if (a <= 0.0 || x < 0.0) throw InvalidInput("regularized_gamma_q: need a > 0, x >= 0");
    if (x == 0.0) return 1.0;

    const double log_prefactor = -x + a * std::log(x) - std::lgamma(a);
    const int max_iter = 1000;
    const double eps = 1e-15;

    if (x < a + 1.0) {
        // Lower series for P(a,x); Q = 1 - P.
        double ap = a;
        double sum = 1.0 / a;
        double del = sum;
        for (int i = 0; i < max_iter; ++i) {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if (std::fabs(del) < std::fabs(sum) * eps) break;
        }
        return 1.0 - sum * std::exp(log_prefactor);
    }

    // Modified Lentz continued fraction for Q(a,x).
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= max_iter; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < eps) break;
    }
    return std::exp(log_prefactor) * h;
}

namespace {

// Continued fraction for the incomplete beta (modified Lentz).
double beta_cf(double a, double b, double x) {
    const double tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 1000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-15) break;
    }
    return h;
}

} // namespace

double regularized_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) throw InvalidInput("regularized_beta: need a, b > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                               a * std::log(x) + b * std::log1p(-x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * beta_cf(a, b, x) / a;
    return 1.0 - bt * beta_cf(b, a, 1.0 - x) / b;
}

} // namespace detail

double chi_square_sf(double x, int df) {
    if (x < 0.0) throw InvalidInput("chi_square_sf: x must be >= 0");
    if (df < 1) throw InvalidInput("chi_square_sf: df must be >= 1");
    const double q = detail::regularized_gamma_q(0.5 * df, 0.5 * x);
    return std::clamp(q, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Least squares (Householder QR)
// ---------------------------------------------------------------------------

std::vector<double> ols_solve(const Matrix& X, const std::vector<double>& y) {
    const std::size_t n = X.rows(), q = X.cols();
    if (q == 0) throw InvalidInput("ols_solve: design has no columns");
    if (y.size() != n) throw InvalidInput("ols_solve: length mismatch between X and y");
    if (n < q) throw InvalidInput("ols_solve: fewer rows than columns");

    Matrix a = X;
    std::vector<double> z = y;
    std::vector<double> rdiag(q, 0.0);

    for (std::size_t k = 0; k < q; ++k) {
        double nrm = 0.0;
        for (std::size_t i = k; i < n; ++i) nrm = std::hypot(nrm, a(i, k));
        if (nrm == 0.0) {
            rdiag[k] = 0.0;
            continue;
        }
        if (a(k, k) < 0.0) nrm = -nrm;
        for (std::size_t i = k; i < n; ++i) a(i, k) /= nrm;
        a(k, k) += 1.0;

        for (std::size_t j = k + 1; j < q; ++j) {
            double s = 0.0;
            for (std::size_t i = k; i < n; ++i) s += a(i, k) * a(i, j);
            s = -s / a(k, k);
            for (std::size_t i = k; i < n; ++i) a(i, j) += s * a(i, k);
        }
        double s = 0.0;
        for (std::size_t i = k; i < n; ++i) s += a(i, k) * z[i];
        s = -s / a(k, k);
        for (std::size_t i = k; i < n; ++i) z[i] += s * a(i, k);

        rdiag[k] = -nrm;
    }

    double max_pivot = 0.0;
    for (double r : rdiag) max_pivot = std::max(max_pivot, std::fabs(r));
    if (max_pivot == 0.0) throw SingularDesign("ols_solve: zero design matrix");
    for (double r : rdiag)
        if (std::fabs(r) < 1e-10 * max_pivot)
            throw SingularDesign("ols_solve: rank-deficient design");

    std::vector<double> beta(q, 0.0);
    for (std::size_t kk = q; kk-- > 0;) {
        double s = z[kk];
        for (std::size_t j = kk + 1; j < q; ++j) s -= a(kk, j) * beta[j];
        beta[kk] = s / rdiag[kk];
    }
    return beta;
}

} // namespace qrfx

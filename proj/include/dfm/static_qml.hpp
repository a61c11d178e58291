#pragma once

#include "dfm/core.hpp"
#include "dfm/pca.hpp"

#include <vector>

namespace dfm {

struct StaticEmFit {
    StaticParams params;
    std::vector<double> loglik_trace;
    Index iterations = 0;
    bool converged = false;
    Index clamped = 0;  // variance floor activations over all iterations
};

// Gaussian log-likelihood of a complete centered panel under x_t ~ N(0, LL' + diag(sigma2)).
double static_loglik(const Matrix& centered, const StaticParams& params);

// One EM update of (lambda, sigma2) with the factor covariance fixed at the identity.
struct StaticEmStep {
    StaticParams next;
    Matrix cond_mean;  // T x r, E[F_t | x_t]
    Matrix cond_cov;   // r x r, shared over t
    Index clamped = 0;
};

StaticEmStep static_em_step(const Matrix& centered, const StaticParams& params, const Vector& sigma2_floor);

StaticEmFit static_em_fit(const Panel& panel, Index r, const StaticParams& init, Index max_iter = 500,
                          double tol = 1e-6);
StaticEmFit static_em_fit(const Panel& panel, Index r, Index max_iter = 500, double tol = 1e-6);

FactorPath wls_factors(const Panel& centered, const StaticParams& params);
FactorPath lp_factors(const Panel& centered, const StaticParams& params);

struct IterativeFit {
    StaticParams params;
    FactorPath factors;
    std::vector<double> rss_trace;
    // sum_i log sigma2_i after each sweep; non-increasing
    std::vector<double> objective_trace;
    Index iterations = 0;
    bool converged = false;
};

IterativeFit iterative_ols_wls(const Panel& panel, Index r, Index max_iter = 200, double tol = 1e-8);

struct Ar1IdioParams {
    Vector alpha;
    Vector omega2;
};

Ar1IdioParams ar1_idio_fit(const Matrix& residuals);

// a' P b with P the inverse covariance of a stationary AR(1) of length T,
// evaluated from its tridiagonal form.
Matrix ar1_precision_product(const Matrix& a, const Matrix& b, double alpha, double omega2);

Matrix gls_loadings_ar1(const Panel& centered, const Matrix& factors, const Ar1IdioParams& idio);

FactorPath gls_factors_banded(const Panel& centered, const Matrix& lambda, const Matrix& gamma_xi);

// Sample covariance of residuals (T divisor) zeroed beyond |i-j| > half_band, diagonal
// loaded by load_fraction * mean(diag) and shifted further if still not positive definite.
Matrix banded_idio_cov(const Matrix& residuals, Index half_band = 10, double load_fraction = 1e-6);

Vector variance_floor(const Matrix& centered, double fraction = 1e-8);

}  // namespace dfm

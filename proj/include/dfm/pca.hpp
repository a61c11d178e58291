#pragma once

#include "dfm/core.hpp"

namespace dfm {

struct PcOptions {
    // Scale each series to unit variance before extracting components.
    bool standardize = false;
};

struct PcFit {
    StaticParams params;
    FactorPath factors;
    Vector eigvals;
    double explained_variance = 0.0;
};

PcFit pc_fit(const Panel& panel, Index r, const PcOptions& opts = {});

Matrix ols_loadings(const Panel& centered, const Matrix& factors);
FactorPath ols_factors(const Panel& centered, const Matrix& lambda);

// Cross-sectional regression of x_t on the loadings with per-series weights and a
// ridge term added to the weighted Gram matrix. Missing rows are dropped per t.
Matrix weighted_factor_projection(const Panel& centered, const Matrix& lambda, const Vector& weights,
                                  double ridge);

struct SphericalFit {
    Matrix lambda;
    double sigma2_common = 0.0;
};

SphericalFit spherical_qml(const Panel& panel, Index r);

// Leading eigenpairs of the T-divisor covariance of a complete centered matrix,
// switching to the T x T Gram form when N > T.
struct CovSpectrum {
    Vector eigvals;
    Matrix eigvecs;
    double trace = 0.0;
};

CovSpectrum covariance_spectrum(const Matrix& centered, Index r);

}  // namespace dfm

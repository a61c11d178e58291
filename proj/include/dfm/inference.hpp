#pragma once

#include "dfm/core.hpp"

#include <optional>
#include <vector>

namespace dfm {

enum class CsWeights { ols, wls };

Index auto_bandwidth(Index T);

// Bartlett-kernel sandwich for one series' loading estimate.
Matrix hac_loading_cov(const Matrix& factors, const Vector& residuals_i, std::optional<Index> bandwidth = {});

// Cross-sectional HAC for the factor estimate at one date. Own-series terms use the
// squared residual at that date; pairs within half_band use sigma_pairs, Bartlett-weighted
// in |i-j|.
Matrix cs_hac_factor_cov(const Matrix& lambda, const Vector& residuals_t, const Matrix& sigma_pairs,
                         Index half_band, CsWeights weights, const Vector& sigma2);

struct LoadingCov {
    std::vector<Matrix> v_i;
    Index bandwidth = 0;
};

struct FactorCov {
    std::vector<Matrix> w_t;
    Index half_band = 0;
};

struct Bands {
    Matrix center;      // T x N
    Matrix half_width;  // T x N
    double z = 0.0;
};

double normal_quantile(double p);

Bands common_component_bands(const Matrix& lambda, const Matrix& factors, const LoadingCov& vcov,
                             const FactorCov& wcov, double level);

struct BandInputs {
    LoadingCov loading;
    FactorCov factor;
};

// HAC and CS-HAC plug-ins from a fitted (lambda, factors) pair on a complete centered panel.
BandInputs band_covariances(const Matrix& centered, const Matrix& lambda, const Matrix& factors,
                            const Vector& sigma2, CsWeights weights, std::optional<Index> bandwidth,
                            Index half_band);

struct FactorCount {
    Index r_hat = 0;
    std::vector<double> criterion;  // r = 1..r_max
};

FactorCount select_num_factors(const Panel& panel, Index r_max);

}  // namespace dfm

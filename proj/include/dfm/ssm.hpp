#pragma once

#include "dfm/core.hpp"

#include <optional>
#include <vector>

namespace dfm {

enum class FilterVariant { standard, woodbury, automatic };
enum class SmootherVariant { standard, dk };

struct FilterOptions {
    FilterVariant variant = FilterVariant::automatic;
    // P_{0|0} = init_scale * I unless init_cov is set. F_{0|0} = 0.
    double init_scale = 1e3;
    std::optional<Matrix> init_cov;
};

struct FilterOutput {
    Matrix f_pred;  // T x r, F_{t|t-1}
    std::vector<Matrix> p_pred;
    Matrix f_filt;  // T x r, F_{t|t}
    std::vector<Matrix> p_filt;
    double loglik = 0.0;
    Matrix p00;
    FilterVariant variant = FilterVariant::standard;
    double max_asymmetry = 0.0;  // relative, before symmetrization
};

struct SmootherOutput {
    Matrix f_smooth;  // T x r, F_{t|T}
    std::vector<Matrix> p_smooth;
    // c_lag[k] = Cov(F_{k+1}, F_k | all data), k = 0..T-2 (zero-based time)
    std::vector<Matrix> c_lag;
    double loglik = 0.0;
    // Smoothed moments of the pre-sample state F_0.
    Vector f0;
    Matrix p0;
    Matrix c10;  // Cov(F_1, F_0 | all data)
};

FilterOutput kalman_filter(const Panel& centered, const DynamicParams& params, const FilterOptions& opts = {});
FilterOutput kalman_filter(const Panel& centered, const DynamicParams& params, FilterVariant variant);

SmootherOutput kalman_smoother(const FilterOutput& filter, const Panel& centered, const DynamicParams& params,
                               SmootherVariant variant = SmootherVariant::dk);

// Solution of G = A G A' + Q.
Matrix stationary_factor_cov(const Matrix& a, const Matrix& q);

struct DirectOptions {
    // Stationary Var(F_t) when unset; otherwise Var(F_1) = A init_cov A' + HH'.
    std::optional<Matrix> init_cov;
};

SmootherOutput direct_smoother(const Panel& centered, const DynamicParams& params, const DirectOptions& opts = {});

Panel impute_missing_sw(const Panel& panel, Index r, Index max_iter = 500, double tol = 1e-8);

}  // namespace dfm
